//! Line-level parser for apktool-dialect smali.
//!
//! Only directives and the instruction families needed for call-edge and
//! intent-target extraction are decoded; every other body line is kept as
//! [`Op::Other`] with its raw text.

use std::collections::HashSet;

use super::model::{Instruction, MethodRef, Op, SmaliClass, SmaliMethod};
use crate::names::is_descriptor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("no .class directive")]
    MissingClass,
    #[error("malformed .class directive")]
    MalformedClass,
    #[error("second .class directive in one file")]
    DuplicateClassDirective,
    #[error("malformed .super directive")]
    MalformedSuper,
    #[error("no .super directive")]
    MissingSuper,
    #[error("malformed .method directive")]
    MalformedMethod,
    #[error(".method opened inside another method")]
    NestedMethod,
    #[error(".end method without matching .method")]
    UnmatchedEndMethod,
    #[error("method not closed before end of file")]
    UnterminatedMethod,
    #[error("duplicate method signature {0}")]
    DuplicateMethod(String),
    #[error("branch to undefined label :{0}")]
    UndefinedLabel(String),
}

impl ParseError {
    fn new(line: usize, kind: ParseErrorKind) -> Self {
        Self { line, kind }
    }
}

struct OpenMethod {
    start_line: usize,
    start_offset: usize,
    signature: String,
    access_flags: Vec<String>,
    instructions: Vec<Instruction>,
    /// Inside `.packed-switch` / `.sparse-switch` / `.array-data` payloads,
    /// where `:label` lines are references rather than definitions.
    in_payload: bool,
}

/// Parses one complete smali class file.
pub fn parse_smali_file(text: &str) -> Result<SmaliClass, ParseError> {
    let mut name: Option<(String, Vec<String>)> = None;
    let mut super_name: Option<String> = None;
    let mut source_file = None;
    let mut interfaces = Vec::new();
    let mut unmodeled = Vec::new();
    let mut methods: Vec<SmaliMethod> = Vec::new();
    let mut seen_sigs = HashSet::new();
    let mut open: Option<OpenMethod> = None;

    let mut offset = 0usize;
    for (idx, chunk) in text.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let line_start = offset;
        offset += chunk.len();
        let raw = chunk.trim_end_matches('\n').trim_end_matches('\r');
        let code = strip_comment(raw).trim();
        let directive = code.split_whitespace().next().unwrap_or("");

        if let Some(method) = open.as_mut() {
            match directive {
                ".end" if code.split_whitespace().nth(1) == Some("method") => {
                    let method = open.take().expect("open method");
                    let source_text = text[method.start_offset..line_start + raw.len()].to_string();
                    check_labels(&method.instructions)?;
                    let (owner, _) = name.as_ref().expect("class precedes methods");
                    if !seen_sigs.insert(method.signature.clone()) {
                        return Err(ParseError::new(
                            method.start_line,
                            ParseErrorKind::DuplicateMethod(method.signature),
                        ));
                    }
                    methods.push(SmaliMethod {
                        owner: owner.clone(),
                        signature: method.signature,
                        access_flags: method.access_flags,
                        instructions: method.instructions,
                        source_text,
                    });
                }
                ".method" => {
                    return Err(ParseError::new(line_no, ParseErrorKind::NestedMethod));
                }
                _ => {
                    if code.is_empty() && raw.trim().is_empty() {
                        continue;
                    }
                    let op = if method.in_payload {
                        if code.starts_with(".end ") {
                            method.in_payload = false;
                        }
                        Op::Other
                    } else if matches!(
                        directive,
                        ".packed-switch" | ".sparse-switch" | ".array-data"
                    ) {
                        method.in_payload = true;
                        Op::Other
                    } else {
                        parse_instruction(code)
                    };
                    method.instructions.push(Instruction {
                        line_no,
                        op,
                        raw_text: raw.to_string(),
                    });
                }
            }
            continue;
        }

        match directive {
            "" => {
                if !raw.trim().is_empty() {
                    unmodeled.push(raw.to_string());
                }
            }
            ".class" => {
                if name.is_some() {
                    return Err(ParseError::new(line_no, ParseErrorKind::DuplicateClassDirective));
                }
                let mut tokens: Vec<String> =
                    code.split_whitespace().skip(1).map(str::to_string).collect();
                let desc = tokens
                    .pop()
                    .filter(|d| is_descriptor(d))
                    .ok_or_else(|| ParseError::new(line_no, ParseErrorKind::MalformedClass))?;
                name = Some((desc, tokens));
            }
            ".super" => {
                let desc = code
                    .split_whitespace()
                    .nth(1)
                    .filter(|d| is_descriptor(d) && code.split_whitespace().count() == 2)
                    .ok_or_else(|| ParseError::new(line_no, ParseErrorKind::MalformedSuper))?;
                super_name = Some(desc.to_string());
            }
            ".source" => {
                let rest = code[".source".len()..].trim();
                source_file = Some(unquote(rest).unwrap_or_else(|| rest.to_string()));
            }
            ".implements" => {
                if let Some(iface) = code.split_whitespace().nth(1) {
                    interfaces.push(iface.to_string());
                }
            }
            ".method" => {
                if name.is_none() {
                    return Err(ParseError::new(line_no, ParseErrorKind::MissingClass));
                }
                let mut tokens: Vec<String> =
                    code.split_whitespace().skip(1).map(str::to_string).collect();
                let signature = tokens
                    .pop()
                    .filter(|s| valid_signature(s))
                    .ok_or_else(|| ParseError::new(line_no, ParseErrorKind::MalformedMethod))?;
                open = Some(OpenMethod {
                    start_line: line_no,
                    start_offset: line_start,
                    signature,
                    access_flags: tokens,
                    instructions: Vec::new(),
                    in_payload: false,
                });
            }
            ".end" if code.split_whitespace().nth(1) == Some("method") => {
                return Err(ParseError::new(line_no, ParseErrorKind::UnmatchedEndMethod));
            }
            _ => unmodeled.push(raw.to_string()),
        }
    }

    if let Some(method) = open {
        return Err(ParseError::new(method.start_line, ParseErrorKind::UnterminatedMethod));
    }
    let (name, access_flags) =
        name.ok_or_else(|| ParseError::new(1, ParseErrorKind::MissingClass))?;
    let super_name = super_name.ok_or_else(|| ParseError::new(1, ParseErrorKind::MissingSuper))?;
    Ok(SmaliClass {
        name,
        super_name,
        source_file,
        access_flags,
        interfaces,
        methods,
        unmodeled,
    })
}

fn valid_signature(sig: &str) -> bool {
    match (sig.find('('), sig.rfind(')')) {
        (Some(open), Some(close)) => open > 0 && close > open && close + 1 < sig.len(),
        _ => false,
    }
}

fn check_labels(instructions: &[Instruction]) -> Result<(), ParseError> {
    let defined: HashSet<&str> = instructions
        .iter()
        .filter_map(|i| match &i.op {
            Op::Label { name } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    for insn in instructions {
        if let Op::Branch { label, .. } = &insn.op {
            if !defined.contains(label.as_str()) {
                return Err(ParseError::new(
                    insn.line_no,
                    ParseErrorKind::UndefinedLabel(label.clone()),
                ));
            }
        }
    }
    Ok(())
}

/// Removes a trailing `# comment`, ignoring `#` inside string literals.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Decodes one instruction line (already trimmed, comment stripped).
pub(crate) fn parse_instruction(code: &str) -> Op {
    if let Some(label) = code.strip_prefix(':') {
        if !label.is_empty() && !label.contains(char::is_whitespace) {
            return Op::Label {
                name: label.to_string(),
            };
        }
        return Op::Other;
    }
    let (opcode, rest) = match code.split_once(char::is_whitespace) {
        Some((op, rest)) => (op, rest.trim()),
        None => (code, ""),
    };
    decode(opcode, rest).unwrap_or(Op::Other)
}

fn decode(opcode: &str, rest: &str) -> Option<Op> {
    let op = match opcode {
        "invoke-custom" | "invoke-custom/range" => return None,
        o if o.starts_with("invoke-") => {
            let (registers, after) = parse_register_list(rest)?;
            let target_text = after
                .trim_start_matches([',', ' ', '\t'])
                .split(|c: char| c == ',' || c.is_whitespace())
                .next()?;
            let target: MethodRef = target_text.parse().ok()?;
            Op::Invoke {
                opcode: opcode.to_string(),
                registers,
                target,
            }
        }
        "move-result" | "move-result-object" | "move-result-wide" => Op::MoveResult {
            opcode: opcode.to_string(),
            dest: single_register(rest)?,
        },
        "const-string" | "const-string/jumbo" => {
            let (dest, lit) = rest.split_once(',')?;
            Op::ConstString {
                dest: dest.trim().to_string(),
                value: unquote(lit.trim())?,
            }
        }
        "const-class" => {
            let (dest, class) = rest.split_once(',')?;
            Op::ConstClass {
                dest: dest.trim().to_string(),
                class: class.trim().to_string(),
            }
        }
        "new-instance" => {
            let (dest, class) = rest.split_once(',')?;
            Op::NewInstance {
                dest: dest.trim().to_string(),
                class: class.trim().to_string(),
            }
        }
        "goto" | "goto/16" | "goto/32" => Op::Branch {
            opcode: opcode.to_string(),
            registers: Vec::new(),
            label: rest.strip_prefix(':')?.to_string(),
        },
        o if o.starts_with("if-") || o == "packed-switch" || o == "sparse-switch" => {
            let mut parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            let label = parts.pop()?.strip_prefix(':')?.to_string();
            if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
                return None;
            }
            Op::Branch {
                opcode: opcode.to_string(),
                registers: parts.into_iter().map(str::to_string).collect(),
                label,
            }
        }
        "return-void" => Op::Return {
            opcode: opcode.to_string(),
            register: None,
        },
        "return" | "return-object" | "return-wide" => Op::Return {
            opcode: opcode.to_string(),
            register: Some(single_register(rest)?),
        },
        _ => return None,
    };
    Some(op)
}

fn single_register(rest: &str) -> Option<String> {
    let r = rest.trim();
    (!r.is_empty() && !r.contains([',', ' '])).then(|| r.to_string())
}

/// Parses `{v0, v1}` or `{v0 .. v3}` and returns the registers and the
/// remaining text after the closing brace.
fn parse_register_list(rest: &str) -> Option<(Vec<String>, &str)> {
    let inner_start = rest.strip_prefix('{')?;
    let close = inner_start.find('}')?;
    let inner = inner_start[..close].trim();
    let after = &inner_start[close + 1..];
    if inner.is_empty() {
        return Some((Vec::new(), after));
    }
    if let Some((lo, hi)) = inner.split_once("..") {
        let (lo, hi) = (lo.trim(), hi.trim());
        let prefix = lo.chars().next()?;
        if hi.chars().next()? != prefix {
            return None;
        }
        let a: u32 = lo[1..].parse().ok()?;
        let b: u32 = hi[1..].parse().ok()?;
        if b < a {
            return None;
        }
        return Some(((a..=b).map(|n| format!("{prefix}{n}")).collect(), after));
    }
    let regs = inner.split(',').map(|r| r.trim().to_string()).collect();
    Some((regs, after))
}

/// Decodes a smali string literal including its quotes.
pub(crate) fn unquote(lit: &str) -> Option<String> {
    let inner = lit.strip_prefix('"')?.strip_suffix('"')?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            'n' => out.push('\n'),
            't' => out.push('\t'),
            'r' => out.push('\r'),
            'b' => out.push('\u{8}'),
            'f' => out.push('\u{c}'),
            '0' => out.push('\0'),
            'u' => {
                let hex: String = chars.by_ref().take(4).collect();
                out.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?);
            }
            other => out.push(other),
        }
    }
    Some(out)
}
