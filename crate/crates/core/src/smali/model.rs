use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Reference to a method by owning class descriptor and full signature.
///
/// The owner may name a class outside the index (framework and library
/// methods are referenced but never defined in the app's smali).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodRef {
    pub owner: String,
    pub signature: String,
}

impl MethodRef {
    pub fn new(owner: impl Into<String>, signature: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            signature: signature.into(),
        }
    }

    /// Method name without the parameter list, e.g. `onCreate`.
    pub fn name(&self) -> &str {
        method_name(&self.signature)
    }

    /// Parameter type descriptors in declaration order.
    pub fn param_types(&self) -> Vec<String> {
        split_signature(&self.signature)
            .map(|(params, _)| split_type_list(params))
            .unwrap_or_default()
    }

    /// Return type descriptor, e.g. `Z` or `Landroid/content/Intent;`.
    pub fn return_type(&self) -> Option<&str> {
        split_signature(&self.signature).map(|(_, ret)| ret)
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.owner, self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a method reference: {0:?}")]
pub struct MethodRefParseError(pub String);

impl FromStr for MethodRef {
    type Err = MethodRefParseError;

    /// Parses `Lcom/foo/Bar;->name(args)ret`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (owner, sig) = s
            .split_once("->")
            .ok_or_else(|| MethodRefParseError(s.to_string()))?;
        if owner.is_empty() || !sig.contains('(') || !sig.contains(')') {
            return Err(MethodRefParseError(s.to_string()));
        }
        Ok(MethodRef::new(owner, sig))
    }
}

pub(crate) fn method_name(signature: &str) -> &str {
    signature.split('(').next().unwrap_or(signature)
}

/// Splits `name(params)ret` into `(params, ret)`.
pub(crate) fn split_signature(signature: &str) -> Option<(&str, &str)> {
    let open = signature.find('(')?;
    let close = signature[open..].find(')')? + open;
    Some((&signature[open + 1..close], &signature[close + 1..]))
}

/// Splits a concatenated descriptor list such as `ILjava/lang/String;[B`.
pub(crate) fn split_type_list(list: &str) -> Vec<String> {
    let bytes = list.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        while i < bytes.len() && bytes[i] == b'[' {
            i += 1;
        }
        if i >= bytes.len() {
            break;
        }
        if bytes[i] == b'L' {
            match list[i..].find(';') {
                Some(end) => i += end + 1,
                None => i = bytes.len(),
            }
        } else {
            i += 1;
        }
        out.push(list[start..i].to_string());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionKind {
    Invoke,
    MoveResult,
    Const,
    Branch,
    Return,
    NewInstance,
    Label,
    Other,
}

impl InstructionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstructionKind::Invoke => "Invoke",
            InstructionKind::MoveResult => "MoveResult",
            InstructionKind::Const => "Const",
            InstructionKind::Branch => "Branch",
            InstructionKind::Return => "Return",
            InstructionKind::NewInstance => "NewInstance",
            InstructionKind::Label => "Label",
            InstructionKind::Other => "Other",
        }
    }
}

impl FromStr for InstructionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Invoke" => InstructionKind::Invoke,
            "MoveResult" => InstructionKind::MoveResult,
            "Const" => InstructionKind::Const,
            "Branch" => InstructionKind::Branch,
            "Return" => InstructionKind::Return,
            "NewInstance" => InstructionKind::NewInstance,
            "Label" => InstructionKind::Label,
            "Other" => InstructionKind::Other,
            other => return Err(format!("unknown instruction kind {other:?}")),
        })
    }
}

/// Structured payload of one body line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Invoke {
        opcode: String,
        registers: Vec<String>,
        target: MethodRef,
    },
    MoveResult {
        opcode: String,
        dest: String,
    },
    ConstString {
        dest: String,
        value: String,
    },
    ConstClass {
        dest: String,
        class: String,
    },
    Branch {
        opcode: String,
        registers: Vec<String>,
        label: String,
    },
    Return {
        opcode: String,
        register: Option<String>,
    },
    NewInstance {
        dest: String,
        class: String,
    },
    Label {
        name: String,
    },
    Other,
}

impl Op {
    pub fn kind(&self) -> InstructionKind {
        match self {
            Op::Invoke { .. } => InstructionKind::Invoke,
            Op::MoveResult { .. } => InstructionKind::MoveResult,
            Op::ConstString { .. } | Op::ConstClass { .. } => InstructionKind::Const,
            Op::Branch { .. } => InstructionKind::Branch,
            Op::Return { .. } => InstructionKind::Return,
            Op::NewInstance { .. } => InstructionKind::NewInstance,
            Op::Label { .. } => InstructionKind::Label,
            Op::Other => InstructionKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    /// 1-based line in the source file.
    pub line_no: usize,
    pub op: Op,
    pub raw_text: String,
}

impl Instruction {
    pub fn kind(&self) -> InstructionKind {
        self.op.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmaliMethod {
    pub owner: String,
    pub signature: String,
    pub access_flags: Vec<String>,
    pub instructions: Vec<Instruction>,
    /// Exact source text from the `.method` line through `.end method`.
    pub source_text: String,
}

impl SmaliMethod {
    pub fn method_ref(&self) -> MethodRef {
        MethodRef::new(self.owner.clone(), self.signature.clone())
    }

    pub fn name(&self) -> &str {
        method_name(&self.signature)
    }

    pub fn is_static(&self) -> bool {
        self.access_flags.iter().any(|f| f == "static")
    }

    /// Re-emits the body from instruction raw text, bracketed by the
    /// directive lines. Blank lines are not preserved.
    pub fn emit(&self) -> String {
        let mut lines = self.source_text.lines();
        let header = lines.next().unwrap_or_default();
        let footer = self.source_text.lines().last().unwrap_or_default();
        let mut out = String::with_capacity(self.source_text.len());
        out.push_str(header);
        out.push('\n');
        for insn in &self.instructions {
            out.push_str(&insn.raw_text);
            out.push('\n');
        }
        out.push_str(footer);
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmaliClass {
    pub name: String,
    pub super_name: String,
    pub source_file: Option<String>,
    pub access_flags: Vec<String>,
    pub interfaces: Vec<String>,
    pub methods: Vec<SmaliMethod>,
    /// Class-level lines that are kept but not modeled (fields, annotations).
    pub unmodeled: Vec<String>,
}

impl SmaliClass {
    pub fn method(&self, signature: &str) -> Option<&SmaliMethod> {
        self.methods.iter().find(|m| m.signature == signature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ref_parts() {
        let r: MethodRef = "Lcom/a/B;->go(ILjava/lang/String;[J[[Lcom/x/Y;Z)Landroid/content/Intent;"
            .parse()
            .unwrap();
        assert_eq!(r.owner, "Lcom/a/B;");
        assert_eq!(r.name(), "go");
        assert_eq!(
            r.param_types(),
            vec!["I", "Ljava/lang/String;", "[J", "[[Lcom/x/Y;", "Z"]
        );
        assert_eq!(r.return_type(), Some("Landroid/content/Intent;"));
        assert_eq!(r.to_string().parse::<MethodRef>().unwrap(), r);
    }

    #[test]
    fn method_ref_rejects_garbage() {
        assert!("nothing".parse::<MethodRef>().is_err());
        assert!("->f()V".parse::<MethodRef>().is_err());
        assert!("La;->f".parse::<MethodRef>().is_err());
    }
}
