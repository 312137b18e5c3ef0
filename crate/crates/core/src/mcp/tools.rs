use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use crate::names::normalize_class_name;
use crate::package::AppPackage;
use crate::smali::MethodRef;

pub const DEFAULT_RESULT_CAP: usize = 64 * 1024;

pub type ToolArgs = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolParam {
    pub name: &'static str,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolDescriptor {
    pub name: &'static str,
    pub params: Vec<ToolParam>,
    pub description: &'static str,
}

impl ToolDescriptor {
    /// MCP `tools/list` entry with a JSON Schema for the string params.
    pub fn to_json(&self) -> Value {
        let properties: serde_json::Map<String, Value> = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.to_string(),
                    json!({"type": "string", "description": p.description}),
                )
            })
            .collect();
        let required: Vec<&str> = self.params.iter().map(|p| p.name).collect();
        json!({
            "name": self.name,
            "description": self.description,
            "inputSchema": {"type": "object", "properties": properties, "required": required},
        })
    }
}

const CLASS_NAME: ToolParam = ToolParam {
    name: "class_name",
    description: "Class name, dotted (com.foo.Bar) or descriptor (Lcom/foo/Bar;)",
};
const METHOD_SIG: ToolParam = ToolParam {
    name: "method_sig",
    description: "Method signature such as onCreate(Landroid/os/Bundle;)V, or a bare method name",
};
const TARGET_ACTIVITY: ToolParam = ToolParam {
    name: "target_activity",
    description: "Activity class name",
};

/// The nine served tools. The launcher lookup appears twice, once for the
/// smali view and once for the CTG view; both resolve to the same handler.
pub fn tool_descriptors() -> Vec<ToolDescriptor> {
    vec![
        ToolDescriptor {
            name: "get_activities",
            params: vec![],
            description: "List every activity declared in the app manifest.",
        },
        ToolDescriptor {
            name: "check_activity_exists",
            params: vec![CLASS_NAME],
            description: "Tell whether an activity is declared in the app.",
        },
        ToolDescriptor {
            name: "check_class_exists",
            params: vec![CLASS_NAME],
            description: "Tell whether a class is present in the decompiled smali code.",
        },
        ToolDescriptor {
            name: "get_methods_inside_class",
            params: vec![CLASS_NAME],
            description: "List the signatures of all methods defined in a class.",
        },
        ToolDescriptor {
            name: "get_method_body",
            params: vec![CLASS_NAME, METHOD_SIG],
            description: "Return the smali source of a method.",
        },
        ToolDescriptor {
            name: "get_methods_invoked",
            params: vec![CLASS_NAME, METHOD_SIG],
            description: "List the methods a method calls (forward traversal).",
        },
        ToolDescriptor {
            name: "get_caller_methods",
            params: vec![CLASS_NAME, METHOD_SIG],
            description: "List the methods that call a method (backward traversal).",
        },
        ToolDescriptor {
            name: "get_launching_activities_and_methods",
            params: vec![TARGET_ACTIVITY],
            description: "List activity and method pairs whose smali code starts the target activity.",
        },
        ToolDescriptor {
            name: "get_launching_activities_and_methods",
            params: vec![TARGET_ACTIVITY],
            description: "List source activities and methods that reach the target activity in the component transition graph.",
        },
    ]
}

/// Protocol-level failures: the call never reached a handler.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("tool {tool}: missing required argument {arg:?}")]
    MissingArgument { tool: String, arg: String },
}

/// Handler result. `is_error` marks lookups that failed (unknown class or
/// method); the text explains the failure to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolOutput {
    pub text: String,
    pub is_error: bool,
}

impl ToolOutput {
    fn ok(text: String) -> Self {
        ToolOutput { text, is_error: false }
    }

    fn err(text: String) -> Self {
        ToolOutput { text, is_error: true }
    }
}

/// Cuts `text` to at most `cap` bytes on a char boundary and appends a
/// marker stating how much was dropped.
pub fn truncate_result(text: String, cap: usize) -> String {
    if text.len() <= cap {
        return text;
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n[truncated: showing {} of {} bytes]", &text[..end], end, text.len())
}

/// Read-only dispatcher over a package.
#[derive(Debug, Clone, Copy)]
pub struct Toolbox<'a> {
    pkg: &'a AppPackage,
    result_cap: usize,
}

impl<'a> Toolbox<'a> {
    pub fn new(pkg: &'a AppPackage) -> Self {
        Toolbox { pkg, result_cap: DEFAULT_RESULT_CAP }
    }

    pub fn with_result_cap(mut self, cap: usize) -> Self {
        self.result_cap = cap;
        self
    }

    pub fn package(&self) -> &'a AppPackage {
        self.pkg
    }

    pub fn call(&self, name: &str, args: &ToolArgs) -> Result<ToolOutput, ToolError> {
        let arg = |names: &[&str]| -> Result<&str, ToolError> {
            names
                .iter()
                .find_map(|n| args.get(*n))
                .map(|s| s.as_str())
                .ok_or_else(|| ToolError::MissingArgument {
                    tool: name.to_string(),
                    arg: names[0].to_string(),
                })
        };
        let index = &self.pkg.index;
        let out = match name {
            "get_activities" => ToolOutput::ok(lines_or(
                self.pkg.get_activities().iter().map(String::as_str),
                "(no activities declared)",
            )),
            "check_activity_exists" => {
                let check = self
                    .pkg
                    .check_activity_exists(arg(&["class_name", "activity_name"])?);
                let mut text = check.declared.to_string();
                if check.missing_smali {
                    text.push_str("\nwarning: declared in the manifest but no smali class was found");
                }
                ToolOutput::ok(text)
            }
            "check_class_exists" => {
                ToolOutput::ok(index.check_class_exists(arg(&["class_name"])?).to_string())
            }
            "get_methods_inside_class" => {
                let class = arg(&["class_name"])?;
                match index.get_methods_inside_class(class) {
                    Some(sigs) => ToolOutput::ok(lines_or(sigs.into_iter(), "(class defines no methods)")),
                    None => class_not_found(class),
                }
            }
            "get_method_body" | "get_methods_invoked" | "get_caller_methods" => {
                let class = arg(&["class_name"])?;
                let sig = arg(&["method_sig"])?;
                if !index.check_class_exists(class) {
                    return Ok(self.cap(class_not_found(class)));
                }
                let methods = index.find_methods(class, sig);
                if methods.is_empty() {
                    return Ok(self.cap(ToolOutput::err(format!(
                        "method not found: {sig} in {}",
                        normalize_class_name(class)
                    ))));
                }
                let refs: Vec<MethodRef> = methods.iter().map(|m| m.method_ref()).collect();
                ToolOutput::ok(match name {
                    "get_method_body" => methods
                        .iter()
                        .map(|m| m.source_text.trim_end().to_string())
                        .collect::<Vec<_>>()
                        .join("\n\n"),
                    "get_methods_invoked" => per_method(&refs, |r| {
                        lines_or(
                            index.get_methods_invoked(r).unwrap_or_default().iter().map(ToString::to_string),
                            "(no methods invoked)",
                        )
                    }),
                    _ => per_method(&refs, |r| {
                        lines_or(
                            index.get_caller_methods(r).iter().map(ToString::to_string),
                            "(no callers found)",
                        )
                    }),
                })
            }
            "get_launching_activities_and_methods" => {
                let target = arg(&["target_activity", "activity_name", "class_name"])?;
                let pairs = self.pkg.ctg.get_launching_activities_and_methods(target);
                ToolOutput::ok(lines_or(
                    pairs.iter().map(|(a, m)| format!("{a}\t{m}")),
                    "(no launching activities found)",
                ))
            }
            other => return Err(ToolError::UnknownTool(other.to_string())),
        };
        Ok(self.cap(out))
    }

    fn cap(&self, out: ToolOutput) -> ToolOutput {
        ToolOutput { text: truncate_result(out.text, self.result_cap), ..out }
    }
}

fn class_not_found(class: &str) -> ToolOutput {
    ToolOutput::err(format!("class not found: {}", normalize_class_name(class)))
}

fn lines_or<I, S>(items: I, empty: &str) -> String
where
    I: Iterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for item in items {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(item.as_ref());
    }
    if out.is_empty() {
        empty.to_string()
    } else {
        out
    }
}

/// One block per overload; a single match is rendered without a header.
fn per_method(refs: &[MethodRef], render: impl Fn(&MethodRef) -> String) -> String {
    if let [only] = refs {
        return render(only);
    }
    let mut out = String::new();
    for r in refs {
        let _ = write!(out, "{}## {r}\n{}", if out.is_empty() { "" } else { "\n\n" }, render(r));
    }
    out
}
