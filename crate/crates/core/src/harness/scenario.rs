//! Declarative description of a simulated app.
//!
//! ```text
//! [ACTIVITIES]
//! com.x.Main
//! com.x.Backup
//! [MAINS]
//! com.x.Main
//! [TRANSITIONS]
//! com.x.Main<TAB>com.x.Backup
//! [GUARDS]
//! com.x.Backup<TAB>return<TAB>Lcom/x/Storage;->isMissing()Z<TAB>false
//! com.x.Detail<TAB>extra<TAB>note_id<TAB>long<TAB>42L
//! com.x.Debug<TAB>flag<TAB>disabled<TAB>Lcom/x/Flags;->debug()Z<TAB>true
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::names::{normalize_class_name, to_java_name};
use crate::plan::Literal;
use crate::smali::{CodeIndex, MethodRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagKind {
    Disabled,
    Server,
}

impl FlagKind {
    fn as_str(self) -> &'static str {
        match self {
            FlagKind::Disabled => "disabled",
            FlagKind::Server => "server",
        }
    }
}

/// One activation condition of a guarded activity.
#[derive(Debug, Clone, PartialEq)]
pub enum Guard {
    /// `method` must be hooked to return `value`.
    ForcedReturn { method: MethodRef, value: Literal },
    /// The launch intent must carry `key` with `value`; absent keys crash.
    Extra { key: String, value: Literal },
    /// The feature is switched off or waits on a server. Only the optional
    /// bypass hook opens it.
    Flag { kind: FlagKind, bypass: Option<(MethodRef, Literal)> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceScenario {
    pub activities: Vec<String>,
    pub mains: Vec<String>,
    pub transitions: Vec<(String, String)>,
    pub guards: BTreeMap<String, Vec<Guard>>,
}

impl DeviceScenario {
    pub fn is_guarded(&self, activity: &str) -> bool {
        self.guards.get(activity).is_some_and(|g| !g.is_empty())
    }

    pub fn guards_of(&self, activity: &str) -> &[Guard] {
        self.guards.get(activity).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Transition targets from `from` that need no instrumentation.
    pub fn open_successors(&self, from: &str) -> Vec<&str> {
        self.transitions
            .iter()
            .filter(|(s, t)| s == from && !self.is_guarded(t))
            .map(|(_, t)| t.as_str())
            .collect()
    }

    /// Guard methods missing from `index`.
    pub fn unknown_guard_methods(&self, index: &CodeIndex) -> Vec<&MethodRef> {
        self.guards
            .values()
            .flatten()
            .filter_map(|g| match g {
                Guard::ForcedReturn { method, .. } => Some(method),
                Guard::Flag { bypass: Some((method, _)), .. } => Some(method),
                _ => None,
            })
            .filter(|m| index.method(m).is_none())
            .collect()
    }
}

fn parse_method(s: &str) -> Result<MethodRef, String> {
    let mut m: MethodRef = s.parse().map_err(|e| format!("{e}"))?;
    m.owner = normalize_class_name(&m.owner);
    Ok(m)
}

impl FromStr for DeviceScenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut sc = DeviceScenario::default();
        let mut section = "";
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| ScenarioError { line: line_no, message };
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if let Some(name) = line.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = match name {
                    "ACTIVITIES" | "MAINS" | "TRANSITIONS" | "GUARDS" => name,
                    other => return Err(err(format!("unknown section [{other}]"))),
                };
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            match section {
                "ACTIVITIES" => sc.activities.push(normalize_class_name(cols[0])),
                "MAINS" => {
                    let m = normalize_class_name(cols[0]);
                    if !sc.activities.contains(&m) {
                        return Err(err(format!("main {m} is not listed under [ACTIVITIES]")));
                    }
                    sc.mains.push(m);
                }
                "TRANSITIONS" => {
                    let [s, t] = cols[..] else {
                        return Err(err("expected source<TAB>target".into()));
                    };
                    let (s, t) = (normalize_class_name(s), normalize_class_name(t));
                    for a in [&s, &t] {
                        if !sc.activities.contains(a) {
                            return Err(err(format!("{a} is not listed under [ACTIVITIES]")));
                        }
                    }
                    sc.transitions.push((s, t));
                }
                "GUARDS" => {
                    let target = normalize_class_name(cols[0]);
                    if !sc.activities.contains(&target) {
                        return Err(err(format!("guarded {target} is not listed under [ACTIVITIES]")));
                    }
                    let guard = match cols[1..] {
                        ["return", m, v] => Guard::ForcedReturn { method: parse_method(m).map_err(err)?, value: v.parse().map_err(err)? },
                        ["extra", key, ty, v] => {
                            let plan = format!("intent La;\nextra {key} {ty} {v}\n");
                            let parsed = crate::plan::InstrumentationPlan::parse(&plan)
                                .map_err(|e| err(e.message))?;
                            let (key, value) = parsed.intent.expect("parsed").extras.remove(0);
                            Guard::Extra { key, value }
                        }
                        ["flag", kind, ref rest @ ..] => {
                            let kind = match kind {
                                "disabled" => FlagKind::Disabled,
                                "server" => FlagKind::Server,
                                other => return Err(err(format!("unknown flag kind {other:?}"))),
                            };
                            let bypass = match rest {
                                [] => None,
                                [m, v] => Some((parse_method(m).map_err(err)?, v.parse().map_err(err)?)),
                                _ => return Err(err("flag bypass needs a method and a literal".into())),
                            };
                            Guard::Flag { kind, bypass }
                        }
                        _ => return Err(err("expected a return, extra or flag guard".into())),
                    };
                    sc.guards.entry(target).or_default().push(guard);
                }
                _ => return Err(err("content before the first section header".into())),
            }
        }
        let unique: BTreeSet<&String> = sc.activities.iter().collect();
        if unique.len() != sc.activities.len() {
            return Err(ScenarioError { line: 0, message: "duplicate activity".into() });
        }
        Ok(sc)
    }
}

impl fmt::Display for DeviceScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[ACTIVITIES]")?;
        for a in &self.activities {
            writeln!(f, "{}", to_java_name(a))?;
        }
        writeln!(f, "[MAINS]")?;
        for m in &self.mains {
            writeln!(f, "{}", to_java_name(m))?;
        }
        writeln!(f, "[TRANSITIONS]")?;
        for (s, t) in &self.transitions {
            writeln!(f, "{}\t{}", to_java_name(s), to_java_name(t))?;
        }
        writeln!(f, "[GUARDS]")?;
        for (target, guards) in &self.guards {
            for g in guards {
                let t = to_java_name(target);
                match g {
                    Guard::ForcedReturn { method, value } => writeln!(f, "{t}\treturn\t{method}\t{value}")?,
                    Guard::Extra { key, value } => {
                        let ty = match value {
                            Literal::Bool(_) => "boolean",
                            Literal::Int(_) => "int",
                            Literal::Long(_) => "long",
                            Literal::Double(_) => "double",
                            _ => "string",
                        };
                        writeln!(f, "{t}\textra\t{key}\t{ty}\t{value}")?
                    }
                    Guard::Flag { kind, bypass } => {
                        write!(f, "{t}\tflag\t{}", kind.as_str())?;
                        if let Some((m, v)) = bypass {
                            write!(f, "\t{m}\t{v}")?;
                        }
                        writeln!(f)?
                    }
                }
            }
        }
        Ok(())
    }
}
