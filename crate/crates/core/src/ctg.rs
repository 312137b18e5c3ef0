//! Component transition graph.
//!
//! Launch sites are calls to any `startActivity` / `startActivityForResult`
//! overload. Targets are recovered by a backward scan inside the calling
//! method that follows the intent register to a `const-class` (two-argument
//! `Intent` constructor or `setClass`) or a `const-string` (`setClassName`).
//! Anything else stays unresolved.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::names::{is_descriptor, normalize_class_name};
use crate::smali::{CodeIndex, Instruction, MethodRef, Op};

const INTENT: &str = "Landroid/content/Intent;";
const CLASS: &str = "Ljava/lang/Class;";
const STRING: &str = "Ljava/lang/String;";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LaunchApi {
    StartActivity,
    StartActivityForResult,
}

impl LaunchApi {
    fn from_method_name(name: &str) -> Option<Self> {
        match name {
            "startActivity" => Some(LaunchApi::StartActivity),
            "startActivityForResult" => Some(LaunchApi::StartActivityForResult),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LaunchApi::StartActivity => "startActivity",
            LaunchApi::StartActivityForResult => "startActivityForResult",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resolution {
    ConstClass,
    SetClassName,
    Unresolved,
}

impl Resolution {
    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::ConstClass => "ConstClass",
            Resolution::SetClassName => "SetClassName",
            Resolution::Unresolved => "Unresolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaunchSite {
    pub caller: MethodRef,
    pub line_no: usize,
    pub api: LaunchApi,
    pub resolved_target: Option<String>,
    pub resolution: Resolution,
}

/// Every invoke of a `startActivity`/`startActivityForResult` overload, in
/// class, method and line order. Sites start out unresolved.
pub fn find_launch_sites(index: &CodeIndex) -> Vec<LaunchSite> {
    let mut sites = Vec::new();
    for method in index.methods() {
        for insn in &method.instructions {
            if let Op::Invoke { target, .. } = &insn.op {
                if let Some(api) = LaunchApi::from_method_name(target.name()) {
                    sites.push(LaunchSite {
                        caller: method.method_ref(),
                        line_no: insn.line_no,
                        api,
                        resolved_target: None,
                        resolution: Resolution::Unresolved,
                    });
                }
            }
        }
    }
    sites
}

/// Fills in `resolution` / `resolved_target` for one site.
pub fn resolve_intent_target(index: &CodeIndex, mut site: LaunchSite) -> LaunchSite {
    site.resolved_target = None;
    site.resolution = Resolution::Unresolved;
    if let Some((resolution, target)) = scan_for_target(index, &site) {
        site.resolution = resolution;
        site.resolved_target = Some(target);
    }
    site
}

fn scan_for_target(index: &CodeIndex, site: &LaunchSite) -> Option<(Resolution, String)> {
    let insns = &index.method(&site.caller)?.instructions;
    let pos = insns.iter().position(|i| i.line_no == site.line_no)?;
    let Op::Invoke {
        opcode,
        registers,
        target,
    } = &insns[pos].op
    else {
        return None;
    };
    let intent_reg = arg_register(opcode, registers, target, |t| t == INTENT, false)?;

    let mut i = pos;
    while i > 0 {
        i -= 1;
        match &insns[i].op {
            Op::Invoke {
                opcode,
                registers,
                target,
            } if target.owner == INTENT && registers.first() == Some(intent_reg) => {
                match target.name() {
                    "<init>" => {
                        let class_reg = arg_register(opcode, registers, target, |t| t == CLASS, false)?;
                        return const_class_before(insns, i, class_reg)
                            .map(|c| (Resolution::ConstClass, c));
                    }
                    "setClass" => {
                        let class_reg = arg_register(opcode, registers, target, |t| t == CLASS, false)?;
                        return const_class_before(insns, i, class_reg)
                            .map(|c| (Resolution::ConstClass, c));
                    }
                    "setClassName" => {
                        let name_reg = arg_register(opcode, registers, target, |t| t == STRING, true)?;
                        let name = const_string_before(insns, i, name_reg)?;
                        let desc = normalize_class_name(&name);
                        return is_descriptor(&desc).then_some((Resolution::SetClassName, desc));
                    }
                    _ => {}
                }
            }
            Op::MoveResult { dest, .. } if dest == intent_reg => {
                // `move-result-object` after a builder-style Intent call keeps
                // the same object; any other producer ends the trail.
                let chained = previous_code(insns, i).is_some_and(|p| {
                    matches!(&p.op, Op::Invoke { target, registers, .. }
                        if target.owner == INTENT && registers.first() == Some(intent_reg))
                });
                if !chained {
                    return None;
                }
            }
            Op::NewInstance { dest, .. }
            | Op::ConstString { dest, .. }
            | Op::ConstClass { dest, .. }
                if dest == intent_reg =>
            {
                return None;
            }
            _ => {}
        }
    }
    None
}

fn previous_code(insns: &[Instruction], i: usize) -> Option<&Instruction> {
    insns[..i].iter().rev().find(|p| {
        let t = p.raw_text.trim();
        !(t.starts_with('.') || t.starts_with('#'))
    })
}

/// Register carrying the first (or last) parameter whose type satisfies
/// `want`, accounting for the receiver and wide parameters.
fn arg_register<'a>(
    opcode: &str,
    registers: &'a [String],
    target: &MethodRef,
    want: impl Fn(&str) -> bool,
    last: bool,
) -> Option<&'a String> {
    let params = target.param_types();
    let mut slot = if opcode.starts_with("invoke-static") { 0 } else { 1 };
    let mut found = None;
    for p in &params {
        if want(p) {
            found = Some(slot);
            if !last {
                break;
            }
        }
        slot += if p == "J" || p == "D" { 2 } else { 1 };
    }
    registers.get(found?)
}

fn const_class_before(insns: &[Instruction], from: usize, reg: &str) -> Option<String> {
    for insn in insns[..from].iter().rev() {
        match &insn.op {
            Op::ConstClass { dest, class } if dest == reg => {
                return is_descriptor(class).then(|| class.clone());
            }
            Op::ConstString { dest, .. } | Op::MoveResult { dest, .. } | Op::NewInstance { dest, .. }
                if dest == reg =>
            {
                return None;
            }
            _ => {}
        }
    }
    None
}

fn const_string_before(insns: &[Instruction], from: usize, reg: &str) -> Option<String> {
    for insn in insns[..from].iter().rev() {
        match &insn.op {
            Op::ConstString { dest, value } if dest == reg => return Some(value.clone()),
            Op::ConstClass { dest, .. } | Op::MoveResult { dest, .. } | Op::NewInstance { dest, .. }
                if dest == reg =>
            {
                return None;
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CtgEdge {
    pub source_activity: String,
    pub source_method: MethodRef,
    pub target_activity: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ctg {
    pub edges: BTreeSet<CtgEdge>,
    pub unresolved_sites: Vec<LaunchSite>,
}

/// Builds the graph from the index's resolved launch sites.
///
/// The source activity of a site is the nearest declared activity on the
/// calling class's superclass chain. When the calling class has no declared
/// ancestor (an undeclared abstract base activity, for instance), every
/// declared activity that inherits from it becomes a source. Code in a
/// nested class (`Outer$1`) falls back to the enclosing class. Sites with
/// none of these, or whose target is not declared, are kept as unresolved.
pub fn build_ctg(declared: &[String], index: &CodeIndex) -> Ctg {
    let declared_set: HashSet<&str> = declared.iter().map(String::as_str).collect();
    let mut ctg = Ctg::default();
    for site in index.launch_sites() {
        let sources = match &site.resolved_target {
            Some(target) if declared_set.contains(target.as_str()) => {
                attribute_sources(index, declared, &declared_set, &site.caller.owner)
            }
            _ => Vec::new(),
        };
        if sources.is_empty() {
            ctg.unresolved_sites.push(site.clone());
            continue;
        }
        let target = site.resolved_target.clone().expect("checked above");
        for source in sources {
            ctg.edges.insert(CtgEdge {
                source_activity: source,
                source_method: site.caller.clone(),
                target_activity: target.clone(),
            });
        }
    }
    ctg
}

fn attribute_sources(
    index: &CodeIndex,
    declared: &[String],
    declared_set: &HashSet<&str>,
    owner: &str,
) -> Vec<String> {
    if let Some(ancestor) = index
        .superclass_chain(owner)
        .into_iter()
        .find(|c| declared_set.contains(c))
    {
        return vec![ancestor.to_string()];
    }
    let mut heirs: Vec<String> = declared
        .iter()
        .filter(|d| index.superclass_chain(d).contains(&owner))
        .cloned()
        .collect();
    heirs.sort();
    if heirs.is_empty() {
        if let Some((outer, _)) = owner.rsplit_once('$') {
            return attribute_sources(index, declared, declared_set, &format!("{outer};"));
        }
    }
    heirs
}

impl Ctg {
    /// Distinct source activities of `target`.
    pub fn sources(&self, target: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|e| e.target_activity == target)
            .map(|e| e.source_activity.as_str())
            .collect()
    }

    /// (activity, method) pairs launching `target`, sorted.
    pub fn get_launching_activities_and_methods(&self, target: &str) -> Vec<(String, MethodRef)> {
        let target = normalize_class_name(target);
        let pairs: BTreeSet<(String, MethodRef)> = self
            .edges
            .iter()
            .filter(|e| e.target_activity == target)
            .map(|e| (e.source_activity.clone(), e.source_method.clone()))
            .collect();
        pairs.into_iter().collect()
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Ctg {
    /// `source<TAB>method<TAB>target` lines, then one
    /// `UNRESOLVED<TAB>caller<TAB>line<TAB>api<TAB>resolution<TAB>target-or-dash`
    /// line per unresolved site.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# source_activity\tsource_method\ttarget_activity")?;
        for e in &self.edges {
            writeln!(f, "{}\t{}\t{}", e.source_activity, e.source_method, e.target_activity)?;
        }
        for s in &self.unresolved_sites {
            writeln!(
                f,
                "UNRESOLVED\t{}\t{}\t{}\t{}\t{}",
                s.caller,
                s.line_no,
                s.api.as_str(),
                s.resolution.as_str(),
                s.resolved_target.as_deref().unwrap_or("-")
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ctg line {line}: {message}")]
pub struct CtgFormatError {
    pub line: usize,
    pub message: String,
}

impl FromStr for Ctg {
    type Err = CtgFormatError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut ctg = Ctg::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: &str| CtgFormatError {
                line: line_no,
                message: message.to_string(),
            };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == "UNRESOLVED" {
                let [_, caller, line_no_col, api, resolution, target] = cols[..] else {
                    return Err(err("expected 6 columns in UNRESOLVED row"));
                };
                ctg.unresolved_sites.push(LaunchSite {
                    caller: caller.parse().map_err(|_| err("bad caller method"))?,
                    line_no: line_no_col.parse().map_err(|_| err("bad line number"))?,
                    api: match api {
                        "startActivity" => LaunchApi::StartActivity,
                        "startActivityForResult" => LaunchApi::StartActivityForResult,
                        _ => return Err(err("unknown launch api")),
                    },
                    resolution: match resolution {
                        "ConstClass" => Resolution::ConstClass,
                        "SetClassName" => Resolution::SetClassName,
                        "Unresolved" => Resolution::Unresolved,
                        _ => return Err(err("unknown resolution")),
                    },
                    resolved_target: (target != "-").then(|| target.to_string()),
                });
            } else {
                let [source, method, target] = cols[..] else {
                    return Err(err("expected 3 columns in edge row"));
                };
                ctg.edges.insert(CtgEdge {
                    source_activity: normalize_class_name(source),
                    source_method: method.parse().map_err(|_| err("bad source method"))?,
                    target_activity: normalize_class_name(target),
                });
            }
        }
        Ok(ctg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smali::{build_code_index, parse_smali_file};

    fn index_of(sources: &[&str]) -> CodeIndex {
        build_code_index(sources.iter().map(|s| parse_smali_file(s).unwrap()).collect()).unwrap()
    }

    const ACTIVITY_A: &str = r#".class public Lcom/x/A;
.super Landroid/app/Activity;

.method public onClick(Landroid/view/View;)V
    .locals 2
    new-instance v0, Landroid/content/Intent;
    const-class v1, Lcom/x/B;
    invoke-direct {v0, p0, v1}, Landroid/content/Intent;-><init>(Landroid/content/Context;Ljava/lang/Class;)V
    invoke-virtual {p0, v0}, Lcom/x/A;->startActivity(Landroid/content/Intent;)V
    return-void
.end method

.method public open(Landroid/content/Intent;)V
    .locals 0
    invoke-virtual {p0, p1}, Lcom/x/A;->startActivity(Landroid/content/Intent;)V
    return-void
.end method

.method public byName()V
    .locals 2
    new-instance v0, Landroid/content/Intent;
    invoke-direct {v0}, Landroid/content/Intent;-><init>()V
    const-string v1, "com.x.C"
    invoke-virtual {v0, p0, v1}, Landroid/content/Intent;->setClassName(Landroid/content/Context;Ljava/lang/String;)Landroid/content/Intent;
    move-result-object v0
    const/16 v1, 0x7
    invoke-virtual {p0, v0, v1}, Lcom/x/A;->startActivityForResult(Landroid/content/Intent;I)V
    return-void
.end method
"#;

    #[test]
    fn sites_and_resolutions() {
        let index = index_of(&[ACTIVITY_A]);
        let sites = index.launch_sites();
        assert_eq!(sites.len(), 3);
        assert_eq!(sites[0].caller.signature, "onClick(Landroid/view/View;)V");
        assert_eq!(sites[0].resolution, Resolution::ConstClass);
        assert_eq!(sites[0].resolved_target.as_deref(), Some("Lcom/x/B;"));
        assert_eq!(sites[1].caller.signature, "open(Landroid/content/Intent;)V");
        assert_eq!(sites[1].resolution, Resolution::Unresolved);
        assert_eq!(sites[2].caller.signature, "byName()V");
        assert_eq!(sites[2].api, LaunchApi::StartActivityForResult);
        assert_eq!(sites[2].resolution, Resolution::SetClassName);
        assert_eq!(sites[2].resolved_target.as_deref(), Some("Lcom/x/C;"));
    }

    #[test]
    fn no_launches_no_sites() {
        let index = index_of(&[".class La;\n.super Ljava/lang/Object;\n.method f()V\n    return-void\n.end method\n"]);
        assert!(find_launch_sites(&index).is_empty());
    }

    #[test]
    fn wide_params_shift_registers() {
        let src = r#".class Lcom/x/W;
.super Landroid/app/Activity;
.method static go(Landroid/app/Activity;)V
    .locals 4
    new-instance v0, Landroid/content/Intent;
    const-class v3, Lcom/x/B;
    invoke-direct {v0, p0, v3}, Landroid/content/Intent;-><init>(Landroid/content/Context;Ljava/lang/Class;)V
    const-wide v1, 0x0
    invoke-static {v1, v2, p0, v0}, Lcom/x/Util;->startActivity(JLandroid/app/Activity;Landroid/content/Intent;)V
    return-void
.end method
"#;
        let index = index_of(&[src]);
        assert_eq!(index.launch_sites()[0].resolved_target.as_deref(), Some("Lcom/x/B;"));
    }

    #[test]
    fn ctg_edges_and_text_round_trip() {
        let index = index_of(&[ACTIVITY_A]);
        let declared: Vec<String> = ["Lcom/x/A;", "Lcom/x/B;", "Lcom/x/C;"].map(String::from).to_vec();
        let ctg = build_ctg(&declared, &index);
        assert_eq!(ctg.edges.len(), 2);
        assert_eq!(ctg.unresolved_sites.len(), 1);
        assert_eq!(
            ctg.get_launching_activities_and_methods("com.x.B"),
            vec![("Lcom/x/A;".to_string(), MethodRef::new("Lcom/x/A;", "onClick(Landroid/view/View;)V"))]
        );
        assert!(ctg.get_launching_activities_and_methods("Lcom/x/A;").is_empty());
        let reparsed: Ctg = ctg.to_text().parse().unwrap();
        assert_eq!(reparsed, ctg);
    }

    #[test]
    fn undeclared_target_is_unresolved() {
        let index = index_of(&[ACTIVITY_A]);
        let declared: Vec<String> = vec!["Lcom/x/A;".into()];
        let ctg = build_ctg(&declared, &index);
        assert!(ctg.edges.is_empty());
        assert_eq!(ctg.unresolved_sites.len(), 3);
    }

    #[test]
    fn malformed_ctg_text() {
        assert_eq!("a\tb\n".parse::<Ctg>().unwrap_err().line, 1);
        assert!("UNRESOLVED\tLa;->f()V\tx\tstartActivity\tUnresolved\t-\n".parse::<Ctg>().is_err());
    }

    fn launcher(class: &str, super_: &str, target: &str) -> String {
        format!(
            ".class {class}\n.super {super_}\n.method public go()V\n    .locals 2\n    new-instance v0, Landroid/content/Intent;\n    const-class v1, {target}\n    invoke-direct {{v0, p0, v1}}, Landroid/content/Intent;-><init>(Landroid/content/Context;Ljava/lang/Class;)V\n    invoke-virtual {{p0, v0}}, {class}->startActivity(Landroid/content/Intent;)V\n    return-void\n.end method\n"
        )
    }

    #[test]
    fn attribution_through_inheritance_and_nesting() {
        let base = launcher("Lcom/x/Base;", "Landroid/app/Activity;", "Lcom/x/Help;");
        let nested = launcher("Lcom/x/Main$1;", "Ljava/lang/Object;", "Lcom/x/Help;");
        let sub = ".class Lcom/x/Sub;\n.super Lcom/x/Base;\n";
        let sub2 = ".class Lcom/x/Sub2;\n.super Lcom/x/Sub;\n";
        let index = index_of(&[&base, &nested, sub, sub2]);
        let declared: Vec<String> = ["Lcom/x/Sub;", "Lcom/x/Sub2;", "Lcom/x/Main;", "Lcom/x/Help;"].map(String::from).to_vec();
        let ctg = build_ctg(&declared, &index);
        assert_eq!(ctg.sources("Lcom/x/Help;"), ["Lcom/x/Main;", "Lcom/x/Sub;", "Lcom/x/Sub2;"].into());
        // Declaring the base itself takes precedence over its heirs.
        let mut with_base = declared.clone();
        with_base.push("Lcom/x/Base;".into());
        let ctg = build_ctg(&with_base, &index);
        assert_eq!(ctg.sources("Lcom/x/Help;"), ["Lcom/x/Base;", "Lcom/x/Main;"].into());
    }
}
