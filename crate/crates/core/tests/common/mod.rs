//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use reachkit::agent::ReplayClient;
use reachkit::ctg::{Ctg, CtgEdge};
use reachkit::pipeline::{DeviceConfig, ModelConfig, PipelineConfig};
use reachkit::smali::{InstructionKind, MethodRef};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// `line<TAB>Kind` annotations.
pub fn read_kinds(path: &Path) -> BTreeMap<usize, InstructionKind> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (n, k) = l.split_once('\t').expect("line<TAB>kind");
            (n.parse().unwrap(), k.parse().unwrap())
        })
        .collect()
}

/// Smali fixture files with their annotation files, sorted.
pub fn corpus_files() -> Vec<(PathBuf, PathBuf)> {
    let mut out = Vec::new();
    for dir in ["smali/sdcard_guard", "smali/corpus"] {
        for entry in std::fs::read_dir(fixtures().join(dir)).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "smali") {
                let kinds = p.with_extension("kinds");
                out.push((p, kinds));
            }
        }
    }
    out.sort();
    out
}

/// Random package: smali sources of up to `max_classes` classes whose
/// methods invoke each other and a few framework methods.
pub fn random_package_sources(rng: &mut impl Rng, max_classes: usize) -> Vec<String> {
    let n = rng.gen_range(1..=max_classes);
    let names: Vec<String> = (0..n).map(|i| format!("Lgen/p{}/C{i};", i % 3)).collect();
    let sigs = ["a()V", "b(I)V", "c(Ljava/lang/String;)Z", "d(JI)J", "a(I)V"];
    let per_class: Vec<Vec<&str>> = names
        .iter()
        .map(|_| {
            let mut s = sigs.to_vec();
            s.shuffle(rng);
            s.truncate(rng.gen_range(0..=sigs.len()));
            s
        })
        .collect();
    let all: Vec<(String, &str)> = names
        .iter()
        .zip(&per_class)
        .flat_map(|(c, ss)| ss.iter().map(move |s| (c.clone(), *s)))
        .collect();
    let framework = ["Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I", "Ljava/lang/Object;->hashCode()I"];
    names
        .iter()
        .zip(&per_class)
        .map(|(name, ss)| {
            let mut text = format!(".class public {name}\n.super Ljava/lang/Object;\n\n");
            for sig in ss {
                let _ = writeln!(text, ".method public {sig}\n    .locals 2");
                for _ in 0..rng.gen_range(0..6) {
                    if !all.is_empty() && rng.gen_bool(0.85) {
                        let (c, s) = &all[rng.gen_range(0..all.len())];
                        let _ = writeln!(text, "    invoke-virtual {{p0}}, {c}->{s}");
                    } else {
                        let f = framework[rng.gen_range(0..framework.len())];
                        let _ = writeln!(text, "    invoke-static {{v0, v1}}, {f}");
                    }
                    if rng.gen_bool(0.3) {
                        let _ = writeln!(text, "    move-result v0");
                    }
                }
                let _ = writeln!(text, "    return-void\n.end method\n");
            }
            text
        })
        .collect()
}

/// Second, independent implementation of dialog placement used as the
/// planner's oracle. `None` when a target needs a main and there is none.
pub fn prose_oracle(
    instrumentations: &[String],
    sources_of: &dyn Fn(&str) -> BTreeSet<String>,
    mains: &[String],
    unreachables: &[String],
    declared: &[String],
) -> Option<Vec<(String, Vec<String>)>> {
    let fuzzer_reached: BTreeSet<&String> = declared.iter().filter(|d| !unreachables.contains(d)).collect();
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut put = |s: &str, t: &str| {
        let v = out.entry(s.to_string()).or_default();
        if !v.iter().any(|x| x == t) {
            v.push(t.to_string());
        }
    };
    for t in instrumentations {
        if !unreachables.contains(t) {
            continue;
        }
        let usable: Vec<String> = sources_of(t)
            .into_iter()
            .filter(|s| fuzzer_reached.contains(s) && !mains.contains(s))
            .collect();
        if usable.is_empty() {
            if mains.is_empty() {
                return None;
            }
            for m in mains {
                put(m, t);
            }
        } else {
            for s in &usable {
                put(s, t);
            }
        }
    }
    Some(out.into_iter().collect())
}

pub struct PlannerInstance {
    pub declared: Vec<String>,
    pub mains: Vec<String>,
    pub unreachables: Vec<String>,
    pub instrumentations: Vec<String>,
    pub ctg: Ctg,
}

pub fn random_planner_instance(rng: &mut impl Rng) -> PlannerInstance {
    let n = rng.gen_range(1..=14);
    let declared: Vec<String> = (0..n).map(|i| format!("Lapp/A{i};")).collect();
    let mut mains = Vec::new();
    let mut unreachables = Vec::new();
    for d in &declared {
        match rng.gen_range(0..10) {
            0..=1 => mains.push(d.clone()),
            2..=5 => unreachables.push(d.clone()),
            _ => {}
        }
    }
    if rng.gen_bool(0.9) && mains.is_empty() {
        let free: Vec<&String> = declared.iter().filter(|d| !unreachables.contains(d)).collect();
        if let Some(m) = free.first() {
            mains.push((*m).clone());
        }
    }
    let mut instrumentations: Vec<String> = declared.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
    instrumentations.shuffle(rng);
    let mut ctg = Ctg::default();
    for _ in 0..rng.gen_range(0..n * 2) {
        let s = &declared[rng.gen_range(0..n)];
        let t = &declared[rng.gen_range(0..n)];
        ctg.edges.insert(CtgEdge {
            source_activity: s.clone(),
            source_method: MethodRef::new(s.clone(), format!("m{}()V", rng.gen_range(0..3))),
            target_activity: t.clone(),
        });
    }
    PlannerInstance { declared, mains, unreachables, instrumentations, ctg }
}

pub fn text_turn(t: &str) -> Value {
    json!({ "text": t })
}

pub fn report_turn(guideline: &str) -> Value {
    text_turn(&format!(
        "## Forward Analysis\nonCreate checks a guard.\n\n## Backward Analysis\nNo launch sites.\n\n## Launch Guideline\n{guideline}\n"
    ))
}

pub fn dyn_turn(plan: &str) -> Value {
    text_turn(&format!(
        "```pseudocode\nforce the guard and start the target\n```\n```plan\n{plan}```\n```javascript\nJava.perform(function () {{}});\n```\n"
    ))
}

/// Replay client for one target whose dynamic sessions answer `plans[i]`
/// on iteration `i + 1`.
pub fn loop_replay(target: &str, plans: &[&str]) -> ReplayClient {
    let mut sessions = serde_json::Map::new();
    sessions.insert(
        format!("static:{target}"),
        json!([{"tool_calls": [{"name": "get_activities", "arguments": {}}]}, report_turn("force it")]),
    );
    for (i, p) in plans.iter().enumerate() {
        sessions.insert(format!("dynamic:{target}:{}", i + 1), json!([dyn_turn(p)]));
    }
    ReplayClient::from_json(&json!({ "sessions": sessions }).to_string()).unwrap()
}

/// Demo run configuration writing into `out`.
pub fn demo_config(out: &Path, cancel_prob: f64) -> PipelineConfig {
    let demo = fixtures().join("demo");
    let mut cfg: PipelineConfig = toml::from_str(&std::fs::read_to_string(demo.join("demo.toml")).unwrap()).unwrap();
    cfg.resolve_paths(&demo);
    cfg.output_dir = out.to_path_buf();
    cfg.cancel_prob = cancel_prob;
    assert!(matches!(cfg.model, ModelConfig::Replay { .. }));
    assert!(matches!(cfg.device, DeviceConfig::Simulated { .. }));
    cfg
}

/// `key=value` lines of the demo's expected-values file.
pub fn demo_expected() -> Vec<(String, String)> {
    std::fs::read_to_string(fixtures().join("demo/expected.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}
