//! Placement of injected multi-button dialogs on source activities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;
use serde::Serialize;

use crate::ctg::Ctg;
use crate::names::{normalize_class_name, to_java_name};

/// Source activity -> targets offered by its dialog, in insertion order.
/// Every dialog also has an implicit Cancel button.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ActivityDialogs {
    pub dialogs: BTreeMap<String, IndexSet<String>>,
}

impl ActivityDialogs {
    fn add(&mut self, source: &str, target: &str) {
        self.dialogs
            .entry(source.to_string())
            .or_default()
            .insert(target.to_string());
    }

    pub fn targets(&self, source: &str) -> Option<&IndexSet<String>> {
        self.dialogs.get(source)
    }

    pub fn is_empty(&self) -> bool {
        self.dialogs.is_empty()
    }

    /// Every target that appears in some dialog.
    pub fn all_targets(&self) -> BTreeSet<&str> {
        self.dialogs.values().flatten().map(String::as_str).collect()
    }
}

impl fmt::Display for ActivityDialogs {
    /// `source<TAB>target1,target2` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (source, targets) in &self.dialogs {
            let joined: Vec<String> = targets.iter().map(|t| to_java_name(t)).collect();
            writeln!(f, "{}\t{}", to_java_name(source), joined.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dialogs line {line}: {message}")]
pub struct DialogsFormatError {
    pub line: usize,
    pub message: String,
}

impl FromStr for ActivityDialogs {
    type Err = DialogsFormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = ActivityDialogs::default();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| DialogsFormatError { line: i + 1, message: message.into() };
            let (source, targets) = line.split_once('\t').ok_or_else(|| err("expected source<TAB>targets"))?;
            let targets: Vec<&str> = targets.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
            if targets.is_empty() {
                return Err(err("dialog without targets"));
            }
            let source = normalize_class_name(source);
            for t in targets {
                out.add(&source, &normalize_class_name(t));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("no main activities to attach {0} to")]
    EmptyMains(String),
}

/// Decides which activities show a dialog for each instrumented target.
///
/// A target already reached by the fuzzer is skipped. A target with CTG
/// sources that the fuzzer reaches (excluding mains) gets a button on each
/// such source; otherwise it falls back to every main activity.
/// "Reachable non-main" means declared, not unreachable, and not a main.
pub fn find_dialog_for_target(
    instrumentations: &[String],
    ctg: &Ctg,
    mains: &[String],
    unreachables: &[String],
    declared: &[String],
) -> Result<ActivityDialogs, PlannerError> {
    let unreachables: BTreeSet<&str> = unreachables.iter().map(String::as_str).collect();
    let main_set: BTreeSet<&str> = mains.iter().map(String::as_str).collect();
    let non_main_reachables: BTreeSet<&str> = declared
        .iter()
        .map(String::as_str)
        .filter(|d| !unreachables.contains(d) && !main_set.contains(d))
        .collect();

    let mut dialogs = ActivityDialogs::default();
    let mut found_reachable: BTreeSet<&str> = BTreeSet::new();
    let attach_to_mains = |dialogs: &mut ActivityDialogs, target: &str| {
        if mains.is_empty() {
            return Err(PlannerError::EmptyMains(target.to_string()));
        }
        for main in mains {
            dialogs.add(main, target);
        }
        Ok(())
    };

    for target in instrumentations {
        let target = target.as_str();
        if !unreachables.contains(target) {
            continue;
        }
        let sources = ctg.sources(target);
        if sources.is_empty() {
            attach_to_mains(&mut dialogs, target)?;
            continue;
        }
        for source in sources {
            if non_main_reachables.contains(source) {
                dialogs.add(source, target);
                found_reachable.insert(target);
            }
        }
        if !found_reachable.contains(target) {
            attach_to_mains(&mut dialogs, target)?;
        }
    }
    Ok(dialogs)
}
