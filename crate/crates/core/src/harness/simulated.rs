use std::collections::BTreeSet;

use super::device::{Device, DeviceError, OutcomeKind, ValidationOutcome};
use super::scenario::{DeviceScenario, Guard};
use crate::agent::InstrumentationArtifact;
use crate::names::{normalize_class_name, to_java_name};
use crate::plan::{HookAction, InstrumentationPlan, Literal};
use crate::smali::{CodeIndex, MethodRef};

/// Adjudicates plans against a scenario's guards. Script text is ignored;
/// the plan is the semantic contract.
#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    scenario: DeviceScenario,
    classes: BTreeSet<String>,
    methods: BTreeSet<MethodRef>,
}

fn literal_matches(a: &Literal, b: &Literal) -> bool {
    match (a, b) {
        (Literal::Int(x) | Literal::Long(x), Literal::Int(y) | Literal::Long(y)) => x == y,
        (Literal::Double(x), Literal::Int(y) | Literal::Long(y))
        | (Literal::Int(y) | Literal::Long(y), Literal::Double(x)) => *x == *y as f64,
        _ => a == b,
    }
}

fn forces(plan: &InstrumentationPlan, method: &MethodRef, value: &Literal) -> bool {
    plan.hooks.iter().any(|h| {
        &h.method == method && matches!(&h.action, HookAction::Return(v) if literal_matches(v, value))
    })
}

impl SimulatedDevice {
    /// `index` supplies the classes and methods that hooks may target.
    pub fn new(scenario: DeviceScenario, index: &CodeIndex) -> Self {
        SimulatedDevice {
            classes: index.classes().map(|c| c.name.clone()).collect(),
            methods: index.methods().map(|m| m.method_ref()).collect(),
            scenario,
        }
    }

    pub fn scenario(&self) -> &DeviceScenario {
        &self.scenario
    }

    /// Pure function of scenario, index and plan.
    pub fn run_plan(&self, plan: &InstrumentationPlan, target: &str) -> ValidationOutcome {
        let target = normalize_class_name(target);
        let home = self.scenario.mains.first().cloned();
        let mut log = String::new();
        let done = |kind: OutcomeKind, observed: Option<String>, log: String| ValidationOutcome {
            kind,
            observed_activity: observed,
            raw_log: log,
        };

        for h in &plan.hooks {
            if h.external {
                continue;
            }
            let class = to_java_name(&h.method.owner);
            if !self.classes.contains(&h.method.owner) {
                let msg = format!("Error: java.lang.ClassNotFoundException: Didn't find class \"{class}\"");
                log.push_str(&format!("E/frida: {msg}\n"));
                return done(OutcomeKind::InstrumentationException(msg), home, log);
            }
            if !self.methods.contains(&h.method) {
                let msg = format!(
                    "Error: {}: no overload of {class} matches signature {}",
                    h.method.name(),
                    h.method.signature
                );
                log.push_str(&format!("E/frida: {msg}\n"));
                return done(OutcomeKind::InstrumentationException(msg), home, log);
            }
            log.push_str(&format!("I/frida: hooked {}\n", h.method));
        }
        if let Err(e) = plan.check_literal_types() {
            let msg = format!("Error: {e}");
            log.push_str(&format!("E/frida: {msg}\n"));
            return done(OutcomeKind::InstrumentationException(msg), home, log);
        }
        if !plan.launch {
            log.push_str("I/validator: script loaded, nothing launched\n");
            return done(OutcomeKind::NoTransition, home, log);
        }
        let launched = plan.intent.as_ref().map_or(target.clone(), |i| i.target.clone());
        if !self.scenario.activities.contains(&launched) {
            let trace = format!(
                "FATAL EXCEPTION: main\nandroid.content.ActivityNotFoundException: Unable to find explicit activity class {{{}}}\n\tat android.app.Instrumentation.checkStartActivityResult(Instrumentation.java:2005)",
                to_java_name(&launched)
            );
            log.push_str(&format!("E/AndroidRuntime: {trace}\n"));
            return done(OutcomeKind::AppCrash(trace), home, log);
        }
        log.push_str(&format!("I/ActivityTaskManager: START cmp={}\n", to_java_name(&launched)));
        if launched != target {
            return done(OutcomeKind::NoTransition, Some(launched), log);
        }

        for guard in self.scenario.guards_of(&target) {
            let ok = match guard {
                Guard::ForcedReturn { method, value } => forces(plan, method, value),
                Guard::Extra { key, value } => match plan.intent.as_ref().and_then(|i| i.extra(key)) {
                    None => {
                        let trace = format!(
                            "FATAL EXCEPTION: main\njava.lang.RuntimeException: Unable to start activity ComponentInfo{{{0}}}: java.lang.IllegalArgumentException: missing intent extra \"{key}\"\n\tat {0}.onCreate",
                            to_java_name(&target)
                        );
                        log.push_str(&format!("E/AndroidRuntime: {trace}\n"));
                        return done(OutcomeKind::AppCrash(trace), home, log);
                    }
                    Some(v) => literal_matches(v, value),
                },
                Guard::Flag { bypass, .. } => bypass.as_ref().is_some_and(|(m, v)| forces(plan, m, v)),
            };
            if !ok {
                log.push_str(&format!("I/ActivityTaskManager: {} finished during onCreate\n", to_java_name(&target)));
                return done(OutcomeKind::NoTransition, home, log);
            }
        }
        log.push_str(&format!("I/ActivityTaskManager: Displayed {}\n", to_java_name(&target)));
        done(OutcomeKind::Success, Some(target), log)
    }
}

impl Device for SimulatedDevice {
    fn validate(&self, artifact: &InstrumentationArtifact, target: &str) -> Result<ValidationOutcome, DeviceError> {
        Ok(self.run_plan(&artifact.plan, target))
    }
}
