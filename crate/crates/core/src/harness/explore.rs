//! Random GUI explorer over a [`DeviceScenario`] with injected dialogs.
//!
//! Each step is one of: open an unguarded successor, press back, or restart
//! at a random main activity. Arriving forward (or by restart) at an
//! activity that hosts a dialog shows the dialog first; the explorer cancels
//! it with probability `cancel_prob`, otherwise it presses a uniformly chosen
//! target button. Dialog buttons carry the instrumentation, so they ignore
//! guards.

use std::collections::{BTreeSet, VecDeque};

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::DeviceScenario;
use crate::coverage::ExplorationLog;
use crate::widgets::ActivityDialogs;

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    /// Number of GUI events.
    pub budget: usize,
    /// Chance of pressing Cancel on a dialog; clamped to `[0, 1]`.
    pub cancel_prob: f64,
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig { budget: 500, cancel_prob: 0.2, seed: 0 }
    }
}

pub const EXPLORER_TOOL: &str = "simulated-explorer";

/// Activities an explorer with unlimited budget can reach.
pub fn bfs_reachable(scenario: &DeviceScenario, dialogs: &ActivityDialogs) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = scenario.mains.iter().cloned().collect();
    let mut queue: VecDeque<String> = scenario.mains.iter().cloned().collect();
    while let Some(a) = queue.pop_front() {
        let via_dialog = dialogs.targets(&a).into_iter().flatten().map(String::as_str);
        for next in scenario.open_successors(&a).into_iter().chain(via_dialog) {
            if seen.insert(next.to_string()) {
                queue.push_back(next.to_string());
            }
        }
    }
    seen
}

pub fn simulated_explore(scenario: &DeviceScenario, dialogs: &ActivityDialogs, cfg: &ExploreConfig) -> ExplorationLog {
    let mut log = ExplorationLog::new(EXPLORER_TOOL, std::iter::empty::<&str>());
    if scenario.mains.is_empty() {
        return log;
    }
    let p = if cfg.cancel_prob.is_nan() { 0.0 } else { cfg.cancel_prob.clamp(0.0, 1.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut visited: IndexSet<String> = IndexSet::new();
    let mut stack: Vec<String> = Vec::new();
    let mut current = scenario.mains[rng.gen_range(0..scenario.mains.len())].clone();
    visited.insert(current.clone());
    let mut arrived = true;

    for _ in 0..cfg.budget {
        let dialog = if arrived { dialogs.targets(&current).filter(|t| !t.is_empty()) } else { None };
        arrived = false;
        if let Some(targets) = dialog {
            if !rng.gen_bool(p) {
                let next = targets[rng.gen_range(0..targets.len())].clone();
                stack.push(std::mem::replace(&mut current, next));
                visited.insert(current.clone());
                arrived = true;
            }
            continue;
        }
        let succ = scenario.open_successors(&current);
        let back = usize::from(!stack.is_empty());
        let pick = rng.gen_range(0..succ.len() + back + 1);
        if pick < succ.len() {
            let next = succ[pick].to_string();
            stack.push(std::mem::replace(&mut current, next));
            arrived = true;
        } else if pick < succ.len() + back {
            current = stack.pop().expect("non-empty back stack");
        } else {
            stack.clear();
            current = scenario.mains[rng.gen_range(0..scenario.mains.len())].clone();
            arrived = true;
        }
        visited.insert(current.clone());
    }
    log.visited = visited.into_iter().collect();
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TEXT: &str = "[ACTIVITIES]\ncom.x.Main\ncom.x.List\ncom.x.Backup\ncom.x.Debug\n[MAINS]\ncom.x.Main\n[TRANSITIONS]\ncom.x.Main\tcom.x.List\ncom.x.List\tcom.x.Backup\n[GUARDS]\ncom.x.Backup\tflag\tserver\ncom.x.Debug\tflag\tdisabled\n";

    fn dialogs() -> ActivityDialogs {
        "com.x.List\tcom.x.Backup\ncom.x.Main\tcom.x.Debug\n".parse().unwrap()
    }

    #[test]
    fn cancel_probability_extremes() {
        let sc: DeviceScenario = TEXT.parse().unwrap();
        let all = simulated_explore(&sc, &dialogs(), &ExploreConfig { budget: 300, cancel_prob: 0.0, seed: 7 });
        assert_eq!(all.visited.len(), 4);
        let none = simulated_explore(&sc, &dialogs(), &ExploreConfig { budget: 300, cancel_prob: 1.0, seed: 7 });
        assert_eq!(none.visited, vec!["Lcom/x/Main;", "Lcom/x/List;"]);
        let zero = simulated_explore(&sc, &dialogs(), &ExploreConfig { budget: 0, cancel_prob: 0.0, seed: 7 });
        assert_eq!(zero.visited, vec!["Lcom/x/Main;"]);
        assert_eq!(bfs_reachable(&sc, &ActivityDialogs::default()).len(), 2);
        assert_eq!(bfs_reachable(&sc, &dialogs()).len(), 4);
    }

    fn scenario_strategy() -> impl Strategy<Value = (DeviceScenario, ActivityDialogs)> {
        (2usize..9)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec((0..n, 0..n), 0..20),
                    proptest::collection::vec(any::<bool>(), n),
                    proptest::collection::vec((0..n, 0..n), 0..6),
                )
            })
            .prop_map(|(n, edges, guarded, dialog_edges)| {
                let name = |i: usize| format!("Lcom/r/A{i};");
                let mut sc = DeviceScenario {
                    activities: (0..n).map(name).collect(),
                    mains: vec![name(0)],
                    transitions: edges.iter().map(|&(a, b)| (name(a), name(b))).collect(),
                    ..Default::default()
                };
                for (i, g) in guarded.iter().enumerate().skip(1) {
                    if *g {
                        sc.guards.insert(name(i), vec![super::super::Guard::Flag { kind: super::super::FlagKind::Server, bypass: None }]);
                    }
                }
                let mut d = ActivityDialogs::default();
                for (s, t) in dialog_edges {
                    d.dialogs.entry(name(s)).or_default().insert(name(t));
                }
                (sc, d)
            })
    }

    proptest! {
        #[test]
        fn visits_stay_inside_the_bfs_closure((sc, d) in scenario_strategy(), seed in any::<u64>(), p in 0.0f64..=1.0) {
            let cfg = ExploreConfig { budget: 200, cancel_prob: p, seed };
            let log = simulated_explore(&sc, &d, &cfg);
            let closure = bfs_reachable(&sc, &d);
            prop_assert!(log.visited.iter().all(|v| closure.contains(v)));
            prop_assert_eq!(&log, &simulated_explore(&sc, &d, &cfg));
        }
    }
}
