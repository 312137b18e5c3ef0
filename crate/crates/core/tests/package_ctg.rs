mod common;

use std::collections::BTreeSet;

use reachkit::agent::{run_static_agent, ReplayClient, StaticAgentConfig};
use reachkit::coverage::{format_percent, CoverageReport, ExplorationLog};
use reachkit::mcp::{Clock, Toolbox};
use reachkit::package::ingest_package;
use serde_json::json;

use common::*;

const CHOOSE: &str = "Lcom/fsck/k9/activity/ChooseAccount;";

#[test]
fn ctg_fixture_sources_and_unresolved_sites() {
    let pkg = ingest_package(&fixtures().join("packages/ctg_app")).unwrap();
    assert_eq!(pkg.package_name, "com.example.ctg");
    assert_eq!(pkg.declared_activities.len(), 7);
    let settings = "Lcom/example/ctg/SettingsActivity;";
    let help = "Lcom/example/ctg/HelpActivity;";
    // The anonymous listener counts for MainActivity, the base-class helper
    // for the declared heir.
    assert_eq!(pkg.ctg.sources(settings), BTreeSet::from(["Lcom/example/ctg/MainActivity;"]));
    assert_eq!(pkg.ctg.sources(help), BTreeSet::from([settings]));
    assert!(pkg.ctg.unresolved_sites.iter().all(|s| s.resolved_target.as_deref().is_none_or(|t| !pkg.declared_activities.iter().any(|d| d == t))));
    let reloaded: reachkit::ctg::Ctg = pkg.ctg.to_text().parse().unwrap();
    assert_eq!(reloaded.edges, pkg.ctg.edges);
}

#[test]
fn k9_baseline_coverage() {
    let root = fixtures().join("packages/k9");
    let pkg = ingest_package(&root).unwrap();
    assert_eq!(pkg.declared_activities.len(), 33);
    assert_eq!(pkg.main_activities, ["Lcom/fsck/k9/activity/Accounts;"]);
    let log = ExplorationLog::parse(&std::fs::read_to_string(root.join("baseline.log")).unwrap()).unwrap();
    assert_eq!(log.source_tool, "ape");
    let report = CoverageReport::new(&pkg.declared_activities, &log, Vec::new());
    assert_eq!((report.visited_count, report.ignored_visits), (11, 1));
    assert_eq!(format_percent(report.activity_coverage), "33%");
    assert!(report.unreachable.iter().any(|u| u == CHOOSE));
    assert!(pkg.check_activity_exists("com.fsck.k9.activity.ChooseAccount").declared);
    assert!(pkg.ctg.sources(CHOOSE).contains("Lcom/fsck/k9/activity/LauncherShortcuts;"));
}

#[test]
fn k9_static_inference_replay() {
    let pkg = ingest_package(&fixtures().join("packages/k9")).unwrap();
    let script = json!({"sessions": {format!("static:{CHOOSE}"): [
        {"tool_calls": [{"name": "check_activity_exists", "arguments": {"class_name": "com.fsck.k9.activity.ChooseAccount"}}]},
        {"tool_calls": [{"name": "get_methods_inside_class", "arguments": {"class_name": CHOOSE}}]},
        report_turn("launch from LauncherShortcuts with an account present"),
    ]}});
    let client = ReplayClient::from_json(&script.to_string()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("choose.jsonl");
    let cfg = StaticAgentConfig { clock: Clock::Logical, ..Default::default() };
    let (report, memory) =
        run_static_agent(&client, &Toolbox::new(&pkg), "com.fsck.k9.activity.ChooseAccount", &cfg, &path).unwrap();
    assert_eq!(report.target, CHOOSE);
    assert_eq!(report.tool_call_count, 2);
    assert!(!report.partial);
    assert!(report.launch_guideline.contains("LauncherShortcuts"));
    let lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines.join("\n") + "\n", memory.to_jsonl());
    let methods = memory.retrieve("2").unwrap();
    assert!(methods.contains("onAccountSelected"), "{methods}");
    assert!(methods.contains("showAccounts"));
}
