mod common;

use reachkit::agent::{ActivationConditionReport, EpisodicMemory, ModelClient};
use reachkit::harness::{
    bfs_reachable, validation_loop, DeviceScenario, LoopError, LoopStatus, OutcomeKind, SimulatedDevice,
};
use reachkit::package::ingest_package;
use reachkit::pipeline::{build_client, load_loop_result, run_pipeline, Layout};
use reachkit::plan::{parse_script_header, InstrumentationPlan};

use common::*;

const NOTES: &str = "Lcom/example/notes/NoteDetailActivity;";

fn device() -> SimulatedDevice {
    let demo = fixtures().join("demo");
    let pkg = ingest_package(&demo.join("package")).unwrap();
    let scenario: DeviceScenario = std::fs::read_to_string(demo.join("scenario.txt")).unwrap().parse().unwrap();
    SimulatedDevice::new(scenario, &pkg.index)
}

fn report() -> ActivationConditionReport {
    ActivationConditionReport {
        target: NOTES.into(),
        forward_findings: "reads the note_id extra".into(),
        backward_findings: "NoteListActivity passes note_id".into(),
        launch_guideline: "start with note_id=42".into(),
        raw_response: String::new(),
        episodic_ref: String::new(),
        tool_call_count: 0,
        partial: false,
        missing_sections: Vec::new(),
    }
}

#[test]
fn crash_feedback_reaches_the_next_prompt_and_the_fix_lands() {
    let missing = "launch true\n";
    let fixed = "intent com.example.notes.NoteDetailActivity\nextra note_id long 42L\nlaunch true\n";
    let client = loop_replay(NOTES, &[missing, fixed]);
    let memory = EpisodicMemory::new(NOTES, Vec::new());
    let r = validation_loop(&client, &device(), &report(), &memory, 5, 20).unwrap();
    assert_eq!(r.status, LoopStatus::Reached);
    assert_eq!(r.iterations_used, 2);
    assert!(matches!(r.attempts[0].outcome.kind, OutcomeKind::AppCrash(_)));
    let fb = r.attempts[0].feedback.as_deref().unwrap();
    assert!(fb.starts_with("[APP_CRASH]\n") && fb.contains("note_id"), "{fb}");
    assert_eq!(r.attempts[1].artifact.feedback_in.as_deref(), Some(fb));
    let plan = parse_script_header(&r.final_artifact().unwrap().script_text).unwrap();
    assert_eq!(plan, InstrumentationPlan::parse(fixed).unwrap());
}

#[test]
fn iteration_cap_is_enforced() {
    let client = loop_replay(NOTES, &[]);
    let memory = EpisodicMemory::new(NOTES, Vec::new());
    for bad in [0, 6] {
        let err = validation_loop(&client, &device(), &report(), &memory, bad, 20).unwrap_err();
        assert!(matches!(err, LoopError::InvalidMaxIterations(n) if n == bad));
    }
    let r = validation_loop(&client, &device(), &report(), &memory, 3, 20).unwrap();
    assert_eq!(r.status, LoopStatus::UnreachableByTool);
    assert!(r.error.is_some());
}

#[test]
fn demo_pipeline_writes_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_config(tmp.path(), 0.0);
    let client: Box<dyn ModelClient> = build_client(&cfg.model).unwrap();
    let summary = run_pipeline(&cfg, client.as_ref()).unwrap();
    let layout = Layout::new(tmp.path());
    for p in [layout.package_summary(), layout.ctg(), layout.unreachable(), layout.dialogs(), layout.explore_log()] {
        assert!(p.is_file(), "{}", p.display());
    }
    for l in &summary.loops {
        assert_eq!(&load_loop_result(&layout, &l.target).unwrap(), l);
        assert!(layout.episodic(&l.target).is_file());
        assert!(layout.script(&l.target, l.iterations_used).is_file());
    }
    let text = std::fs::read_to_string(layout.coverage_report()).unwrap();
    assert_eq!(text, summary.report_text);
    assert!(text.contains("lift=+3"), "{text}");
    let scenario: DeviceScenario =
        std::fs::read_to_string(fixtures().join("demo/scenario.txt")).unwrap().parse().unwrap();
    assert_eq!(bfs_reachable(&scenario, &summary.dialogs).len(), 6);
}
