use serde::{Deserialize, Serialize};

use super::device::{feedback_text, Device, DeviceError, ValidationOutcome};
use crate::agent::{run_dyn_agent, ActivationConditionReport, EpisodicMemory, InstrumentationArtifact, ModelClient};

/// Upper bound on generate/refine iterations per target.
pub const MAX_ITERATIONS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub artifact: InstrumentationArtifact,
    pub outcome: ValidationOutcome,
    /// Feedback derived from `outcome`; `None` after a success.
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopStatus {
    Reached,
    UnreachableByTool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub target: String,
    /// Iterations whose script reached the device.
    pub iterations_used: u32,
    pub attempts: Vec<Attempt>,
    pub final_outcome: Option<ValidationOutcome>,
    pub status: LoopStatus,
    /// Agent failure that ended the loop early.
    pub error: Option<String>,
    /// The report driving the loop was itself partial.
    pub partial_report: bool,
}

impl LoopResult {
    pub fn final_artifact(&self) -> Option<&InstrumentationArtifact> {
        self.attempts.last().map(|a| &a.artifact)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error("max iterations must be between 1 and {MAX_ITERATIONS}, got {0}")]
    InvalidMaxIterations(u32),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Generates a script for `report.target`, validates it, and refines it
/// with the device's feedback until the target launches or
/// `max_iterations` attempts were made.
pub fn validation_loop(
    client: &dyn ModelClient,
    device: &dyn Device,
    report: &ActivationConditionReport,
    memory: &EpisodicMemory,
    max_iterations: u32,
    tool_budget: usize,
) -> Result<LoopResult, LoopError> {
    if !(1..=MAX_ITERATIONS).contains(&max_iterations) {
        return Err(LoopError::InvalidMaxIterations(max_iterations));
    }
    let mut result = LoopResult {
        target: report.target.clone(),
        iterations_used: 0,
        attempts: Vec::new(),
        final_outcome: None,
        status: LoopStatus::UnreachableByTool,
        error: None,
        partial_report: report.partial,
    };
    for _ in 0..max_iterations {
        let prior = result
            .attempts
            .last()
            .and_then(|a| a.feedback.as_deref().map(|f| (&a.artifact, f)));
        let artifact = match run_dyn_agent(client, memory, report, prior, tool_budget) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("{}: instrumentation agent failed: {e}", report.target);
                result.error = Some(e.to_string());
                break;
            }
        };
        let outcome = device.validate(&artifact, &report.target)?;
        result.iterations_used += 1;
        result.final_outcome = Some(outcome.clone());
        if outcome.is_success() {
            result.status = LoopStatus::Reached;
            result.attempts.push(Attempt { artifact, outcome, feedback: None });
            break;
        }
        let feedback = feedback_text(&outcome);
        result.attempts.push(Attempt { artifact, outcome, feedback: Some(feedback) });
    }
    Ok(result)
}
