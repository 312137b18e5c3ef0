use serde::{Deserialize, Serialize};

use crate::agent::InstrumentationArtifact;

/// Cap on feedback text handed back to the instrumentation agent.
pub const FEEDBACK_CAP: usize = 8 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    /// The instrumentation runtime rejected the script.
    InstrumentationException(String),
    /// The app died; carries the crash trace.
    AppCrash(String),
    /// Nothing failed, but the target never came to the foreground.
    NoTransition,
}

impl OutcomeKind {
    pub fn tag(&self) -> &'static str {
        match self {
            OutcomeKind::Success => "SUCCESS",
            OutcomeKind::InstrumentationException(_) => "INSTRUMENTATION_EXCEPTION",
            OutcomeKind::AppCrash(_) => "APP_CRASH",
            OutcomeKind::NoTransition => "NO_TRANSITION",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub kind: OutcomeKind,
    pub observed_activity: Option<String>,
    pub raw_log: String,
}

impl ValidationOutcome {
    pub fn is_success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeviceError {
    #[error("device unavailable: {0}")]
    Unavailable(String),
}

/// Runs an artifact's script on a device with the target launch trigger.
pub trait Device: Send + Sync {
    fn validate(&self, artifact: &InstrumentationArtifact, target: &str) -> Result<ValidationOutcome, DeviceError>;
}

/// Tag line plus message or trace, cut to [`FEEDBACK_CAP`] bytes.
pub fn feedback_text(outcome: &ValidationOutcome) -> String {
    let body = match &outcome.kind {
        OutcomeKind::Success => "the target activity was launched".to_string(),
        OutcomeKind::InstrumentationException(m) => m.clone(),
        OutcomeKind::AppCrash(t) => t.clone(),
        OutcomeKind::NoTransition => {
            let seen = outcome.observed_activity.as_deref().unwrap_or("unknown");
            format!("the transition to the target activity did not occur; foreground activity: {seen}")
        }
    };
    let text = format!("[{}]\n{}", outcome.kind.tag(), body);
    crate::mcp::truncate_result(text, FEEDBACK_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_is_tagged_and_capped() {
        let o = ValidationOutcome {
            kind: OutcomeKind::AppCrash("x".repeat(20_000)),
            observed_activity: None,
            raw_log: String::new(),
        };
        let f = feedback_text(&o);
        assert!(f.starts_with("[APP_CRASH]\nxxx"));
        assert!(f.len() < FEEDBACK_CAP + 100);
        assert!(f.contains("[truncated"));
        let nt = ValidationOutcome { kind: OutcomeKind::NoTransition, observed_activity: Some("La;".into()), raw_log: String::new() };
        assert!(feedback_text(&nt).contains("did not occur"));
    }
}
