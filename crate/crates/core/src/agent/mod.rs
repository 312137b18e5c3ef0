//! Model-driven agents: activation-condition inference over the tool
//! surface, and instrumentation plan generation with refinement.

mod client;
mod dynamic;
mod memory;
mod prompts;
mod sections;
mod static_agent;

pub use client::{
    ClientError, HttpClient, HttpClientConfig, Message, ModelClient, ModelTurn, ReplayClient, Role,
    ToolCall,
};
pub use dynamic::{
    retrieve_tool_descriptor, run_dyn_agent, InstrumentationArtifact, Phase, DEFAULT_DYN_TOOL_BUDGET,
};
pub use memory::{EpisodicMemory, MemoryError};
pub use prompts::{build_dyn_prompt, build_static_prompt, render_history};
pub use sections::{parse_dyn_response, parse_report_sections, DynSections, ReportSections};
pub use static_agent::{
    run_static_agent, ActivationConditionReport, StaticAgentConfig, DEFAULT_TOOL_BUDGET,
};

use crate::plan::PlanParseError;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("model client failed in session {session}: {source}")]
    Client {
        session: String,
        #[source]
        source: ClientError,
        /// Conversation up to the failing request.
        transcript: Vec<Message>,
    },
    #[error("response missing section(s) {missing:?} after one re-ask")]
    MalformedResponse { missing: Vec<String> },
    #[error(transparent)]
    PlanParse(#[from] PlanParseError),
    #[error("tool-call budget of {0} exhausted")]
    BudgetExhausted(usize),
    #[error("episodic memory: {0}")]
    Io(#[from] std::io::Error),
}

/// Replay/session key of the static inference session for `target`.
pub fn static_session_key(target: &str) -> String {
    format!("static:{target}")
}

/// Replay/session key of one instrumentation iteration.
pub fn dyn_session_key(target: &str, iteration: u32) -> String {
    format!("dynamic:{target}:{iteration}")
}
