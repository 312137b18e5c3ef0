use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{Message, ModelClient, ModelTurn, Role};
use super::memory::EpisodicMemory;
use super::prompts::build_dyn_prompt;
use super::sections::parse_dyn_response;
use super::static_agent::ActivationConditionReport;
use super::{dyn_session_key, AgentError};
use crate::plan::{render_script, InstrumentationPlan};

pub const DEFAULT_DYN_TOOL_BUDGET: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Generate,
    Refine,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Generate => "Generate",
            Phase::Refine => "Refine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentationArtifact {
    pub target: String,
    pub iteration: u32,
    pub phase: Phase,
    pub pseudocode: String,
    pub plan: InstrumentationPlan,
    /// Script rendered from `plan`; empty when rendering failed.
    pub script_text: String,
    pub render_error: Option<String>,
    /// The SCRIPT block exactly as the model wrote it.
    pub model_script: String,
    /// Validation feedback this iteration was asked to address.
    pub feedback_in: Option<String>,
}

/// The one tool offered to the instrumentation agent.
pub fn retrieve_tool_descriptor() -> Value {
    json!({
        "name": "retrieve_tool_call_result",
        "description": "Return the result of an earlier analysis tool call, by call number or by tool name (all calls of that tool, in order).",
        "inputSchema": {
            "type": "object",
            "properties": {"query": {"type": "string", "description": "Call number such as 3, or a tool name"}},
            "required": ["query"],
        },
    })
}

const REASK: &str = "Your reply is missing the following fenced block(s): {missing}. \
Send the complete answer again with the pseudocode, plan and script blocks.";

/// Produces the next artifact for `report.target`. With no `prior` this is
/// iteration 1 in the Generate phase; otherwise iteration `prior + 1` in
/// the Refine phase, steered by `feedback`.
pub fn run_dyn_agent(
    client: &dyn ModelClient,
    memory: &EpisodicMemory,
    report: &ActivationConditionReport,
    prior: Option<(&InstrumentationArtifact, &str)>,
    tool_budget: usize,
) -> Result<InstrumentationArtifact, AgentError> {
    let (iteration, phase) = match prior {
        None => (1, Phase::Generate),
        Some((p, _)) => (p.iteration + 1, Phase::Refine),
    };
    let current_code = prior.map(|(p, _)| {
        let mut code = String::new();
        let _ = write!(code, "```plan\n{}```\n```script\n{}\n```", p.plan.to_text(), p.model_script.trim_end());
        code
    });
    let feedback = prior.map(|(_, f)| f);
    let session = dyn_session_key(&report.target, iteration);
    let tools = [retrieve_tool_descriptor()];
    let mut conversation = build_dyn_prompt(report, memory, phase, current_code.as_deref(), feedback);
    let mut calls_made = 0usize;
    let mut reasked = false;

    let sections = loop {
        let turn = client
            .send(&session, &conversation, &tools)
            .map_err(|source| AgentError::Client {
                session: session.clone(),
                source,
                transcript: conversation.clone(),
            })?;
        match turn {
            ModelTurn::ToolCalls(calls) if !calls.is_empty() => {
                if calls_made + calls.len() > tool_budget {
                    return Err(AgentError::BudgetExhausted(tool_budget));
                }
                calls_made += calls.len();
                conversation.push(Message::assistant_calls(calls.clone()));
                for call in calls {
                    let text = if call.name == "retrieve_tool_call_result" {
                        let query = ["query", "seq", "tool_name", "name"]
                            .iter()
                            .find_map(|k| call.arguments.get(*k))
                            .cloned()
                            .unwrap_or_default();
                        memory.retrieve(&query).unwrap_or_else(|e| format!("error: {e}"))
                    } else {
                        format!("error: unknown tool {:?}; only retrieve_tool_call_result is available", call.name)
                    };
                    conversation.push(Message::tool_result(&call.id, text));
                }
            }
            ModelTurn::ToolCalls(_) | ModelTurn::Text(_) => {
                let text = match turn {
                    ModelTurn::Text(t) => t,
                    ModelTurn::ToolCalls(_) => String::new(),
                };
                let sections = parse_dyn_response(&text);
                let missing = sections.missing();
                if missing.is_empty() {
                    break sections;
                }
                if reasked {
                    return Err(AgentError::MalformedResponse { missing });
                }
                reasked = true;
                conversation.push(Message::new(Role::Assistant, text));
                conversation.push(Message::new(Role::User, REASK.replace("{missing}", &missing.join(", "))));
            }
        }
    };

    let plan = InstrumentationPlan::parse(sections.plan.as_deref().unwrap_or_default())?;
    let (script_text, render_error) = match render_script(&plan) {
        Ok(s) => (s, None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    Ok(InstrumentationArtifact {
        target: report.target.clone(),
        iteration,
        phase,
        pseudocode: sections.pseudocode.unwrap_or_default(),
        plan,
        script_text,
        render_error,
        model_script: sections.script.unwrap_or_default(),
        feedback_in: feedback.map(String::from),
    })
}
