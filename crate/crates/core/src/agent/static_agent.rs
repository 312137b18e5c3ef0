use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::{Message, ModelClient, ModelTurn};
use super::memory::EpisodicMemory;
use super::prompts::build_static_prompt;
use super::sections::parse_report_sections;
use super::{static_session_key, AgentError};
use crate::mcp::{tool_descriptors, Clock, Recorder, Toolbox};
use crate::names::normalize_class_name;

pub const DEFAULT_TOOL_BUDGET: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaticAgentConfig {
    pub tool_budget: usize,
    pub clock: Clock,
}

impl Default for StaticAgentConfig {
    fn default() -> Self {
        StaticAgentConfig { tool_budget: DEFAULT_TOOL_BUDGET, clock: Clock::Wall }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationConditionReport {
    pub target: String,
    pub forward_findings: String,
    pub backward_findings: String,
    pub launch_guideline: String,
    /// The model's final answer, unsplit.
    pub raw_response: String,
    /// Path of the line-delimited tool-call record file.
    pub episodic_ref: String,
    pub tool_call_count: usize,
    /// The tool-call budget ran out before a final answer.
    pub partial: bool,
    #[serde(default)]
    pub missing_sections: Vec<String>,
}

const NO_ANSWER: &str = "(no final answer: tool-call budget exhausted)";
const MISSING: &str = "(section missing from the answer)";

/// Drives one inference session until the model answers in text or the
/// tool-call budget runs out. Every executed call is appended to the
/// record file at `episodic_path`.
pub fn run_static_agent(
    client: &dyn ModelClient,
    toolbox: &Toolbox<'_>,
    target: &str,
    config: &StaticAgentConfig,
    episodic_path: &Path,
) -> Result<(ActivationConditionReport, EpisodicMemory), AgentError> {
    let target = normalize_class_name(target);
    let session = static_session_key(&target);
    let sink = BufWriter::new(File::create(episodic_path)?);
    let mut recorder = Recorder::with_sink(config.clock, Box::new(sink));
    let tools: Vec<Value> = tool_descriptors().iter().map(|d| d.to_json()).collect();
    let mut conversation = build_static_prompt(&toolbox.package().package_name, &target);

    let final_text = loop {
        let turn = client
            .send(&session, &conversation, &tools)
            .map_err(|source| AgentError::Client {
                session: session.clone(),
                source,
                transcript: conversation.clone(),
            })?;
        let calls = match turn {
            ModelTurn::ToolCalls(calls) if !calls.is_empty() => calls,
            ModelTurn::ToolCalls(_) => break Some(String::new()),
            ModelTurn::Text(text) => break Some(text),
        };
        conversation.push(Message::assistant_calls(calls.clone()));
        let mut exhausted = false;
        for call in calls {
            if recorder.records().len() >= config.tool_budget {
                exhausted = true;
                break;
            }
            let (text, is_error) = match toolbox.call(&call.name, &call.arguments) {
                Ok(out) => (out.text, out.is_error),
                Err(e) => (format!("error: {e}"), true),
            };
            recorder.record(&call.name, call.arguments.clone(), &text, is_error)?;
            conversation.push(Message::tool_result(&call.id, text));
        }
        if exhausted {
            log::warn!("{target}: tool-call budget of {} exhausted", config.tool_budget);
            break None;
        }
    };

    let records = recorder.into_records();
    let memory = EpisodicMemory::new(&target, records);
    let partial = final_text.is_none();
    let raw_response = final_text.unwrap_or_else(|| NO_ANSWER.to_string());
    let sections = parse_report_sections(&raw_response);
    let pick = |s: String| match (partial, s.is_empty()) {
        (true, _) => NO_ANSWER.to_string(),
        (false, true) => MISSING.to_string(),
        (false, false) => s,
    };
    if !partial && !sections.missing.is_empty() {
        log::warn!("{target}: report is missing {:?}", sections.missing);
    }
    let report = ActivationConditionReport {
        target,
        forward_findings: pick(sections.forward),
        backward_findings: pick(sections.backward),
        launch_guideline: pick(sections.guideline),
        raw_response,
        episodic_ref: episodic_path.display().to_string(),
        tool_call_count: memory.records.len(),
        partial,
        missing_sections: if partial { Vec::new() } else { sections.missing.iter().map(|s| s.to_string()).collect() },
    };
    Ok((report, memory))
}
