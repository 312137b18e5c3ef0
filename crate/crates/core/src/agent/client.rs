use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message { role, content: content.into(), tool_calls: Vec::new(), tool_call_id: None }
    }

    pub fn tool_result(call_id: &str, content: impl Into<String>) -> Self {
        Message { tool_call_id: Some(call_id.to_string()), ..Message::new(Role::Tool, content) }
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        Message { tool_calls: calls, ..Message::new(Role::Assistant, "") }
    }
}

/// One model reply: final text, or a batch of tool calls to execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelTurn {
    Text(String),
    ToolCalls(Vec<ToolCall>),
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("replay session {0:?} not found")]
    MissingSession(String),
    #[error("replay session {session:?} has no turn {turn}")]
    ExhaustedScript { session: String, turn: usize },
    #[error("replay file: {0}")]
    ReplayFile(String),
}

/// Chat model with tool calling. `session` names the conversation; live
/// clients ignore it, replay clients key their scripts by it.
pub trait ModelClient: Send + Sync {
    fn send(&self, session: &str, conversation: &[Message], tools: &[Value]) -> Result<ModelTurn, ClientError>;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ReplayTurn {
    Text { text: String },
    Calls { tool_calls: Vec<ReplayCall> },
}

#[derive(Debug, Clone, Deserialize)]
struct ReplayCall {
    name: String,
    #[serde(default)]
    arguments: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Deserialize)]
struct ReplayFile {
    sessions: BTreeMap<String, Vec<ReplayTurn>>,
}

/// Returns canned turns. The turn index is the number of assistant
/// messages already in the conversation, so the client holds no state.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    sessions: BTreeMap<String, Vec<ReplayTurn>>,
}

fn arg_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ReplayClient {
    /// Parses `{"sessions": {"<key>": [{"text": ..} | {"tool_calls": [..]}]}}`.
    pub fn from_json(text: &str) -> Result<Self, ClientError> {
        let file: ReplayFile = serde_json::from_str(text).map_err(|e| ClientError::ReplayFile(e.to_string()))?;
        Ok(ReplayClient { sessions: file.sessions })
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::ReplayFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn has_session(&self, key: &str) -> bool {
        self.sessions.contains_key(key)
    }
}

impl ModelClient for ReplayClient {
    fn send(&self, session: &str, conversation: &[Message], _tools: &[Value]) -> Result<ModelTurn, ClientError> {
        let turns = self
            .sessions
            .get(session)
            .ok_or_else(|| ClientError::MissingSession(session.to_string()))?;
        let turn = conversation.iter().filter(|m| m.role == Role::Assistant).count();
        match turns.get(turn) {
            Some(ReplayTurn::Text { text }) => Ok(ModelTurn::Text(text.clone())),
            Some(ReplayTurn::Calls { tool_calls }) => Ok(ModelTurn::ToolCalls(
                tool_calls
                    .iter()
                    .enumerate()
                    .map(|(i, c)| ToolCall {
                        id: format!("call_{turn}_{i}"),
                        name: c.name.clone(),
                        arguments: c.arguments.iter().map(|(k, v)| (k.clone(), arg_string(v))).collect(),
                    })
                    .collect(),
            )),
            None => Err(ClientError::ExhaustedScript { session: session.to_string(), turn }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpClientConfig {
    /// Base URL of an OpenAI-compatible API, or the full
    /// `/chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Blocking client for OpenAI-compatible chat-completion endpoints.
#[derive(Debug)]
pub struct HttpClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        HttpClient { config, agent }
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    /// Request body for one turn; tool names are deduplicated because the
    /// API rejects repeats.
    pub fn request_body(&self, conversation: &[Message], tools: &[Value]) -> Value {
        let messages: Vec<Value> = conversation.iter().map(wire_message).collect();
        let mut seen = std::collections::BTreeSet::new();
        let functions: Vec<Value> = tools
            .iter()
            .filter(|t| seen.insert(t["name"].as_str().unwrap_or_default().to_string()))
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t["name"],
                        "description": t["description"],
                        "parameters": t["inputSchema"],
                    }
                })
            })
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        if !functions.is_empty() {
            body["tools"] = Value::Array(functions);
        }
        body
    }
}

fn wire_message(m: &Message) -> Value {
    match m.role {
        Role::Assistant if !m.tool_calls.is_empty() => json!({
            "role": "assistant",
            "content": if m.content.is_empty() { Value::Null } else { Value::String(m.content.clone()) },
            "tool_calls": m.tool_calls.iter().map(|c| json!({
                "id": c.id,
                "type": "function",
                "function": {"name": c.name, "arguments": serde_json::to_string(&c.arguments).unwrap_or_default()},
            })).collect::<Vec<_>>(),
        }),
        Role::Tool => json!({
            "role": "tool",
            "tool_call_id": m.tool_call_id.clone().unwrap_or_default(),
            "content": m.content,
        }),
        role => json!({"role": role, "content": m.content}),
    }
}

/// Extracts the assistant turn from a chat-completion response.
pub(crate) fn parse_completion(resp: &Value) -> Result<ModelTurn, ClientError> {
    let msg = resp
        .pointer("/choices/0/message")
        .ok_or_else(|| ClientError::Protocol("no choices[0].message".into()))?;
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array).filter(|c| !c.is_empty()) {
        let mut out = Vec::new();
        for (i, c) in calls.iter().enumerate() {
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| ClientError::Protocol("tool call without a name".into()))?;
            let raw = c.pointer("/function/arguments").and_then(Value::as_str).unwrap_or("{}");
            let args: BTreeMap<String, Value> = if raw.trim().is_empty() {
                BTreeMap::new()
            } else {
                serde_json::from_str(raw)
                    .map_err(|e| ClientError::Protocol(format!("tool call {name}: arguments are not a JSON object: {e}")))?
            };
            out.push(ToolCall {
                id: c["id"].as_str().map(String::from).unwrap_or_else(|| format!("call_{i}")),
                name: name.to_string(),
                arguments: args.iter().map(|(k, v)| (k.clone(), arg_string(v))).collect(),
            });
        }
        return Ok(ModelTurn::ToolCalls(out));
    }
    Ok(ModelTurn::Text(msg["content"].as_str().unwrap_or_default().to_string()))
}

impl ModelClient for HttpClient {
    fn send(&self, _session: &str, conversation: &[Message], tools: &[Value]) -> Result<ModelTurn, ClientError> {
        let body = self.request_body(conversation, tools);
        let mut req = self.agent.post(&self.url());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp: Value = req
            .send_json(&body)
            .map_err(|e| ClientError::Http(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Http(e.to_string()))?;
        parse_completion(&resp)
    }
}
