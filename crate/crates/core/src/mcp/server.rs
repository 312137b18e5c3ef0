use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde_json::{json, Value};

use super::record::Recorder;
use super::tools::{tool_descriptors, ToolError, Toolbox};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;

const PROTOCOL_VERSION: &str = "2024-11-05";

/// Serial JSON-RPC dispatcher. The recorder is its only mutable state.
#[derive(Debug)]
pub struct Server<'a> {
    toolbox: Toolbox<'a>,
    recorder: Recorder,
}

fn error(id: Value, code: i64, message: impl Into<String>) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "error": {"code": code, "message": message.into()}})
}

fn success(id: Value, result: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "result": result})
}

impl<'a> Server<'a> {
    pub fn new(toolbox: Toolbox<'a>, recorder: Recorder) -> Self {
        Server { toolbox, recorder }
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    pub fn into_recorder(self) -> Recorder {
        self.recorder
    }

    /// Handles one frame. Returns `None` for notifications.
    pub fn handle_line(&mut self, line: &str) -> Option<Value> {
        let msg: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Some(error(Value::Null, PARSE_ERROR, format!("parse error: {e}"))),
        };
        self.handle_message(msg)
    }

    pub fn handle_message(&mut self, msg: Value) -> Option<Value> {
        let Value::Object(obj) = msg else {
            return Some(error(Value::Null, INVALID_REQUEST, "request must be a JSON object"));
        };
        let id = obj.get("id").cloned();
        let reply_id = match &id {
            Some(v @ (Value::String(_) | Value::Number(_) | Value::Null)) => v.clone(),
            Some(_) => return Some(error(Value::Null, INVALID_REQUEST, "id must be a string or number")),
            None => Value::Null,
        };
        if obj.get("jsonrpc").and_then(Value::as_str) != Some("2.0") {
            return Some(error(reply_id, INVALID_REQUEST, "jsonrpc must be \"2.0\""));
        }
        let Some(method) = obj.get("method").and_then(Value::as_str) else {
            return Some(error(reply_id, INVALID_REQUEST, "missing method"));
        };
        let params = obj.get("params").cloned().unwrap_or(Value::Null);
        let response = match method {
            "initialize" => Ok(json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {"listChanged": false}},
                "serverInfo": {"name": "reachkit", "version": env!("CARGO_PKG_VERSION")},
            })),
            "ping" => Ok(json!({})),
            "tools/list" => Ok(json!({
                "tools": tool_descriptors().iter().map(|d| d.to_json()).collect::<Vec<_>>()
            })),
            "tools/call" => self.tools_call(&params),
            m if m.starts_with("notifications/") => return None,
            other => Err((METHOD_NOT_FOUND, format!("method not found: {other}"))),
        };
        // Requests without an id are notifications: never answered.
        id.as_ref()?;
        Some(match response {
            Ok(result) => success(reply_id, result),
            Err((code, message)) => error(reply_id, code, message),
        })
    }

    fn tools_call(&mut self, params: &Value) -> Result<Value, (i64, String)> {
        let name = params.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
        let mut args = BTreeMap::new();
        let mut bad_args = false;
        match params.get("arguments") {
            None | Some(Value::Null) => {}
            Some(Value::Object(map)) => {
                for (k, v) in map {
                    let v = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    args.insert(k.clone(), v);
                }
            }
            Some(_) => bad_args = true,
        }
        let outcome = if name.is_empty() {
            Err((INVALID_PARAMS, "tools/call needs params.name".to_string()))
        } else if bad_args {
            Err((INVALID_PARAMS, "params.arguments must be an object".to_string()))
        } else {
            match self.toolbox.call(&name, &args) {
                Ok(out) => Ok(out),
                Err(e @ ToolError::UnknownTool(_)) => Err((METHOD_NOT_FOUND, e.to_string())),
                Err(e @ ToolError::MissingArgument { .. }) => Err((INVALID_PARAMS, e.to_string())),
            }
        };
        let (text, is_error) = match &outcome {
            Ok(out) => (out.text.as_str(), out.is_error),
            Err((_, msg)) => (msg.as_str(), true),
        };
        if let Err(e) = self.recorder.record(&name, args, text, is_error) {
            log::error!("failed to persist tool call record: {e}");
        }
        outcome.map(|out| {
            json!({"content": [{"type": "text", "text": out.text}], "isError": out.is_error})
        })
    }
}

/// Reads newline-delimited frames until EOF, answering each request on its
/// own line.
pub fn serve<R: BufRead, W: Write>(server: &mut Server<'_>, input: R, mut output: W) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(resp) = server.handle_line(&line) {
            serde_json::to_writer(&mut output, &resp).map_err(io::Error::other)?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
    }
    Ok(())
}
