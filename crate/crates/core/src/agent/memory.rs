use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::mcp::ToolCallRecord;

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("no tool call matches {0:?}")]
    NotFound(String),
    #[error("{path}: {message}")]
    Load { path: String, message: String },
}

/// Tool calls of one target's inference session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EpisodicMemory {
    pub target: String,
    pub records: Vec<ToolCallRecord>,
}

impl EpisodicMemory {
    pub fn new(target: &str, records: Vec<ToolCallRecord>) -> Self {
        EpisodicMemory { target: target.to_string(), records }
    }

    /// Reads a line-delimited record file.
    pub fn load(path: &Path, target: &str) -> Result<Self, MemoryError> {
        let err = |message: String| MemoryError::Load { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<ToolCallRecord>, _>>()?;
        Ok(EpisodicMemory::new(target, records))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// A numeric query selects one record by sequence number; anything
    /// else selects every record of that tool, in order.
    pub fn retrieve(&self, query: &str) -> Result<String, MemoryError> {
        let query = query.trim();
        let hits: Vec<&ToolCallRecord> = match query.parse::<u64>() {
            Ok(seq) => self.records.iter().filter(|r| r.seq == seq).collect(),
            Err(_) => self.records.iter().filter(|r| r.tool_name == query).collect(),
        };
        if hits.is_empty() {
            return Err(MemoryError::NotFound(query.to_string()));
        }
        let mut out = String::new();
        for (i, r) in hits.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "#{} {}{}", r.seq, r.tool_name, format_args(&r.args));
            out.push_str(&r.result);
        }
        Ok(out)
    }
}

pub(crate) fn format_args(args: &std::collections::BTreeMap<String, String>) -> String {
    let inner: Vec<String> = args.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
    format!("({})", inner.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(seq: u64, tool: &str, result: &str) -> ToolCallRecord {
        ToolCallRecord {
            seq,
            tool_name: tool.into(),
            args: BTreeMap::from([("class_name".into(), "a.B".into())]),
            result: result.into(),
            is_error: false,
            timestamp: seq,
        }
    }

    fn memory() -> EpisodicMemory {
        EpisodicMemory::new(
            "La/B;",
            vec![rec(1, "get_method_body", "body1"), rec(2, "check_class_exists", "true"), rec(3, "get_method_body", "body2")],
        )
    }

    #[test]
    fn retrieve_by_seq_and_name() {
        let m = memory();
        assert!(m.retrieve("2").unwrap().ends_with("\ntrue"));
        let both = m.retrieve("get_method_body").unwrap();
        let (a, b) = (both.find("body1").unwrap(), both.find("body2").unwrap());
        assert!(a < b);
        assert!(matches!(m.retrieve("9"), Err(MemoryError::NotFound(_))));
        assert!(matches!(m.retrieve("nope"), Err(MemoryError::NotFound(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = memory();
        fs::write(&path, m.to_jsonl()).unwrap();
        assert_eq!(EpisodicMemory::load(&path, "La/B;").unwrap(), m);
        fs::write(&path, "{bad\n").unwrap();
        assert!(EpisodicMemory::load(&path, "La/B;").is_err());
    }
}
