use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// One executed `tools/call`, including failed ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub seq: u64,
    pub tool_name: String,
    pub args: BTreeMap<String, String>,
    pub result: String,
    #[serde(default)]
    pub is_error: bool,
    /// Milliseconds since the epoch, or the sequence number under a logical
    /// clock.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    Wall,
    /// Timestamps equal the sequence number so runs are reproducible.
    Logical,
}

impl Clock {
    fn stamp(self, seq: u64) -> u64 {
        match self {
            Clock::Logical => seq,
            Clock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }
}

/// Append-only record log with an optional line-delimited JSON sink.
pub struct Recorder {
    records: Vec<ToolCallRecord>,
    sink: Option<Box<dyn Write + Send>>,
    clock: Clock,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder")
            .field("records", &self.records.len())
            .field("clock", &self.clock)
            .finish()
    }
}

impl Recorder {
    pub fn new(clock: Clock) -> Self {
        Recorder { records: Vec::new(), sink: None, clock }
    }

    pub fn with_sink(clock: Clock, sink: Box<dyn Write + Send>) -> Self {
        Recorder { records: Vec::new(), sink: Some(sink), clock }
    }

    /// Appends a record with the next sequence number (starting at 1) and
    /// writes it through to the sink.
    pub fn record(
        &mut self,
        tool_name: &str,
        args: BTreeMap<String, String>,
        result: &str,
        is_error: bool,
    ) -> io::Result<&ToolCallRecord> {
        let seq = self.records.len() as u64 + 1;
        let rec = ToolCallRecord {
            seq,
            tool_name: tool_name.to_string(),
            args,
            result: result.to_string(),
            is_error,
            timestamp: self.clock.stamp(seq),
        };
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&rec).map_err(io::Error::other)?;
            writeln!(sink, "{line}")?;
            sink.flush()?;
        }
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[ToolCallRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ToolCallRecord> {
        self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().write(buf)
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sequence_and_sink() {
        let buf = Shared::default();
        let mut r = Recorder::with_sink(Clock::Logical, Box::new(buf.clone()));
        r.record("a", BTreeMap::new(), "x", false).unwrap();
        r.record("b", BTreeMap::from([("k".into(), "v".into())]), "y", true).unwrap();
        let seqs: Vec<u64> = r.records().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2]);
        assert_eq!(r.records()[1].timestamp, 2);
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let back: Vec<ToolCallRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, r.records());
    }
}
