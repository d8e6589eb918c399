//! Append-only log of every prompt and response.

use super::payload::{ActionPayload, ToPayload};
use super::Exchange;
use agora_llm::TokenUsage;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Cp,
    Sp,
    Resident,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Prompt,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub role: AgentRole,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<u32>,
    pub direction: Direction,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<ActionPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    /// Milliseconds since the Unix epoch, only when timing is recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

#[derive(Debug, Default)]
pub struct Transcript {
    entries: Mutex<Vec<TranscriptEntry>>,
    record_time: bool,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stamp entries with wall-clock time. Runs are then no longer
    /// byte-reproducible.
    pub fn with_timestamps() -> Self {
        Self { entries: Mutex::default(), record_time: true }
    }

    fn now(&self) -> Option<u64> {
        self.record_time
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0))
    }

    /// Append every turn of `exchange`; the payload goes on the last response.
    pub fn commit<T: ToPayload>(&self, role: AgentRole, agent_id: Option<u32>, exchange: &Exchange<T>) {
        let mut entries = self.entries.lock();
        let n = exchange.turns.len();
        for (i, turn) in exchange.turns.iter().enumerate() {
            let ts = self.now();
            let seq = entries.len() as u64;
            entries.push(TranscriptEntry {
                seq,
                role,
                agent_id,
                direction: Direction::Prompt,
                text: turn.prompt.clone(),
                payload: None,
                usage: None,
                timestamp_ms: ts,
            });
            entries.push(TranscriptEntry {
                seq: seq + 1,
                role,
                agent_id,
                direction: Direction::Response,
                text: turn.response.clone(),
                payload: (i + 1 == n).then(|| exchange.payload.to_payload()),
                usage: turn.usage,
                timestamp_ms: ts,
            });
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().clone()
    }

    /// Entries with `seq > after`; everything when `after` is `None`.
    pub fn after(&self, after: Option<u64>) -> Vec<TranscriptEntry> {
        let entries = self.entries.lock();
        let start = after.map_or(0, |s| (s + 1) as usize).min(entries.len());
        entries[start..].to_vec()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entries.lock().iter() {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<TranscriptEntry>, _>>()?;
        Ok(Self { entries: Mutex::new(entries), record_time: false })
    }
}
