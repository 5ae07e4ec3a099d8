//! Mission event log: one line per event, `time \t category \t k=v \t k=v ...`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Capture,
    Scan,
    Fault,
    Grant,
    Chunk,
    GateDeny,
    Label,
    ModelUpdate,
    Evict,
    Error,
    Ack,
    Reject,
    Uplink,
    Payload,
    Day,
}

impl Category {
    pub const ALL: [Category; 15] = [
        Category::Capture,
        Category::Scan,
        Category::Fault,
        Category::Grant,
        Category::Chunk,
        Category::GateDeny,
        Category::Label,
        Category::ModelUpdate,
        Category::Evict,
        Category::Error,
        Category::Ack,
        Category::Reject,
        Category::Uplink,
        Category::Payload,
        Category::Day,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Capture => "capture",
            Category::Scan => "scan",
            Category::Fault => "fault",
            Category::Grant => "grant",
            Category::Chunk => "chunk",
            Category::GateDeny => "gate_deny",
            Category::Label => "label",
            Category::ModelUpdate => "model_update",
            Category::Evict => "evict",
            Category::Error => "error",
            Category::Ack => "ack",
            Category::Reject => "reject",
            Category::Uplink => "uplink",
            Category::Payload => "payload",
            Category::Day => "day",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: SimTime,
    pub category: Category,
    pub details: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EventParseError {
    #[error("line {line}: expected time and category")]
    MissingFields { line: usize },
    #[error("line {line}: bad timestamp {value:?}")]
    BadTime { line: usize, value: String },
    #[error("line {line}: unknown category {value:?}")]
    UnknownCategory { line: usize, value: String },
    #[error("line {line}: detail {value:?} is not key=value")]
    BadDetail { line: usize, value: String },
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl EventRecord {
    pub fn new(time: SimTime, category: Category) -> Self {
        EventRecord { time, category, details: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.details.push((clean(key).replace('=', "_"), clean(&value.to_string())));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.details.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key)?.parse().ok()
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("{}\t{}", self.time.iso8601(), self.category);
        for (k, v) in &self.details {
            s.push('\t');
            s.push_str(k);
            s.push('=');
            s.push_str(v);
        }
        s
    }

    /// Parses one line; `line` is the 1-based number used in errors.
    pub fn parse_line(text: &str, line: usize) -> Result<Self, EventParseError> {
        let mut parts = text.split('\t');
        let (Some(ts), Some(cat)) = (parts.next(), parts.next()) else {
            return Err(EventParseError::MissingFields { line });
        };
        let time = SimTime::parse_rfc3339(ts).map_err(|_| EventParseError::BadTime { line, value: ts.into() })?;
        let category = cat.parse().map_err(|_| EventParseError::UnknownCategory { line, value: cat.into() })?;
        let mut details = Vec::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| EventParseError::BadDetail { line, value: p.into() })?;
            details.push((k.to_string(), v.to_string()));
        }
        Ok(EventRecord { time, category, details })
    }
}

/// Full log text, newline-terminated.
pub fn log_text(events: &[EventRecord]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    s
}

/// SHA-256 of the log text, hex.
pub fn log_hash(events: &[EventRecord]) -> String {
    let mut h = Sha256::new();
    for e in events {
        h.update(e.to_line().as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
