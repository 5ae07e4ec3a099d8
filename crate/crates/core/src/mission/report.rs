//! Run reports and event-log summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::events::{Category, EventRecord};
use crate::time::SimTime;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayLedger {
    pub date: String,
    pub downlink_used: u64,
    pub uplink_used: u64,
    pub reserve_used: u64,
    pub captures: u64,
    pub thumbnails_completed: u64,
    pub grants: u64,
    pub evictions: u64,
    pub faults: u64,
    pub scans: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalEnvelope {
    pub nano_min_c: f64,
    pub nano_max_c: f64,
    pub nano_max_active_c: f64,
    pub frame_min_c: f64,
    pub frame_max_c: f64,
    pub active_steps: u64,
    pub total_steps: u64,
    /// Active steps that started outside the operating limits.
    pub active_limit_violations: u64,
}

impl Default for ThermalEnvelope {
    fn default() -> Self {
        ThermalEnvelope {
            nano_min_c: f64::INFINITY,
            nano_max_c: f64::NEG_INFINITY,
            nano_max_active_c: f64::NEG_INFINITY,
            frame_min_c: f64::INFINITY,
            frame_max_c: f64::NEG_INFINITY,
            active_steps: 0,
            total_steps: 0,
            active_limit_violations: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrityStats {
    pub scans: u64,
    pub faults_injected: u64,
    pub copies_corrupted: u64,
    pub copies_restored: u64,
    pub unrecoverable_reports: u64,
    pub repairs_uploaded: u64,
    pub unrecoverable_now: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub time: SimTime,
    pub model_version: u32,
    pub trained_on: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub scenario: String,
    pub master_seed: u64,
    pub start: SimTime,
    pub end: SimTime,
    pub captures: u64,
    pub days: Vec<DayLedger>,
    pub thermal: ThermalEnvelope,
    pub integrity: IntegrityStats,
    pub accuracy_trace: Vec<AccuracyPoint>,
    pub catalog_assets: usize,
    pub catalog_used_bytes: u64,
    pub ground_bytes_received: u64,
    pub event_counts: BTreeMap<String, u64>,
    pub event_log_sha256: String,
}

impl MissionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} seed {}", self.scenario, self.master_seed);
        let _ = writeln!(s, "span {} .. {}", self.start.iso8601(), self.end.iso8601());
        let _ = writeln!(
            s,
            "captures {}  catalog {} assets / {} bytes",
            self.captures, self.catalog_assets, self.catalog_used_bytes
        );
        let _ = writeln!(s, "ground received {} bytes", self.ground_bytes_received);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>7} {:>7} {:>5} {:>6} {:>6} {:>5} {:>6}",
            "date", "downlink", "uplink", "reserve", "capt", "thumbs", "grants", "evict", "faults"
        );
        for d in &self.days {
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>7} {:>7} {:>5} {:>6} {:>6} {:>5} {:>6}",
                d.date,
                d.downlink_used,
                d.uplink_used,
                d.reserve_used,
                d.captures,
                d.thumbnails_completed,
                d.grants,
                d.evictions,
                d.faults
            );
        }
        let t = &self.thermal;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "thermal nano {:.2}..{:.2} C (active max {:.2} C), frame {:.2}..{:.2} C, active {}/{} steps, limit violations {}",
            t.nano_min_c, t.nano_max_c, t.nano_max_active_c, t.frame_min_c, t.frame_max_c, t.active_steps, t.total_steps, t.active_limit_violations
        );
        let i = &self.integrity;
        let _ = writeln!(
            s,
            "integrity scans {} faults {} corrupted {} restored {} unrecoverable reports {} repairs {}",
            i.scans,
            i.faults_injected,
            i.copies_corrupted,
            i.copies_restored,
            i.unrecoverable_reports,
            i.repairs_uploaded
        );
        if !i.unrecoverable_now.is_empty() {
            let _ = writeln!(s, "unrecoverable now: {}", i.unrecoverable_now.join(", "));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "model accuracy trace");
        for p in &self.accuracy_trace {
            let _ =
                writeln!(s, "  {}  v{}  n={}  acc {:.3}", p.time.iso8601(), p.model_version, p.trained_on, p.accuracy);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "events");
        for (k, v) in &self.event_counts {
            let _ = writeln!(s, "  {k:<13} {v}");
        }
        let _ = writeln!(s, "event log sha256 {}", self.event_log_sha256);
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTotals {
    pub downlink_bytes: u64,
    pub uplink_bytes: u64,
    pub captures: u64,
}

/// Aggregate view of an event log, tolerant of bad lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub lines: usize,
    pub counts: BTreeMap<String, u64>,
    pub downlink_bytes: u64,
    pub uplink_bytes: u64,
    pub first: Option<SimTime>,
    pub last: Option<SimTime>,
    pub per_day: BTreeMap<String, DayTotals>,
    /// Times that went backwards relative to the previous good line.
    pub out_of_order: u64,
    pub warnings: Vec<String>,
}

impl Default for LogSummary {
    fn default() -> Self {
        LogSummary {
            lines: 0,
            counts: Category::ALL.iter().map(|c| (c.as_str().to_string(), 0)).collect(),
            downlink_bytes: 0,
            uplink_bytes: 0,
            first: None,
            last: None,
            per_day: BTreeMap::new(),
            out_of_order: 0,
            warnings: Vec::new(),
        }
    }
}

impl LogSummary {
    pub fn from_text(text: &str) -> Self {
        let mut s = LogSummary::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            s.lines += 1;
            match EventRecord::parse_line(line, i + 1) {
                Ok(e) => s.add(&e),
                Err(err) => s.warnings.push(err.to_string()),
            }
        }
        s
    }

    pub fn from_events(events: &[EventRecord]) -> Self {
        let mut s = LogSummary::default();
        for e in events {
            s.lines += 1;
            s.add(e);
        }
        s
    }

    fn add(&mut self, e: &EventRecord) {
        if self.last.is_some_and(|l| e.time < l) {
            self.out_of_order += 1;
        }
        self.first.get_or_insert(e.time);
        self.last = Some(self.last.map_or(e.time, |l| l.max(e.time)));
        *self.counts.entry(e.category.as_str().to_string()).or_default() += 1;
        let day = self.per_day.entry(e.time.date().to_string()).or_default();
        match e.category {
            Category::Grant => {
                let b = e.get_u64("bytes").unwrap_or(0);
                self.downlink_bytes += b;
                day.downlink_bytes += b;
            }
            Category::Uplink => {
                let b = e.get_u64("bytes").unwrap_or(0);
                self.uplink_bytes += b;
                day.uplink_bytes += b;
            }
            Category::Capture => day.captures += 1,
            _ => {}
        }
    }

    pub fn count(&self, c: Category) -> u64 {
        self.counts.get(c.as_str()).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let span = match (self.first, self.last) {
            (Some(a), Some(b)) => format!("{} .. {}", a.iso8601(), b.iso8601()),
            _ => "empty".into(),
        };
        let _ = writeln!(s, "{} lines, {span}", self.lines);
        for (k, v) in &self.counts {
            let _ = writeln!(s, "  {k:<13} {v}");
        }
        let _ = writeln!(s, "downlink {} bytes, uplink {} bytes", self.downlink_bytes, self.uplink_bytes);
        for (d, t) in &self.per_day {
            let _ =
                writeln!(s, "  {d}  down {:>9}  up {:>7}  captures {}", t.downlink_bytes, t.uplink_bytes, t.captures);
        }
        if self.out_of_order > 0 {
            let _ = writeln!(s, "out-of-order lines: {}", self.out_of_order);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
