//! Onboard image catalog with a byte quota, eviction advice and a
//! CRC-protected append-only journal.

use std::collections::BTreeMap;

use crc::{Crc, CRC_32_ISO_HDLC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenegen::{CaptureMeta, SensorKind};

const JOURNAL_CRC: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("storage full: need {needed} bytes, {available} available")]
    Full { needed: u64, available: u64 },
    #[error("unknown asset {0}")]
    UnknownAsset(u64),
    #[error("empty encoded stream")]
    EmptyStream,
    #[error("invalid quota: {0}")]
    InvalidQuota(String),
    #[error("downlinked bytes {got} exceed stream length {len}")]
    Overrun { got: u64, len: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotaConfig {
    pub capacity_bytes: u64,
    pub high_watermark: f64,
}

impl Default for QuotaConfig {
    fn default() -> Self {
        QuotaConfig { capacity_bytes: 20_000_000, high_watermark: 0.9 }
    }
}

impl QuotaConfig {
    pub fn flight_analog() -> Self {
        QuotaConfig { capacity_bytes: 2_000_000_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.capacity_bytes == 0 {
            return Err(StoreError::InvalidQuota("capacity must be positive".into()));
        }
        if !(self.high_watermark > 0.0 && self.high_watermark <= 1.0) {
            return Err(StoreError::InvalidQuota("high watermark must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn watermark_bytes(&self) -> u64 {
        (self.capacity_bytes as f64 * self.high_watermark).floor() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    None,
    OnboardModel,
    GtFactory,
}

impl LabelSource {
    fn code(self) -> &'static str {
        match self {
            LabelSource::None => "none",
            LabelSource::OnboardModel => "onboard_model",
            LabelSource::GtFactory => "gt_factory",
        }
    }

    fn from_code(s: &str) -> Option<Self> {
        Some(match s {
            "none" => LabelSource::None,
            "onboard_model" => LabelSource::OnboardModel,
            "gt_factory" => LabelSource::GtFactory,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub cloudy: bool,
    pub probability: f64,
}

/// Catalog metadata for one stored image; the stream itself lives alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: u64,
    pub meta: CaptureMeta,
    pub stream_length: u64,
    pub downlinked_bytes: u64,
    pub priority: i32,
    pub label: Option<Label>,
    pub label_source: LabelSource,
}

impl AssetRecord {
    pub fn fully_downlinked(&self) -> bool {
        self.downlinked_bytes >= self.stream_length
    }

    pub fn in_flight(&self) -> bool {
        self.downlinked_bytes > 0 && self.downlinked_bytes < self.stream_length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageAsset {
    pub record: AssetRecord,
    pub stream: Vec<u8>,
}

/// Fields supplied by the capture path; the catalog assigns the id.
#[derive(Clone, Debug, PartialEq)]
pub struct NewAsset {
    pub meta: CaptureMeta,
    pub stream: Vec<u8>,
    pub priority: i32,
    pub label: Option<Label>,
    pub label_source: LabelSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFilter {
    Cloudy,
    Clear,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetFilter {
    pub label: Option<LabelFilter>,
    pub kind: Option<SensorKind>,
}

impl AssetFilter {
    fn matches(&self, r: &AssetRecord) -> bool {
        let label_ok = match self.label {
            None => true,
            Some(LabelFilter::Cloudy) => r.label.is_some_and(|l| l.cloudy),
            Some(LabelFilter::Clear) => r.label.is_some_and(|l| !l.cloudy),
            Some(LabelFilter::Unlabeled) => r.label.is_none(),
        };
        label_ok && self.kind.is_none_or(|k| k == r.meta.kind)
    }
}

pub type AssetSummary = AssetRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    quota: QuotaConfig,
    assets: BTreeMap<u64, ImageAsset>,
    used: u64,
    next_id: u64,
    journal: Vec<JournalRecord>,
}

impl Catalog {
    pub fn new(quota: QuotaConfig) -> Result<Self, StoreError> {
        quota.validate()?;
        Ok(Catalog { quota, assets: BTreeMap::new(), used: 0, next_id: 1, journal: Vec::new() })
    }

    pub fn quota(&self) -> &QuotaConfig {
        &self.quota
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn available(&self) -> u64 {
        self.quota.capacity_bytes - self.used
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&ImageAsset> {
        self.assets.get(&id)
    }

    pub fn assets(&self) -> impl Iterator<Item = &ImageAsset> {
        self.assets.values()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Stores the asset if it fits; nothing changes on failure.
    pub fn put(&mut self, asset: NewAsset) -> Result<u64, StoreError> {
        if asset.stream.is_empty() {
            return Err(StoreError::EmptyStream);
        }
        let len = asset.stream.len() as u64;
        if len > self.available() {
            return Err(StoreError::Full { needed: len, available: self.available() });
        }
        let id = self.next_id;
        self.next_id += 1;
        let record = AssetRecord {
            asset_id: id,
            meta: asset.meta,
            stream_length: len,
            downlinked_bytes: 0,
            priority: asset.priority,
            label: asset.label,
            label_source: asset.label_source,
        };
        self.journal.push(JournalRecord::Put(record.clone()));
        self.assets.insert(id, ImageAsset { record, stream: asset.stream });
        self.used += len;
        Ok(id)
    }

    pub fn delete(&mut self, id: u64) -> Result<ImageAsset, StoreError> {
        let asset = self.assets.remove(&id).ok_or(StoreError::UnknownAsset(id))?;
        self.used -= asset.record.stream_length;
        self.journal.push(JournalRecord::Delete(id));
        Ok(asset)
    }

    fn record_mut(&mut self, id: u64) -> Result<&mut AssetRecord, StoreError> {
        self.assets.get_mut(&id).map(|a| &mut a.record).ok_or(StoreError::UnknownAsset(id))
    }

    pub fn set_priority(&mut self, id: u64, priority: i32) -> Result<(), StoreError> {
        self.record_mut(id)?.priority = priority;
        self.journal.push(JournalRecord::Priority(id, priority));
        Ok(())
    }

    pub fn set_label(&mut self, id: u64, label: Label, source: LabelSource) -> Result<(), StoreError> {
        let r = self.record_mut(id)?;
        r.label = Some(label);
        r.label_source = source;
        self.journal.push(JournalRecord::Label(id, label, source));
        Ok(())
    }

    /// Raises the downlink high-water mark; it never moves backwards.
    pub fn record_downlink(&mut self, id: u64, downlinked_bytes: u64) -> Result<(), StoreError> {
        let r = self.record_mut(id)?;
        if downlinked_bytes > r.stream_length {
            return Err(StoreError::Overrun { got: downlinked_bytes, len: r.stream_length });
        }
        if downlinked_bytes > r.downlinked_bytes {
            r.downlinked_bytes = downlinked_bytes;
            self.journal.push(JournalRecord::Downlinked(id, downlinked_bytes));
        }
        Ok(())
    }

    pub fn over_watermark(&self) -> bool {
        self.used > self.quota.watermark_bytes()
    }

    /// Deletion candidates, in order: fully downlinked assets, then assets
    /// labelled clear that have not started downlinking, each oldest first.
    /// Empty while usage is at or below the high watermark. Assets in flight
    /// are never proposed.
    pub fn evict_policy(&self) -> Vec<u64> {
        if !self.over_watermark() {
            return Vec::new();
        }
        let key = |a: &&ImageAsset| (a.record.meta.time, a.record.asset_id);
        let mut done: Vec<&ImageAsset> = self.assets.values().filter(|a| a.record.fully_downlinked()).collect();
        done.sort_by_key(key);
        let mut clear: Vec<&ImageAsset> = self
            .assets
            .values()
            .filter(|a| a.record.downlinked_bytes == 0 && a.record.label.is_some_and(|l| !l.cloudy))
            .collect();
        clear.sort_by_key(key);
        done.into_iter().chain(clear).map(|a| a.record.asset_id).collect()
    }

    /// Applies the policy until usage is back under the watermark.
    pub fn auto_evict(&mut self) -> Vec<u64> {
        let mut evicted = Vec::new();
        for id in self.evict_policy() {
            if !self.over_watermark() {
                break;
            }
            if self.delete(id).is_ok() {
                evicted.push(id);
            }
        }
        evicted
    }

    /// Summaries ordered by capture time, then id.
    pub fn list_assets(&self, filter: &AssetFilter) -> Vec<AssetSummary> {
        let mut out: Vec<AssetSummary> =
            self.assets.values().filter(|a| filter.matches(&a.record)).map(|a| a.record.clone()).collect();
        out.sort_by_key(|r| (r.meta.time, r.asset_id));
        out
    }

    /// Journal records appended since the last drain.
    pub fn drain_journal(&mut self) -> Vec<JournalRecord> {
        std::mem::take(&mut self.journal)
    }

    /// Snapshot as a compacted journal: one put record per live asset.
    pub fn compact_journal(&self) -> String {
        self.assets.values().map(|a| JournalRecord::Put(a.record.clone()).to_line() + "\n").collect()
    }

    /// Rebuilds a catalog from replayed records and the streams they name.
    /// Records whose stream is missing or has the wrong length are dropped
    /// and reported.
    pub fn restore(
        quota: QuotaConfig,
        records: Vec<AssetRecord>,
        mut stream_for: impl FnMut(u64) -> Option<Vec<u8>>,
    ) -> Result<(Catalog, Vec<u64>), StoreError> {
        let mut cat = Catalog::new(quota)?;
        let mut dropped = Vec::new();
        for r in records {
            match stream_for(r.asset_id) {
                Some(stream) if stream.len() as u64 == r.stream_length && r.stream_length <= cat.available() => {
                    cat.used += r.stream_length;
                    cat.next_id = cat.next_id.max(r.asset_id + 1);
                    cat.assets.insert(r.asset_id, ImageAsset { record: r, stream });
                }
                _ => dropped.push(r.asset_id),
            }
        }
        Ok((cat, dropped))
    }
}

/// One catalog mutation. Serialised as
/// `op \t asset_id \t fields \t crc32` with the CRC-32 (hex) covering
/// everything before the final tab.
#[derive(Clone, Debug, PartialEq)]
pub enum JournalRecord {
    Put(AssetRecord),
    Delete(u64),
    Priority(u64, i32),
    Label(u64, Label, LabelSource),
    Downlinked(u64, u64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JournalError {
    #[error("line {line}: checksum mismatch")]
    Checksum { line: usize },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
}

impl JournalRecord {
    pub fn asset_id(&self) -> u64 {
        match self {
            JournalRecord::Put(r) => r.asset_id,
            JournalRecord::Delete(id)
            | JournalRecord::Priority(id, _)
            | JournalRecord::Label(id, ..)
            | JournalRecord::Downlinked(id, _) => *id,
        }
    }

    pub fn to_line(&self) -> String {
        let id = self.asset_id();
        let body = match self {
            JournalRecord::Put(r) => format!("PUT\t{id}\t{}", serde_json::to_string(r).expect("record serialises")),
            JournalRecord::Delete(_) => format!("DEL\t{id}\t-"),
            JournalRecord::Priority(_, p) => format!("PRI\t{id}\t{p}"),
            JournalRecord::Label(_, l, s) => format!("LBL\t{id}\t{},{},{}", l.cloudy, l.probability, s.code()),
            JournalRecord::Downlinked(_, n) => format!("DLK\t{id}\t{n}"),
        };
        let crc = JOURNAL_CRC.checksum(body.as_bytes());
        format!("{body}\t{crc:08x}")
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<JournalRecord, JournalError> {
        let bad = |reason: &str| JournalError::Malformed { line: line_no, reason: reason.to_string() };
        let (body, crc) = line.rsplit_once('\t').ok_or_else(|| bad("missing checksum"))?;
        let crc = u32::from_str_radix(crc, 16).map_err(|_| bad("checksum not hex"))?;
        if JOURNAL_CRC.checksum(body.as_bytes()) != crc {
            return Err(JournalError::Checksum { line: line_no });
        }
        let mut parts = body.splitn(3, '\t');
        let (op, id, fields) = match (parts.next(), parts.next(), parts.next()) {
            (Some(o), Some(i), Some(f)) => (o, i, f),
            _ => return Err(bad("expected op, id and fields")),
        };
        let id: u64 = id.parse().map_err(|_| bad("asset id"))?;
        Ok(match op {
            "PUT" => {
                let r: AssetRecord = serde_json::from_str(fields).map_err(|e| bad(&e.to_string()))?;
                if r.asset_id != id {
                    return Err(bad("id mismatch"));
                }
                JournalRecord::Put(r)
            }
            "DEL" => JournalRecord::Delete(id),
            "PRI" => JournalRecord::Priority(id, fields.parse().map_err(|_| bad("priority"))?),
            "LBL" => {
                let f: Vec<&str> = fields.split(',').collect();
                let [cloudy, p, src] = f[..] else { return Err(bad("label fields")) };
                let label = Label {
                    cloudy: cloudy.parse().map_err(|_| bad("label flag"))?,
                    probability: p.parse().map_err(|_| bad("label probability"))?,
                };
                JournalRecord::Label(id, label, LabelSource::from_code(src).ok_or_else(|| bad("label source"))?)
            }
            "DLK" => JournalRecord::Downlinked(id, fields.parse().map_err(|_| bad("byte count"))?),
            _ => return Err(bad("unknown op")),
        })
    }
}

/// Replays journal text into the live asset records. Damaged lines are
/// skipped and reported; later records still apply.
pub fn replay_journal(text: &str) -> (Vec<AssetRecord>, Vec<JournalError>) {
    let mut live: BTreeMap<u64, AssetRecord> = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        match JournalRecord::parse_line(line, i + 1) {
            Ok(JournalRecord::Put(r)) => {
                live.insert(r.asset_id, r);
            }
            Ok(JournalRecord::Delete(id)) => {
                live.remove(&id);
            }
            Ok(JournalRecord::Priority(id, p)) => {
                if let Some(r) = live.get_mut(&id) {
                    r.priority = p;
                }
            }
            Ok(JournalRecord::Label(id, l, s)) => {
                if let Some(r) = live.get_mut(&id) {
                    r.label = Some(l);
                    r.label_source = s;
                }
            }
            Ok(JournalRecord::Downlinked(id, n)) => {
                if let Some(r) = live.get_mut(&id) {
                    r.downlinked_bytes = r.downlinked_bytes.max(n.min(r.stream_length));
                }
            }
            Err(e) => errors.push(e),
        }
    }
    (live.into_values().collect(), errors)
}
