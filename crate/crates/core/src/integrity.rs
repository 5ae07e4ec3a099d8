//! File integrity monitor: a manifest of protected files, each stored as a
//! live copy plus backups, verified against a stored MD5 digest.
//!
//! A scan digests every copy of every entry. Copies that do not match are
//! rewritten from the first copy that does; live copies and backups are
//! treated alike. If no copy matches, the entry is reported unrecoverable and
//! nothing is touched until a verified upload arrives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use md5::{Digest as _, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fs::{FsError, SimFs};
use crate::time::SimTime;

/// Interval between scans while the payload is powered.
pub const SCAN_INTERVAL_S: i64 = 60;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 16]);

impl Digest {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        if s.len() != 32 || !s.is_ascii() {
            return None;
        }
        let mut out = [0u8; 16];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hex = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(hex, 16).ok()?;
        }
        Some(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn compute_digest(content: &[u8]) -> Digest {
    Digest(Md5::digest(content).into())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("entry {0:?} already registered")]
    Duplicate(String),
    #[error("unknown entry {0:?}")]
    UnknownEntry(String),
    #[error("need at least one backup")]
    NoBackups,
    #[error("uploaded content digest {got} does not match stored {expected}")]
    RejectedUpload { expected: Digest, got: Digest },
    #[error(transparent)]
    Storage(#[from] FsError),
    #[error("manifest line {line}: {reason}")]
    BadManifestLine { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub logical_name: String,
    /// Live copy first.
    pub copies: Vec<String>,
    pub stored_digest: Digest,
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad digest hex"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub scan_time: SimTime,
    pub files_checked: usize,
    pub copies_corrupted: usize,
    pub copies_restored: usize,
    pub unrecoverable: Vec<String>,
}

impl ScanReport {
    pub fn is_clean(&self) -> bool {
        self.copies_corrupted == 0 && self.unrecoverable.is_empty()
    }
}

/// Path of backup `index` (1-based) for a live path.
pub fn backup_path(live: &str, index: usize) -> String {
    format!("backup{index}/{live}")
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    entries: BTreeMap<String, ManifestEntry>,
    unrecoverable: BTreeSet<String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values()
    }

    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unrecoverable(&self) -> &BTreeSet<String> {
        &self.unrecoverable
    }

    /// Stores `content` as a live file named `logical_name` plus `n_backups`
    /// copies, and records its digest.
    pub fn register(
        &mut self,
        fs: &mut SimFs,
        logical_name: &str,
        content: &[u8],
        n_backups: usize,
    ) -> Result<ManifestEntry, IntegrityError> {
        if self.entries.contains_key(logical_name) {
            return Err(IntegrityError::Duplicate(logical_name.to_string()));
        }
        if n_backups == 0 {
            return Err(IntegrityError::NoBackups);
        }
        let copies: Vec<String> = std::iter::once(logical_name.to_string())
            .chain((1..=n_backups).map(|i| backup_path(logical_name, i)))
            .collect();
        write_all_or_rollback(fs, &copies, content)?;
        let entry =
            ManifestEntry { logical_name: logical_name.to_string(), copies, stored_digest: compute_digest(content) };
        self.entries.insert(logical_name.to_string(), entry.clone());
        Ok(entry)
    }

    /// Replaces the protected content of an existing entry (digest rotation).
    pub fn reregister(
        &mut self,
        fs: &mut SimFs,
        logical_name: &str,
        content: &[u8],
    ) -> Result<ManifestEntry, IntegrityError> {
        let entry =
            self.entries.get_mut(logical_name).ok_or_else(|| IntegrityError::UnknownEntry(logical_name.to_string()))?;
        write_all_or_rollback(fs, &entry.copies, content)?;
        entry.stored_digest = compute_digest(content);
        self.unrecoverable.remove(logical_name);
        Ok(entry.clone())
    }

    pub fn unregister(&mut self, fs: &mut SimFs, logical_name: &str) -> Result<ManifestEntry, IntegrityError> {
        let entry =
            self.entries.remove(logical_name).ok_or_else(|| IntegrityError::UnknownEntry(logical_name.to_string()))?;
        for c in &entry.copies {
            let _ = fs.remove(c);
        }
        self.unrecoverable.remove(logical_name);
        Ok(entry)
    }

    pub fn scan_once(&mut self, fs: &mut SimFs, now: SimTime) -> ScanReport {
        let mut report = ScanReport { scan_time: now, ..ScanReport::default() };
        for entry in self.entries.values() {
            report.files_checked += 1;
            let intact: Vec<bool> = entry.copies.iter().map(|p| fs.digest(p) == Some(entry.stored_digest)).collect();
            let bad = intact.iter().filter(|ok| !**ok).count();
            report.copies_corrupted += bad;
            if bad == 0 {
                self.unrecoverable.remove(&entry.logical_name);
                continue;
            }
            let Some(src) = intact.iter().position(|ok| *ok) else {
                self.unrecoverable.insert(entry.logical_name.clone());
                report.unrecoverable.push(entry.logical_name.clone());
                continue;
            };
            let good = fs.read(&entry.copies[src]).expect("intact copy exists").to_vec();
            for (path, ok) in entry.copies.iter().zip(&intact) {
                if !ok && fs.write(path, &good).is_ok() {
                    report.copies_restored += 1;
                }
            }
            self.unrecoverable.remove(&entry.logical_name);
        }
        report
    }

    /// Accepts a ground-uploaded copy if it matches the stored digest and
    /// rewrites every copy with it.
    pub fn repair_from_uplink(
        &mut self,
        fs: &mut SimFs,
        logical_name: &str,
        content: &[u8],
    ) -> Result<ManifestEntry, IntegrityError> {
        let entry =
            self.entries.get(logical_name).ok_or_else(|| IntegrityError::UnknownEntry(logical_name.to_string()))?;
        let got = compute_digest(content);
        if got != entry.stored_digest {
            return Err(IntegrityError::RejectedUpload { expected: entry.stored_digest, got });
        }
        for path in &entry.copies {
            let current_ok = fs.digest(path) == Some(got);
            if !current_ok {
                fs.write(path, content)?;
            }
        }
        self.unrecoverable.remove(logical_name);
        Ok(entry.clone())
    }

    /// Line-oriented manifest: name, hex digest, copy paths; tab-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&e.logical_name);
            out.push('\t');
            out.push_str(&e.stored_digest.to_hex());
            for c in &e.copies {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }

    /// Parses a persisted manifest. Lines that fail to parse are returned as
    /// errors and their entries are left out; the caller treats them as
    /// total corruption of those entries.
    pub fn from_text(text: &str) -> (Manifest, Vec<IntegrityError>) {
        let mut m = Manifest::new();
        let mut errors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |reason: &str| IntegrityError::BadManifestLine { line: i + 1, reason: reason.to_string() };
            if fields.len() < 4 {
                errors.push(bad("expected name, digest and at least two copies"));
                continue;
            }
            let Some(digest) = Digest::from_hex(fields[1]) else {
                errors.push(bad("malformed digest"));
                continue;
            };
            let copies: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
            let distinct: BTreeSet<&String> = copies.iter().collect();
            if distinct.len() != copies.len() {
                errors.push(bad("duplicate copy paths"));
                continue;
            }
            let name = fields[0].to_string();
            if m.entries.contains_key(&name) {
                errors.push(bad("duplicate entry"));
                continue;
            }
            m.entries.insert(name.clone(), ManifestEntry { logical_name: name, copies, stored_digest: digest });
        }
        (m, errors)
    }
}

fn write_all_or_rollback(fs: &mut SimFs, paths: &[String], content: &[u8]) -> Result<(), IntegrityError> {
    let previous: Vec<Option<Vec<u8>>> = paths.iter().map(|p| fs.read(p).map(<[u8]>::to_vec)).collect();
    for (i, p) in paths.iter().enumerate() {
        if let Err(e) = fs.write(p, content) {
            for (q, old) in paths[..i].iter().zip(&previous) {
                match old {
                    Some(d) => {
                        let _ = fs.write(q, d);
                    }
                    None => {
                        let _ = fs.remove(q);
                    }
                }
            }
            return Err(e.into());
        }
    }
    Ok(())
}

/// Periodic scheduler: scans every [`SCAN_INTERVAL_S`] while the payload is
/// powered, immediately on the first powered step after an idle period.
#[derive(Clone, Debug, Default)]
pub struct ScanSchedule {
    next_due: Option<SimTime>,
}

impl ScanSchedule {
    pub fn due(&mut self, now: SimTime, active: bool) -> bool {
        if !active {
            return false;
        }
        match self.next_due {
            Some(t) if now < t => false,
            _ => {
                self.next_due = Some(now.plus_secs(SCAN_INTERVAL_S));
                true
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md5_reference_vectors() {
        assert_eq!(compute_digest(b"").to_hex(), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(compute_digest(b"abc").to_hex(), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(compute_digest(b"message digest").to_hex(), "f96b697d7cb7938d525a2f31aaf161d0");
    }

    #[test]
    fn digest_of_digest_differs() {
        for s in [&b""[..], b"a", b"abc", b"the quick brown fox", &[0u8; 1000]] {
            let d = compute_digest(s);
            assert_ne!(compute_digest(&d.0), d);
            assert_ne!(compute_digest(d.to_hex().as_bytes()), d);
        }
    }

    #[test]
    fn register_fanout() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        let e = m.register(&mut fs, "a.bin", b"hello", 1).unwrap();
        assert_eq!(e.copies.len(), 2);
        let e = m.register(&mut fs, "b.bin", b"world", 3).unwrap();
        assert_eq!(e.copies.len(), 4);
        assert!(e.copies.iter().all(|c| compute_digest(fs.read(c).unwrap()) == e.stored_digest));
        assert_eq!(m.register(&mut fs, "a.bin", b"x", 1), Err(IntegrityError::Duplicate("a.bin".into())));
        assert_eq!(m.register(&mut fs, "c.bin", b"x", 0), Err(IntegrityError::NoBackups));
        assert!(m.scan_once(&mut fs, SimTime(0)).is_clean());
    }

    #[test]
    fn register_storage_full_leaves_no_partial_copies() {
        let mut fs = SimFs::with_capacity(25);
        let mut m = Manifest::new();
        let err = m.register(&mut fs, "big", &[1; 10], 2).unwrap_err();
        assert!(matches!(err, IntegrityError::Storage(FsError::Full { .. })));
        assert_eq!(fs.used(), 0);
        assert!(m.is_empty());
    }

    #[test]
    fn live_corrupted_restored_from_backup() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        let e = m.register(&mut fs, "f", b"payload-data", 1).unwrap();
        fs.flip_bit("f", 3, 2);
        let r = m.scan_once(&mut fs, SimTime(0));
        assert_eq!((r.copies_corrupted, r.copies_restored), (1, 1));
        assert!(e.copies.iter().all(|c| fs.read(c).unwrap() == b"payload-data"));
    }

    #[test]
    fn backup_corrupted_restored_from_live() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        m.register(&mut fs, "f", b"payload-data", 1).unwrap();
        fs.flip_bit(&backup_path("f", 1), 0, 0);
        let r = m.scan_once(&mut fs, SimTime(0));
        assert_eq!(r.copies_restored, 1);
        assert_eq!(fs.read(&backup_path("f", 1)).unwrap(), b"payload-data");
    }

    #[test]
    fn missing_copy_counts_as_corrupted() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        m.register(&mut fs, "f", b"abc", 2).unwrap();
        fs.remove(&backup_path("f", 2)).unwrap();
        let r = m.scan_once(&mut fs, SimTime(0));
        assert_eq!((r.copies_corrupted, r.copies_restored), (1, 1));
        assert!(fs.exists(&backup_path("f", 2)));
    }

    #[test]
    fn all_corrupted_is_logged_and_untouched() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        m.register(&mut fs, "f", b"abcdef", 1).unwrap();
        fs.flip_bit("f", 0, 0);
        fs.flip_bit(&backup_path("f", 1), 5, 7);
        let before = (fs.read("f").unwrap().to_vec(), fs.read(&backup_path("f", 1)).unwrap().to_vec());
        let r = m.scan_once(&mut fs, SimTime(0));
        assert_eq!(r.unrecoverable, vec!["f".to_string()]);
        assert_eq!(r.copies_restored, 0);
        assert_eq!(fs.read("f").unwrap(), before.0.as_slice());
        assert_eq!(fs.read(&backup_path("f", 1)).unwrap(), before.1.as_slice());
        assert!(m.unrecoverable().contains("f"));
    }

    #[test]
    fn uplink_repair() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        m.register(&mut fs, "f", b"good", 1).unwrap();
        fs.flip_bit("f", 0, 0);
        fs.flip_bit(&backup_path("f", 1), 0, 1);
        m.scan_once(&mut fs, SimTime(0));
        let err = m.repair_from_uplink(&mut fs, "f", b"bad!").unwrap_err();
        assert!(matches!(err, IntegrityError::RejectedUpload { .. }));
        assert!(m.unrecoverable().contains("f"));
        m.repair_from_uplink(&mut fs, "f", b"good").unwrap();
        assert!(m.unrecoverable().is_empty());
        assert!(m.scan_once(&mut fs, SimTime(0)).is_clean());
        // idempotent on a clean entry
        let used = fs.used();
        m.repair_from_uplink(&mut fs, "f", b"good").unwrap();
        assert_eq!(fs.used(), used);
        assert!(m.scan_once(&mut fs, SimTime(0)).is_clean());
    }

    #[test]
    fn manifest_text_round_trip_and_bad_lines() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        m.register(&mut fs, "a", b"1", 1).unwrap();
        m.register(&mut fs, "b", b"2", 3).unwrap();
        let text = m.to_text();
        let (back, errs) = Manifest::from_text(&text);
        assert!(errs.is_empty());
        assert_eq!(back.entries().cloned().collect::<Vec<_>>(), m.entries().cloned().collect::<Vec<_>>());
        let damaged = text.replacen('\t', " ", 1);
        let (partial, errs) = Manifest::from_text(&damaged);
        assert_eq!(errs.len(), 1);
        assert_eq!(partial.len(), 1);
    }

    #[test]
    fn reregister_rotates_digest() {
        let mut fs = SimFs::new();
        let mut m = Manifest::new();
        m.register(&mut fs, "cat", b"v1", 2).unwrap();
        m.reregister(&mut fs, "cat", b"v2").unwrap();
        assert!(m.scan_once(&mut fs, SimTime(0)).is_clean());
        assert_eq!(fs.read(&backup_path("cat", 2)).unwrap(), b"v2");
    }

    #[test]
    fn schedule_cadence() {
        let mut s = ScanSchedule::default();
        let t0 = SimTime(0);
        assert!(!s.due(t0, false));
        assert!(s.due(t0, true));
        let fired: Vec<i64> =
            (1..=18).map(|k| t0.plus_secs(k * 10)).filter(|t| s.due(*t, true)).map(|t| t.0 / 1000).collect();
        assert_eq!(fired, vec![60, 120, 180]);
    }
}
