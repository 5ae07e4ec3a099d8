//! In-memory payload filesystem: a flat map of paths to byte arrays.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::integrity::{compute_digest, Digest};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FsError {
    #[error("storage full: need {needed} bytes, {available} available")]
    Full { needed: u64, available: u64 },
    #[error("no such file: {0}")]
    NotFound(String),
}

/// Byte-array filesystem with an optional total capacity.
///
/// Paths are plain strings; iteration order is lexicographic so anything
/// that samples files (fault injection) is deterministic. Digests are
/// memoised per file and dropped on any mutation.
#[derive(Clone, Debug, Default)]
pub struct SimFs {
    files: BTreeMap<String, Vec<u8>>,
    digests: BTreeMap<String, Digest>,
    capacity: Option<u64>,
    used: u64,
}

impl SimFs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: u64) -> Self {
        SimFs { capacity: Some(capacity), ..Self::default() }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn write(&mut self, path: &str, data: &[u8]) -> Result<(), FsError> {
        let old = self.files.get(path).map_or(0, |d| d.len() as u64);
        let new_used = self.used - old + data.len() as u64;
        if let Some(cap) = self.capacity {
            if new_used > cap {
                return Err(FsError::Full { needed: data.len() as u64, available: cap - (self.used - old) });
            }
        }
        self.files.insert(path.to_string(), data.to_vec());
        self.digests.remove(path);
        self.used = new_used;
        Ok(())
    }

    pub fn read(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    /// MD5 of a file's current content.
    pub fn digest(&mut self, path: &str) -> Option<Digest> {
        if let Some(d) = self.digests.get(path) {
            return Some(*d);
        }
        let d = compute_digest(self.files.get(path)?);
        self.digests.insert(path.to_string(), d);
        Some(d)
    }

    pub fn remove(&mut self, path: &str) -> Result<Vec<u8>, FsError> {
        let data = self.files.remove(path).ok_or_else(|| FsError::NotFound(path.to_string()))?;
        self.digests.remove(path);
        self.used -= data.len() as u64;
        Ok(data)
    }

    pub fn exists(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Flips a single bit in place. Returns `false` if the file or offset does not exist.
    pub fn flip_bit(&mut self, path: &str, byte_offset: usize, bit: u8) -> bool {
        match self.files.get_mut(path).and_then(|d| d.get_mut(byte_offset)) {
            Some(b) => {
                *b ^= 1 << (bit & 7);
                self.digests.remove(path);
                true
            }
            None => false,
        }
    }
}
