//! Framed command/telemetry protocol and the capped, pass-windowed
//! progressive downlink scheduler.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbitsim::{Channel, PassWindow};
use crate::time::SimTime;

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection).
pub const FRAME_CRC: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);
pub const SYNC: [u8; 2] = [0x4C, 0x52];
pub const VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 1024;
/// Sync, version, type, sequence, length.
pub const FRAME_HEADER_LEN: usize = 8;
pub const FRAME_OVERHEAD: usize = FRAME_HEADER_LEN + 2;
/// File-chunk payload prefix: asset id u32 and byte offset u32.
pub const CHUNK_HEADER_LEN: usize = 8;
pub const CHUNK_DATA_BYTES: usize = MAX_PAYLOAD - CHUNK_HEADER_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Command = 1,
    Ack = 2,
    Telemetry = 3,
    FileChunk = 4,
    Event = 5,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameType::Command,
            2 => FrameType::Ack,
            3 => FrameType::Telemetry,
            4 => FrameType::FileChunk,
            5 => FrameType::Event,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub sequence: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("bad sync word")]
    BadSync,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("crc mismatch: computed {computed:#06x}, frame says {received:#06x}")]
    CrcMismatch { computed: u16, received: u16 },
}

impl Frame {
    pub fn new(frame_type: FrameType, sequence: u16, payload: Vec<u8>) -> Result<Self, FrameError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLarge(payload.len()));
        }
        Ok(Frame { frame_type, sequence, payload })
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }

    /// Big-endian wire form; the CRC covers version through payload.
    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLarge(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&SYNC);
        out.push(VERSION);
        out.push(self.frame_type as u8);
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        let crc = FRAME_CRC.checksum(&out[2..]);
        out.extend_from_slice(&crc.to_be_bytes());
        Ok(out)
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        let (frame, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(FrameError::TrailingBytes(bytes.len() - used));
        }
        Ok(frame)
    }

    /// Decodes the frame at the start of `bytes`, returning its length.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
        if bytes.len() < 2 {
            return Err(FrameError::Truncated);
        }
        if bytes[..2] != SYNC {
            return Err(FrameError::BadSync);
        }
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        let len = usize::from(u16::from_be_bytes([bytes[6], bytes[7]]));
        if len > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLarge(len));
        }
        let total = FRAME_OVERHEAD + len;
        if bytes.len() < total {
            return Err(FrameError::Truncated);
        }
        let computed = FRAME_CRC.checksum(&bytes[2..FRAME_HEADER_LEN + len]);
        let received = u16::from_be_bytes([bytes[total - 2], bytes[total - 1]]);
        if computed != received {
            return Err(FrameError::CrcMismatch { computed, received });
        }
        if bytes[2] != VERSION {
            return Err(FrameError::BadVersion(bytes[2]));
        }
        let frame_type = FrameType::from_u8(bytes[3]).ok_or(FrameError::UnknownType(bytes[3]))?;
        let frame = Frame {
            frame_type,
            sequence: u16::from_be_bytes([bytes[4], bytes[5]]),
            payload: bytes[FRAME_HEADER_LEN..FRAME_HEADER_LEN + len].to_vec(),
        };
        Ok((frame, total))
    }
}

/// Splits a byte stream of back-to-back frames.
pub fn decode_frames(mut bytes: &[u8]) -> Result<Vec<Frame>, FrameError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (f, used) = Frame::decode_prefix(bytes)?;
        out.push(f);
        bytes = &bytes[used..];
    }
    Ok(out)
}

/// Link rates, caps and overhead model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub downlink_cap_bytes: u64,
    pub uplink_cap_bytes: u64,
    pub uhf_rate_bps: u64,
    pub sband_rate_bps: u64,
    pub command_reserve_bytes: u64,
    pub framing_overhead: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            downlink_cap_bytes: 1_000_000,
            uplink_cap_bytes: 150_000,
            uhf_rate_bps: 9600,
            sband_rate_bps: 2_000_000,
            command_reserve_bytes: 2048,
            framing_overhead: 0.05,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("invalid link config: {0}")]
    InvalidConfig(String),
    #[error("uplink rejected: {kind:?} of {size} bytes, {remaining} bytes left today")]
    UplinkRejected { kind: UplinkKind, size: u64, remaining: u64 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: &str| Err(LinkError::InvalidConfig(m.into()));
        if self.uhf_rate_bps == 0 || self.sband_rate_bps == 0 {
            return bad("rates must be positive");
        }
        if !(100_000..=200_000).contains(&self.uplink_cap_bytes) {
            return bad("uplink cap must be within 100000..=200000 bytes");
        }
        if self.downlink_cap_bytes == 0 {
            return bad("downlink cap must be positive");
        }
        if !(0.0..1.0).contains(&self.framing_overhead) {
            return bad("framing overhead must be in [0, 1)");
        }
        Ok(())
    }

    pub fn rate_bps(&self, channel: Channel) -> u64 {
        match channel {
            Channel::Uhf => self.uhf_rate_bps,
            Channel::Sband => self.sband_rate_bps,
        }
    }

    /// Payload bytes a window can carry after framing overhead.
    pub fn window_capacity(&self, window: &PassWindow) -> u64 {
        let raw = self.rate_bps(window.channel) as f64 * window.duration_s() as f64 / 8.0;
        (raw * (1.0 - self.framing_overhead)).floor() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UplinkKind {
    Command,
    LabelBatch,
    FileRepair,
}

/// Per-day byte ledgers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub day: NaiveDate,
    pub config: LinkConfig,
    pub downlink_used: u64,
    pub uplink_used: u64,
    pub reserve_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UplinkCharge {
    pub from_cap: u64,
    pub from_reserve: u64,
}

impl LinkBudget {
    pub fn new(config: LinkConfig, day: NaiveDate) -> Result<Self, LinkError> {
        config.validate()?;
        Ok(LinkBudget { day, config, downlink_used: 0, uplink_used: 0, reserve_used: 0 })
    }

    /// Fresh ledgers for `day`; same day keeps the current ones.
    pub fn roll_to(&mut self, day: NaiveDate) {
        if day != self.day {
            *self = LinkBudget { day, config: self.config.clone(), downlink_used: 0, uplink_used: 0, reserve_used: 0 };
        }
    }

    pub fn downlink_remaining(&self) -> u64 {
        self.config.downlink_cap_bytes.saturating_sub(self.downlink_used)
    }

    pub fn uplink_remaining(&self) -> u64 {
        self.config.uplink_cap_bytes.saturating_sub(self.uplink_used)
    }

    pub fn reserve_remaining(&self) -> u64 {
        self.config.command_reserve_bytes.saturating_sub(self.reserve_used)
    }

    /// Charges `bytes` of downlink, failing without change past the cap.
    pub fn charge_downlink(&mut self, bytes: u64) -> bool {
        if bytes > self.downlink_remaining() {
            return false;
        }
        self.downlink_used += bytes;
        true
    }
}

/// Charges an uplink of `size` framed bytes. Commands that do not fit the
/// daily cap may draw on the command reserve.
pub fn uplink_submit(budget: &mut LinkBudget, kind: UplinkKind, size: u64) -> Result<UplinkCharge, LinkError> {
    if size <= budget.uplink_remaining() {
        budget.uplink_used += size;
        return Ok(UplinkCharge { from_cap: size, from_reserve: 0 });
    }
    if kind == UplinkKind::Command && size <= budget.reserve_remaining() {
        budget.reserve_used += size;
        return Ok(UplinkCharge { from_cap: 0, from_reserve: size });
    }
    let remaining =
        budget.uplink_remaining() + if kind == UplinkKind::Command { budget.reserve_remaining() } else { 0 };
    Err(LinkError::UplinkRejected { kind, size, remaining })
}

/// Bytes needed to carry `payload_len` bytes in frames of at most
/// `MAX_PAYLOAD`.
pub fn framed_size(payload_len: usize) -> u64 {
    let frames = payload_len.div_ceil(MAX_PAYLOAD).max(1);
    (payload_len + frames * FRAME_OVERHEAD) as u64
}

/// Splits a payload into sequenced frames of the given type.
pub fn frame_payload(frame_type: FrameType, seq: &mut u16, payload: &[u8]) -> Vec<Frame> {
    let chunks: Vec<&[u8]> = if payload.is_empty() { vec![&[][..]] } else { payload.chunks(MAX_PAYLOAD).collect() };
    chunks
        .into_iter()
        .map(|c| {
            let f = Frame { frame_type, sequence: *seq, payload: c.to_vec() };
            *seq = seq.wrapping_add(1);
            f
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "segments", rename_all = "snake_case")]
pub enum TransferTarget {
    Thumbnail,
    /// Through segment `k` (1-based count of segments).
    Preview(u8),
    Full,
}

impl TransferTarget {
    /// Byte offset at which the target is satisfied, given segment end
    /// offsets of the stream.
    pub fn boundary(self, segment_ends: &[usize], stream_len: usize) -> u64 {
        let at = |k: usize| segment_ends.get(k.saturating_sub(1)).copied().unwrap_or(stream_len);
        let end = match self {
            TransferTarget::Thumbnail => at(1),
            TransferTarget::Preview(k) => at(usize::from(k.max(1))),
            TransferTarget::Full => stream_len,
        };
        end.min(stream_len) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Queued,
    Active,
    Paused,
    Complete,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSession {
    pub session_id: u64,
    pub asset_id: u64,
    pub target: TransferTarget,
    pub target_end: u64,
    pub next_offset: u64,
    pub state: SessionState,
    pub priority: i32,
    pub created_seq: u64,
}

impl TransferSession {
    /// New session resuming at `start_offset` (the asset's downlinked bytes).
    pub fn new(
        session_id: u64,
        asset_id: u64,
        target: TransferTarget,
        target_end: u64,
        start_offset: u64,
        priority: i32,
    ) -> Self {
        let mut s = TransferSession {
            session_id,
            asset_id,
            target,
            target_end,
            next_offset: start_offset,
            state: SessionState::Queued,
            priority,
            created_seq: session_id,
        };
        if s.next_offset >= s.target_end {
            s.state = SessionState::Complete;
        }
        s
    }

    pub fn remaining(&self) -> u64 {
        self.target_end.saturating_sub(self.next_offset)
    }

    pub fn is_schedulable(&self) -> bool {
        matches!(self.state, SessionState::Queued | SessionState::Active) && self.remaining() > 0
    }

    pub fn abort(&mut self) {
        if self.state != SessionState::Complete {
            self.state = SessionState::Aborted;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub window_index: usize,
    pub station_id: String,
    pub channel: Channel,
    pub window_start: SimTime,
    pub session_id: u64,
    pub asset_id: u64,
    pub offset: u64,
    pub bytes: u64,
}

impl Grant {
    /// `(offset, len)` pieces that each fit one file-chunk frame.
    pub fn chunks(&self) -> Vec<(u64, u64)> {
        let step = CHUNK_DATA_BYTES as u64;
        let end = self.offset + self.bytes;
        (self.offset..end).step_by(CHUNK_DATA_BYTES).map(|o| (o, step.min(end - o))).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub grants: Vec<Grant>,
}

impl Schedule {
    pub fn total_bytes(&self) -> u64 {
        self.grants.iter().map(|g| g.bytes).sum()
    }

    pub fn for_window(&self, index: usize) -> impl Iterator<Item = &Grant> {
        self.grants.iter().filter(move |g| g.window_index == index)
    }
}

/// Greedy downlink plan for one day.
///
/// Windows are served in time order. Inside a window, sessions are served
/// by priority (high first) then creation order, each receiving as much of
/// its remaining target as the window and the daily cap allow. The cap is
/// shared by all channels.
pub fn plan_day(budget: &LinkBudget, windows: &[PassWindow], sessions: &[TransferSession]) -> Schedule {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| (windows[i].start, windows[i].channel as u8, i));
    let mut queue: Vec<&TransferSession> = sessions.iter().filter(|s| s.is_schedulable()).collect();
    queue.sort_by_key(|s| (std::cmp::Reverse(s.priority), s.created_seq, s.session_id));
    let mut cursor: BTreeMap<u64, u64> = queue.iter().map(|s| (s.session_id, s.next_offset)).collect();

    let mut day_left = budget.downlink_remaining();
    let mut grants = Vec::new();
    for wi in order {
        let w = &windows[wi];
        let mut left = budget.config.window_capacity(w).min(day_left);
        for s in &queue {
            if left == 0 {
                break;
            }
            let at = cursor[&s.session_id];
            let want = s.target_end.saturating_sub(at);
            let bytes = want.min(left);
            if bytes == 0 {
                continue;
            }
            grants.push(Grant {
                window_index: wi,
                station_id: w.station_id.clone(),
                channel: w.channel,
                window_start: w.start,
                session_id: s.session_id,
                asset_id: s.asset_id,
                offset: at,
                bytes,
            });
            cursor.insert(s.session_id, at + bytes);
            left -= bytes;
            day_left -= bytes;
        }
    }
    Schedule { grants }
}

pub fn chunk_payload(asset_id: u64, offset: u64, data: &[u8]) -> Vec<u8> {
    let mut p = Vec::with_capacity(CHUNK_HEADER_LEN + data.len());
    p.extend_from_slice(&(asset_id as u32).to_be_bytes());
    p.extend_from_slice(&(offset as u32).to_be_bytes());
    p.extend_from_slice(data);
    p
}

pub fn parse_chunk(payload: &[u8]) -> Option<(u64, u64, &[u8])> {
    if payload.len() < CHUNK_HEADER_LEN {
        return None;
    }
    let id = u32::from_be_bytes(payload[0..4].try_into().ok()?);
    let off = u32::from_be_bytes(payload[4..8].try_into().ok()?);
    Some((u64::from(id), u64::from(off), &payload[CHUNK_HEADER_LEN..]))
}

/// Sends up to `grant_bytes` of `stream` from the session's offset, never
/// past its target. Sessions that are paused, aborted or complete send
/// nothing.
pub fn transmit_step(
    session: &TransferSession,
    grant_bytes: u64,
    stream: &[u8],
    seq: &mut u16,
) -> (Vec<Frame>, TransferSession) {
    let mut s = session.clone();
    if !matches!(s.state, SessionState::Queued | SessionState::Active) || grant_bytes == 0 {
        return (Vec::new(), s);
    }
    s.state = SessionState::Active;
    let end = (s.next_offset + grant_bytes.min(s.remaining())).min(stream.len() as u64);
    let mut frames = Vec::new();
    let mut at = s.next_offset;
    while at < end {
        let n = (end - at).min(CHUNK_DATA_BYTES as u64);
        let data = &stream[at as usize..(at + n) as usize];
        frames.push(Frame {
            frame_type: FrameType::FileChunk,
            sequence: *seq,
            payload: chunk_payload(s.asset_id, at, data),
        });
        *seq = seq.wrapping_add(1);
        at += n;
    }
    s.next_offset = at;
    if s.next_offset >= s.target_end {
        s.state = SessionState::Complete;
    }
    (frames, s)
}

/// Ground-side reassembly of downlinked streams.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundReceiver {
    received: BTreeMap<u64, Vec<u8>>,
    pub rejected_frames: u64,
    pub gaps: u64,
}

impl GroundReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts wire bytes of one frame; corrupt frames are counted and dropped.
    pub fn accept_bytes(&mut self, bytes: &[u8]) -> Option<Frame> {
        match Frame::decode(bytes) {
            Ok(f) => {
                self.accept(&f);
                Some(f)
            }
            Err(_) => {
                self.rejected_frames += 1;
                None
            }
        }
    }

    /// Appends in-order chunk data; duplicates are ignored and gaps counted
    /// so the range can be re-requested.
    pub fn accept(&mut self, frame: &Frame) {
        if frame.frame_type != FrameType::FileChunk {
            return;
        }
        let Some((asset, offset, data)) = parse_chunk(&frame.payload) else {
            self.rejected_frames += 1;
            return;
        };
        let buf = self.received.entry(asset).or_default();
        let have = buf.len() as u64;
        if offset > have {
            self.gaps += 1;
        } else if offset + data.len() as u64 > have {
            buf.extend_from_slice(&data[(have - offset) as usize..]);
        }
    }

    pub fn received(&self, asset_id: u64) -> &[u8] {
        self.received.get(&asset_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn assets(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.received.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Seeds the buffer of an asset, e.g. after a restart.
    pub fn insert(&mut self, asset_id: u64, bytes: Vec<u8>) {
        self.received.insert(asset_id, bytes);
    }
}
