//! Entropy coding of signed coefficient streams.
//!
//! AC bands use byte-aligned tokens: each value is a
//! zigzag-mapped LEB128 varint, and a zero is followed by a second varint
//! counting how many further zeros it stands for, so long zero runs cost two
//! bytes.
//!
//! The DC band and the lossless residual use a bit-packed Rice code with one
//! parameter per channel; DC residuals are dense and small and a whole byte
//! per block would dominate the thumbnail.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenError {
    VarintOverflow,
    UnexpectedEnd,
    RunTooLong,
    TrailingBytes,
    BadParameter,
}

impl std::fmt::Display for TokenError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TokenError::VarintOverflow => "varint overflow",
            TokenError::UnexpectedEnd => "stream ended early",
            TokenError::RunTooLong => "zero run past end of band",
            TokenError::TrailingBytes => "trailing bytes after band",
            TokenError::BadParameter => "invalid rice parameter",
        })
    }
}

pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn read_varint(buf: &[u8], pos: &mut usize) -> Result<u64, TokenError> {
    let mut v = 0u64;
    for shift in (0..35).step_by(7) {
        let b = *buf.get(*pos).ok_or(TokenError::UnexpectedEnd)?;
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return if v > u64::from(u32::MAX) { Err(TokenError::VarintOverflow) } else { Ok(v) };
        }
    }
    Err(TokenError::VarintOverflow)
}

#[inline]
fn zigzag(v: i32) -> u64 {
    u64::from(((v << 1) ^ (v >> 31)) as u32)
}

#[inline]
fn unzigzag(u: u64) -> i32 {
    let u = u as u32;
    ((u >> 1) as i32) ^ -((u & 1) as i32)
}

pub fn encode_values(values: &[i32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() / 2 + 4);
    let mut i = 0;
    while i < values.len() {
        let v = values[i];
        write_varint(&mut out, zigzag(v));
        i += 1;
        if v == 0 {
            let run = values[i..].iter().take_while(|&&x| x == 0).count();
            write_varint(&mut out, run as u64);
            i += run;
        }
    }
    out
}

/// Decodes exactly `count` values; the buffer must be consumed completely.
pub fn decode_values(buf: &[u8], count: usize) -> Result<Vec<i32>, TokenError> {
    let mut out = Vec::with_capacity(count);
    let mut pos = 0;
    while out.len() < count {
        let v = unzigzag(read_varint(buf, &mut pos)?);
        out.push(v);
        if v == 0 {
            let run = read_varint(buf, &mut pos)? as usize;
            if run > count - out.len() {
                return Err(TokenError::RunTooLong);
            }
            out.resize(out.len() + run, 0);
        }
    }
    if pos != buf.len() {
        return Err(TokenError::TrailingBytes);
    }
    Ok(out)
}

const RICE_ESCAPE: u64 = 24;
const MAX_RICE_K: u8 = 24;
/// Parameter byte marking a channel whose values are all zero; no bits follow.
const RICE_ZEROS: u8 = 0xff;

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    bits: u32,
}

impl BitWriter {
    fn put(&mut self, value: u64, n: u32) {
        for i in (0..n).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.bits += 1;
            if self.bits == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.bits = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.bits > 0 {
            self.out.push((self.acc << (8 - self.bits)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn bit(&mut self) -> Result<u64, TokenError> {
        let byte = *self.buf.get(self.pos / 8).ok_or(TokenError::UnexpectedEnd)?;
        let b = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(u64::from(b))
    }

    fn take(&mut self, n: u32) -> Result<u64, TokenError> {
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.bit()?;
        }
        Ok(v)
    }
}

fn rice_cost(values: &[i32], k: u8) -> u64 {
    values
        .iter()
        .map(|&v| {
            let q = zigzag(v) >> k;
            if q < RICE_ESCAPE {
                q + 1 + u64::from(k)
            } else {
                RICE_ESCAPE + 32
            }
        })
        .sum()
}

/// Rice-codes `values`, split into `channels` equal runs with their own
/// parameter. Layout: one parameter byte per channel, then the bit stream
/// (MSB first, zero padded to a byte). An all-zero channel costs only its
/// parameter byte.
pub fn encode_rice(values: &[i32], channels: usize) -> Vec<u8> {
    let per = values.len().checked_div(channels).unwrap_or(0);
    let chunks: Vec<&[i32]> = (0..channels).map(|c| &values[c * per..(c + 1) * per]).collect();
    let ks: Vec<u8> = chunks
        .iter()
        .map(|ch| {
            if !ch.is_empty() && ch.iter().all(|&v| v == 0) {
                RICE_ZEROS
            } else {
                (0..=MAX_RICE_K).min_by_key(|&k| rice_cost(ch, k)).unwrap_or(0)
            }
        })
        .collect();
    let mut w = BitWriter { out: ks.clone(), acc: 0, bits: 0 };
    for (chunk, &k) in chunks.iter().zip(&ks) {
        if k == RICE_ZEROS {
            continue;
        }
        for &v in *chunk {
            let u = zigzag(v);
            let q = u >> k;
            if q < RICE_ESCAPE {
                w.put((1 << q) - 1, q as u32);
                w.put(0, 1);
                w.put(u, u32::from(k));
            } else {
                w.put((1 << RICE_ESCAPE) - 1, RICE_ESCAPE as u32);
                w.put(u, 32);
            }
        }
    }
    w.finish()
}

/// Decodes `channels * per_channel` Rice-coded values; padding must be zero
/// and the buffer consumed completely.
pub fn decode_rice(buf: &[u8], channels: usize, per_channel: usize) -> Result<Vec<i32>, TokenError> {
    if buf.len() < channels {
        return Err(TokenError::UnexpectedEnd);
    }
    let (ks, body) = buf.split_at(channels);
    if ks.iter().any(|&k| k > MAX_RICE_K && k != RICE_ZEROS) {
        return Err(TokenError::BadParameter);
    }
    let mut r = BitReader { buf: body, pos: 0 };
    let mut out = Vec::with_capacity(channels * per_channel);
    for &k in ks {
        if k == RICE_ZEROS {
            out.resize(out.len() + per_channel, 0);
            continue;
        }
        for _ in 0..per_channel {
            let mut q = 0;
            while q < RICE_ESCAPE && r.bit()? == 1 {
                q += 1;
            }
            let u = if q == RICE_ESCAPE { r.take(32)? } else { (q << k) | r.take(u32::from(k))? };
            if u > u64::from(u32::MAX) {
                return Err(TokenError::VarintOverflow);
            }
            out.push(unzigzag(u));
        }
    }
    if r.pos.div_ceil(8) != body.len() {
        return Err(TokenError::TrailingBytes);
    }
    while !r.pos.is_multiple_of(8) {
        if r.bit()? != 0 {
            return Err(TokenError::TrailingBytes);
        }
    }
    Ok(out)
}
