//! Progressive DC-first block-transform image codec (`LPC1` container).
//!
//! The stream is a header followed by independently decodable segments. The
//! first segment carries only the DC coefficient of every 8x8 block, so a
//! short prefix already yields a full-resolution (blocky) preview. Later
//! segments add zigzag bands of AC coefficients; in lossless mode a final
//! segment carries the exact pixel-domain residual, Rice-coded per channel.
//! The encoder drops a band from any block where it would raise that block's
//! error, so PSNR never falls as segments arrive.
//!
//! Header, little-endian:
//!
//! ```text
//! magic "LPC1" | width u32 | height u32 | channels u8 | bit_depth u8 (8)
//! quality u8 | segment_count u8 | lossless_flag u8
//! segment_length u32 x segment_count
//! band_end u8 x (segment_count - lossless_flag)
//! ```
//!
//! `band_end` lists the last zigzag index of each coefficient band, so a
//! decoder can interpret any segment plan.
//!
//! All transform and quantisation arithmetic is integer, so streams are
//! bit-reproducible.

mod entropy;
pub mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Image, RasterError};
use transform::{fdct, idct, quant_table, quantize, rct_forward, rct_inverse, ZIGZAG};

pub use entropy::TokenError;

pub const MAGIC: [u8; 4] = *b"LPC1";
const FIXED_HEADER_LEN: usize = 17;
const MAX_SAMPLES: u64 = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid segment plan: {0}")]
    InvalidPlan(String),
    #[error("quality must be in 1..=100, got {0}")]
    InvalidQuality(u8),
    #[error("format error: {0}")]
    Format(String),
    #[error("stream truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("segment {index} corrupt: {reason}")]
    SegmentCorrupt { index: usize, reason: String },
    #[error("cannot compare {0}")]
    InvalidComparison(String),
}

impl From<RasterError> for CodecError {
    fn from(e: RasterError) -> Self {
        CodecError::InvalidImage(e.to_string())
    }
}

/// Zigzag index ranges (inclusive) coded as successive segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub bands: Vec<(u8, u8)>,
}

impl Default for SegmentPlan {
    fn default() -> Self {
        SegmentPlan { bands: vec![(0, 0), (1, 5), (6, 20), (21, 62), (63, 63)] }
    }
}

impl SegmentPlan {
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::InvalidPlan(m.to_string()));
        if self.bands.first() != Some(&(0, 0)) {
            return bad("first band must be the DC coefficient alone");
        }
        if self.bands.len() > 64 {
            return bad("too many bands");
        }
        let mut next = 0u8;
        for &(lo, hi) in &self.bands {
            if lo != next || hi < lo || hi > 63 {
                return bad("bands must partition 0..=63 in order");
            }
            next = hi + 1;
        }
        if next != 64 {
            return bad("bands must end at 63");
        }
        Ok(())
    }

    fn from_ends(ends: &[u8]) -> Result<Self, CodecError> {
        let mut bands = Vec::with_capacity(ends.len());
        let mut lo = 0u8;
        for &hi in ends {
            if hi < lo || hi > 63 {
                return Err(CodecError::Format("band table not increasing".into()));
            }
            bands.push((lo, hi));
            lo = hi.saturating_add(1);
        }
        let plan = SegmentPlan { bands };
        plan.validate().map_err(|e| CodecError::Format(e.to_string()))?;
        Ok(plan)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LpcHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub bit_depth: u8,
    pub quality: u8,
    pub lossless: bool,
    pub segment_lengths: Vec<u32>,
    pub plan: SegmentPlan,
}

impl LpcHeader {
    pub fn segment_count(&self) -> usize {
        self.segment_lengths.len()
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + 5 * self.segment_count() - usize::from(self.lossless)
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&[
            self.channels,
            self.bit_depth,
            self.quality,
            self.segment_count() as u8,
            u8::from(self.lossless),
        ]);
        for len in &self.segment_lengths {
            out.extend_from_slice(&len.to_le_bytes());
        }
        out.extend(self.plan.bands.iter().map(|b| b.1));
    }

    /// Parses the header; returns it with its byte length.
    pub fn parse(buf: &[u8]) -> Result<(LpcHeader, usize), CodecError> {
        let need = |n: usize| {
            if buf.len() < n {
                Err(CodecError::Format(format!("truncated header: need {n} bytes, have {}", buf.len())))
            } else {
                Ok(())
            }
        };
        need(4)?;
        if buf[..4] != MAGIC {
            return Err(CodecError::Format("bad magic".into()));
        }
        need(FIXED_HEADER_LEN)?;
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
        let (width, height) = (u32_at(4), u32_at(8));
        let (channels, bit_depth, quality, count, lossless) = (buf[12], buf[13], buf[14], buf[15], buf[16]);
        if width == 0 || height == 0 {
            return Err(CodecError::Format("zero dimension".into()));
        }
        if !(channels == 1 || channels == 3) {
            return Err(CodecError::Format(format!("unsupported channel count {channels}")));
        }
        if u64::from(width) * u64::from(height) * u64::from(channels) > MAX_SAMPLES {
            return Err(CodecError::Format("image too large".into()));
        }
        if bit_depth != 8 {
            return Err(CodecError::Format(format!("unsupported bit depth {bit_depth}")));
        }
        if !(1..=100).contains(&quality) {
            return Err(CodecError::Format(format!("quality {quality} out of range")));
        }
        if lossless > 1 {
            return Err(CodecError::Format("lossless flag must be 0 or 1".into()));
        }
        let count = usize::from(count);
        let bands = count.checked_sub(usize::from(lossless)).filter(|&b| b >= 1);
        let Some(bands) = bands else {
            return Err(CodecError::Format("no coefficient segments".into()));
        };
        let len = FIXED_HEADER_LEN + 4 * count + bands;
        need(len)?;
        let segment_lengths: Vec<u32> = (0..count).map(|i| u32_at(FIXED_HEADER_LEN + 4 * i)).collect();
        let ends = &buf[FIXED_HEADER_LEN + 4 * count..len];
        let plan = SegmentPlan::from_ends(ends)?;
        let header =
            LpcHeader { width, height, channels, bit_depth, quality, lossless: lossless == 1, segment_lengths, plan };
        Ok((header, len))
    }

    /// Absolute end offset of every segment.
    pub fn segment_ends(&self) -> Vec<usize> {
        let mut at = self.encoded_len();
        self.segment_lengths
            .iter()
            .map(|&l| {
                at += l as usize;
                at
            })
            .collect()
    }
}

/// End offset of each segment in an encoded stream (header included).
pub fn segment_ends(stream: &[u8]) -> Result<Vec<usize>, CodecError> {
    Ok(LpcHeader::parse(stream)?.0.segment_ends())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedImage {
    pub image: Image,
    pub segments_used: usize,
}

struct Geometry {
    width: usize,
    height: usize,
    channels: usize,
    bw: usize,
    bh: usize,
}

impl Geometry {
    fn new(width: u32, height: u32, channels: u8) -> Self {
        let (w, h) = (width as usize, height as usize);
        Geometry { width: w, height: h, channels: channels as usize, bw: w.div_ceil(8), bh: h.div_ceil(8) }
    }

    fn blocks(&self) -> usize {
        self.bw * self.bh
    }
}

/// Quantised coefficients in zigzag order: `[channel][block][k]`.
type Coefs = Vec<[i32; 64]>;

fn to_planes(image: &Image) -> Vec<Vec<i32>> {
    let n = image.plane_len();
    if image.channels == 1 {
        return vec![image.data.iter().map(|&s| i32::from(s) - 128).collect()];
    }
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    let mut planes = vec![vec![0i32; n]; 3];
    for i in 0..n {
        let (y, cb, cr) = rct_forward(i32::from(r[i]), i32::from(g[i]), i32::from(b[i]));
        planes[0][i] = y;
        planes[1][i] = cb;
        planes[2][i] = cr;
    }
    planes
}

fn forward(geo: &Geometry, planes: &[Vec<i32>], qt: &[i32; 64]) -> Coefs {
    let mut out = Vec::with_capacity(geo.channels * geo.blocks());
    for plane in planes {
        for by in 0..geo.bh {
            for bx in 0..geo.bw {
                let mut block = [0i32; 64];
                for y in 0..8 {
                    let sy = (by * 8 + y).min(geo.height - 1);
                    for x in 0..8 {
                        let sx = (bx * 8 + x).min(geo.width - 1);
                        block[y * 8 + x] = plane[sy * geo.width + sx];
                    }
                }
                let f = fdct(&block);
                let mut zz = [0i32; 64];
                for (k, &pos) in ZIGZAG.iter().enumerate() {
                    zz[k] = quantize(f[pos], qt[pos]);
                }
                out.push(zz);
            }
        }
    }
    out
}

/// Decoded pixels of the block at `b`, one `[u8; 64]` per output channel;
/// entries past `geo.channels` are unused. Samples outside the image are
/// computed but never read.
fn block_pixels(geo: &Geometry, coefs: &Coefs, qt: &[i32; 64], b: usize) -> [[u8; 64]; 3] {
    let mut planes = [[0i32; 64]; 3];
    for (c, plane) in planes.iter_mut().enumerate().take(geo.channels) {
        let zz = &coefs[c * geo.blocks() + b];
        let mut f = [0i32; 64];
        for (k, &pos) in ZIGZAG.iter().enumerate() {
            f[pos] = zz[k].saturating_mul(qt[pos]);
        }
        *plane = idct(&f);
    }
    let clamp = |v: i32| v.clamp(0, 255) as u8;
    let mut out = [[0u8; 64]; 3];
    if geo.channels == 1 {
        for (o, &v) in out[0].iter_mut().zip(&planes[0]) {
            *o = clamp(v + 128);
        }
        return out;
    }
    for i in 0..64 {
        let (r, g, bl) = rct_inverse(planes[0][i], planes[1][i], planes[2][i]);
        out[0][i] = clamp(r);
        out[1][i] = clamp(g);
        out[2][i] = clamp(bl);
    }
    out
}

/// Top-left sample of block `b` and the extent of the block inside the
/// image.
fn block_extent(geo: &Geometry, b: usize) -> (usize, usize, usize, usize) {
    let (x0, y0) = (b % geo.bw * 8, b / geo.bw * 8);
    (x0, y0, (geo.width - x0).min(8), (geo.height - y0).min(8))
}

fn reconstruct(geo: &Geometry, coefs: &Coefs, qt: &[i32; 64]) -> Image {
    let n = geo.width * geo.height;
    let mut data = vec![0u8; n * geo.channels];
    for b in 0..geo.blocks() {
        let px = block_pixels(geo, coefs, qt, b);
        let (x0, y0, w, h) = block_extent(geo, b);
        for (c, block) in px.iter().enumerate().take(geo.channels) {
            for y in 0..h {
                let row = c * n + (y0 + y) * geo.width + x0;
                data[row..row + w].copy_from_slice(&block[y * 8..y * 8 + w]);
            }
        }
    }
    Image { width: geo.width as u32, height: geo.height as u32, channels: geo.channels as u8, data }
}

fn block_sse(geo: &Geometry, image: &Image, px: &[[u8; 64]; 3], b: usize) -> u64 {
    let n = image.plane_len();
    let (x0, y0, w, h) = block_extent(geo, b);
    let mut sse = 0u64;
    for (c, block) in px.iter().enumerate().take(geo.channels) {
        for y in 0..h {
            let row = c * n + (y0 + y) * geo.width + x0;
            for (&d, &o) in block[y * 8..y * 8 + w].iter().zip(&image.data[row..row + w]) {
                let e = u64::from(d.abs_diff(o));
                sse += e * e;
            }
        }
    }
    sse
}

/// Drops a band from a block when adding it would raise that block's
/// squared error, so every longer prefix decodes at least as close to the
/// original as a shorter one.
fn prune_bands(geo: &Geometry, image: &Image, coefs: &Coefs, qt: &[i32; 64], bands: &[(u8, u8)]) -> Coefs {
    let mut kept: Coefs = vec![[0i32; 64]; coefs.len()];
    let mut err = vec![0u64; geo.blocks()];
    for (index, &(lo, hi)) in bands.iter().enumerate() {
        let (lo, hi) = (usize::from(lo), usize::from(hi));
        for (b, block_err) in err.iter_mut().enumerate() {
            let slots = (0..geo.channels).map(|c| c * geo.blocks() + b);
            if index > 0 && slots.clone().all(|s| coefs[s][lo..=hi].iter().all(|&v| v == 0)) {
                continue;
            }
            let mut saved = [[0i32; 64]; 3];
            for (c, s) in slots.clone().enumerate() {
                saved[c] = kept[s];
                kept[s][lo..=hi].copy_from_slice(&coefs[s][lo..=hi]);
            }
            let e = block_sse(geo, image, &block_pixels(geo, &kept, qt, b), b);
            if index == 0 || e <= *block_err {
                *block_err = e;
            } else {
                for (c, s) in slots.enumerate() {
                    kept[s] = saved[c];
                }
            }
        }
    }
    kept
}

/// DC prediction: left neighbour, or the block above at the start of a row.
fn dc_predictor(geo: &Geometry, dcs: &[i32], b: usize) -> i32 {
    if !b.is_multiple_of(geo.bw) {
        dcs[b - 1]
    } else if b >= geo.bw {
        dcs[b - geo.bw]
    } else {
        0
    }
}

/// Band values in channel, block-raster, zigzag order. The DC band holds
/// prediction residuals.
fn band_values(geo: &Geometry, coefs: &Coefs, (lo, hi): (u8, u8)) -> Vec<i32> {
    let (lo, hi) = (usize::from(lo), usize::from(hi));
    let mut values = Vec::with_capacity(coefs.len() * (hi - lo + 1));
    for c in 0..geo.channels {
        let blocks = &coefs[c * geo.blocks()..(c + 1) * geo.blocks()];
        let dcs: Vec<i32> = blocks.iter().map(|zz| zz[0]).collect();
        for (b, zz) in blocks.iter().enumerate() {
            for (k, &v) in zz.iter().enumerate().take(hi + 1).skip(lo) {
                values.push(if k == 0 { v - dc_predictor(geo, &dcs, b) } else { v });
            }
        }
    }
    values
}

fn apply_band(geo: &Geometry, coefs: &mut Coefs, (lo, hi): (u8, u8), values: &[i32]) {
    let (lo, hi) = (usize::from(lo), usize::from(hi));
    let mut it = values.iter();
    for c in 0..geo.channels {
        let blocks = &mut coefs[c * geo.blocks()..(c + 1) * geo.blocks()];
        let mut dcs = vec![0i32; blocks.len()];
        for (b, zz) in blocks.iter_mut().enumerate() {
            for (k, slot) in zz.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let v = *it.next().expect("band length checked by decoder");
                if k == 0 {
                    dcs[b] = v.wrapping_add(dc_predictor(geo, &dcs, b));
                    *slot = dcs[b];
                } else {
                    *slot = v;
                }
            }
        }
    }
}

fn encode_band(geo: &Geometry, coefs: &Coefs, band: (u8, u8)) -> Vec<u8> {
    let values = band_values(geo, coefs, band);
    if band == (0, 0) {
        entropy::encode_rice(&values, geo.channels)
    } else {
        entropy::encode_values(&values)
    }
}

fn decode_band(geo: &Geometry, band: (u8, u8), bytes: &[u8]) -> Result<Vec<i32>, TokenError> {
    if band == (0, 0) {
        entropy::decode_rice(bytes, geo.channels, geo.blocks())
    } else {
        entropy::decode_values(bytes, geo.channels * geo.blocks() * usize::from(band.1 - band.0 + 1))
    }
}

/// Encodes `image` into an `LPC1` stream.
pub fn encode(image: &Image, quality: u8, lossless: bool, plan: &SegmentPlan) -> Result<Vec<u8>, CodecError> {
    image.check()?;
    if u64::from(image.width) * u64::from(image.height) * u64::from(image.channels) > MAX_SAMPLES {
        return Err(CodecError::InvalidImage("image too large".into()));
    }
    if !(1..=100).contains(&quality) {
        return Err(CodecError::InvalidQuality(quality));
    }
    plan.validate()?;
    if plan.bands.len() + usize::from(lossless) > 255 {
        return Err(CodecError::InvalidPlan("too many segments".into()));
    }

    let geo = Geometry::new(image.width, image.height, image.channels);
    let qt = quant_table(quality);
    let coefs = prune_bands(&geo, image, &forward(&geo, &to_planes(image), &qt), &qt, &plan.bands);

    let mut segments: Vec<Vec<u8>> = plan.bands.iter().map(|&band| encode_band(&geo, &coefs, band)).collect();
    if lossless {
        let recon = reconstruct(&geo, &coefs, &qt);
        let residual: Vec<i32> =
            image.data.iter().zip(&recon.data).map(|(&a, &b)| i32::from(a) - i32::from(b)).collect();
        segments.push(entropy::encode_rice(&residual, geo.channels));
    }

    let header = LpcHeader {
        width: image.width,
        height: image.height,
        channels: image.channels,
        bit_depth: 8,
        quality,
        lossless,
        segment_lengths: segments.iter().map(|s| s.len() as u32).collect(),
        plan: plan.clone(),
    };
    let mut out = Vec::with_capacity(header.encoded_len() + segments.iter().map(Vec::len).sum::<usize>());
    header.write(&mut out);
    for s in &segments {
        out.extend_from_slice(s);
    }
    Ok(out)
}

/// Decodes every complete segment in `prefix`; a partial trailing segment is
/// ignored and missing coefficients are zero.
pub fn decode(prefix: &[u8]) -> Result<DecodedImage, CodecError> {
    let (header, header_len) = LpcHeader::parse(prefix)?;
    let ends = header.segment_ends();
    if prefix.len() < ends[0] {
        return Err(CodecError::Truncated { needed: ends[0], have: prefix.len() });
    }
    let complete = ends.iter().take_while(|&&e| e <= prefix.len()).count();
    let geo = Geometry::new(header.width, header.height, header.channels);
    let qt = quant_table(header.quality);
    let mut coefs: Coefs = vec![[0i32; 64]; geo.channels * geo.blocks()];

    let band_segments = header.plan.bands.len();
    let mut start = header_len;
    for (index, &end) in ends.iter().enumerate().take(complete.min(band_segments)) {
        let band = header.plan.bands[index];
        let values = decode_band(&geo, band, &prefix[start..end])
            .map_err(|e| CodecError::SegmentCorrupt { index, reason: e.to_string() })?;
        apply_band(&geo, &mut coefs, band, &values);
        start = end;
    }
    let mut image = reconstruct(&geo, &coefs, &qt);

    if header.lossless && complete == header.segment_count() {
        let index = band_segments;
        let residual = entropy::decode_rice(&prefix[start..ends[index]], geo.channels, image.plane_len())
            .map_err(|e| CodecError::SegmentCorrupt { index, reason: e.to_string() })?;
        for (s, r) in image.data.iter_mut().zip(residual) {
            let v = i64::from(*s) + i64::from(r);
            if !(0..=255).contains(&v) {
                return Err(CodecError::SegmentCorrupt { index, reason: "residual out of range".into() });
            }
            *s = v as u8;
        }
    }
    Ok(DecodedImage { image, segments_used: complete })
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, CodecError> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(CodecError::InvalidComparison(format!(
            "{}x{}x{} with {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let sse: u64 = a.data.iter().zip(&b.data).map(|(&x, &y)| u64::from(x.abs_diff(y)).pow(2)).sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data.len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// `(bytes_used, psnr)` at every segment boundary.
pub fn quality_curve(stream: &[u8], original: &Image) -> Result<Vec<(usize, f64)>, CodecError> {
    let ends = segment_ends(stream)?;
    ends.iter()
        .map(|&end| {
            let slice = stream.get(..end).ok_or(CodecError::Truncated { needed: end, have: stream.len() })?;
            let d = decode(slice)?;
            Ok((end, psnr(&d.image, original)?))
        })
        .collect()
}
