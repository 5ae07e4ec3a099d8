//! Onboard cloud labeller: image features, a logistic model, seeded
//! fine-tuning, and the ground-side label factory.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Image;
use crate::scalar::Real;
use crate::scenegen::SceneTruth;

pub const FEATURES: usize = 16;
pub const MODEL_MAGIC: [u8; 4] = *b"CMDL";
pub const DEFAULT_PARAM_BUDGET: usize = 4096;
pub const CLOUDY_FRACTION: f64 = 0.3;
pub const LABEL_RECORD_LEN: usize = 6;
const HIST_BINS: usize = 6;
const BRIGHT_LUMA: u32 = 180;
const WHITE_SPREAD: u32 = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AiError {
    #[error("model format: {0}")]
    ModelFormat(String),
    #[error("model of {size} bytes exceeds budget of {budget}")]
    OverBudget { size: usize, budget: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("label batch length {0} is not a multiple of {LABEL_RECORD_LEN}")]
    LabelBatch(usize),
}

/// Image descriptor: per-quadrant luma mean (4) and standard deviation (4)
/// in raw 0..255 units, 6-bin luma histogram fractions, fraction of bright
/// low-saturation pixels, and a constant 1.
pub type FeatureVector<T> = [T; FEATURES];

fn luma_at(image: &Image, i: usize) -> (u32, u32) {
    let n = image.plane_len();
    if image.channels == 3 {
        let (r, g, b) = (u32::from(image.data[i]), u32::from(image.data[n + i]), u32::from(image.data[2 * n + i]));
        let spread = r.max(g).max(b) - r.min(g).min(b);
        ((r + 2 * g + b) / 4, spread)
    } else {
        (u32::from(image.data[i]), 0)
    }
}

pub fn extract_features<T: Real>(image: &Image) -> FeatureVector<T> {
    let (w, h) = (image.width as usize, image.height as usize);
    let mut sum = [0u64; 4];
    let mut sq = [0u64; 4];
    let mut cnt = [0u64; 4];
    let mut hist = [0u64; HIST_BINS];
    let mut bright = 0u64;
    for y in 0..h {
        for x in 0..w {
            let (l, spread) = luma_at(image, y * w + x);
            // pixel centres left of / above the midline
            let q = usize::from(2 * x + 1 > w) + 2 * usize::from(2 * y + 1 > h);
            sum[q] += u64::from(l);
            sq[q] += u64::from(l * l);
            cnt[q] += 1;
            hist[(l as usize * HIST_BINS) / 256] += 1;
            if l >= BRIGHT_LUMA && spread <= WHITE_SPREAD {
                bright += 1;
            }
        }
    }
    let total = (w * h) as f64;
    let mut f = [T::zero(); FEATURES];
    for q in 0..4 {
        if cnt[q] > 0 {
            let n = cnt[q] as f64;
            let mean = sum[q] as f64 / n;
            let var = (sq[q] as f64 / n - mean * mean).max(0.0);
            f[q] = T::lit(mean);
            f[4 + q] = T::lit(var.sqrt());
        }
    }
    for (b, &c) in hist.iter().enumerate() {
        f[8 + b] = T::lit(c as f64 / total);
    }
    f[14] = T::lit(bright as f64 / total);
    f[15] = T::one();
    f
}

/// Fixed per-feature scaling applied before the dot product.
pub fn feature_scale<T: Real>() -> FeatureVector<T> {
    let mut s = [T::one(); FEATURES];
    for v in s.iter_mut().take(8) {
        *v = T::lit(1.0 / 255.0);
    }
    s
}

fn scaled<T: Real>(x: &FeatureVector<T>) -> FeatureVector<T> {
    let s = feature_scale::<T>();
    let mut out = *x;
    for (o, k) in out.iter_mut().zip(s) {
        *o = *o * k;
    }
    out
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CloudModel<T> {
    pub weights: Vec<T>,
    pub version: u32,
    pub trained_on: u64,
    pub param_budget_bytes: usize,
}

impl<T: Real> CloudModel<T> {
    pub fn zeros() -> Self {
        CloudModel {
            weights: vec![T::zero(); FEATURES],
            version: 0,
            trained_on: 0,
            param_budget_bytes: DEFAULT_PARAM_BUDGET,
        }
    }

    pub fn serialized_len(&self) -> usize {
        4 + 4 + 2 + 8 * self.weights.len()
    }

    /// `CMDL`, version u32 LE, count u16 LE, weights as f64 LE.
    pub fn to_bytes(&self) -> Result<Vec<u8>, AiError> {
        let size = self.serialized_len();
        if size > self.param_budget_bytes {
            return Err(AiError::OverBudget { size, budget: self.param_budget_bytes });
        }
        let mut out = Vec::with_capacity(size);
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u16).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_f64_lossy().to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AiError> {
        if bytes.len() < 10 || bytes[..4] != MODEL_MAGIC {
            return Err(AiError::ModelFormat("missing CMDL header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let count = usize::from(u16::from_le_bytes([bytes[8], bytes[9]]));
        if bytes.len() != 10 + 8 * count {
            return Err(AiError::ModelFormat(format!("expected {} weight bytes, got {}", 8 * count, bytes.len() - 10)));
        }
        let weights =
            bytes[10..].chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        Ok(CloudModel { weights, version, trained_on: 0, param_budget_bytes: DEFAULT_PARAM_BUDGET })
    }

    fn check_dims(&self) -> Result<(), AiError> {
        if self.weights.len() != FEATURES {
            return Err(AiError::ModelFormat(format!("{} weights, expected {FEATURES}", self.weights.len())));
        }
        Ok(())
    }
}

/// Probability that the image behind `features` is cloudy.
pub fn predict<T: Real>(model: &CloudModel<T>, features: &FeatureVector<T>) -> Result<T, AiError> {
    model.check_dims()?;
    let x = scaled(features);
    let z = model.weights.iter().zip(x.iter()).fold(T::zero(), |acc, (&w, &v)| acc + w * v);
    Ok(sigmoid(z))
}

pub fn is_cloudy<T: Real>(p: T) -> bool {
    p > T::lit(0.5)
}

/// `ln(1 + e^a)` without overflow or cancellation.
fn softplus<T: Real>(a: T) -> T {
    a.max(T::zero()) + (-a.abs()).exp().ln_1p()
}

/// Mean logistic loss plus `l2 / 2 * |w|^2` (bias included).
pub fn loss<T: Real>(weights: &[T], batch: &[(FeatureVector<T>, bool)], l2: T) -> T {
    let mut total = T::zero();
    for (x, y) in batch {
        let xs = scaled(x);
        let z = weights.iter().zip(xs.iter()).fold(T::zero(), |a, (&w, &v)| a + w * v);
        total = total + if *y { softplus(-z) } else { softplus(z) };
    }
    let reg = weights.iter().fold(T::zero(), |a, &w| a + w * w) * l2 / T::lit(2.0);
    total / T::count(batch.len().max(1)) + reg
}

/// Analytic gradient of [`loss`].
pub fn gradient<T: Real>(weights: &[T], batch: &[(FeatureVector<T>, bool)], l2: T) -> Vec<T> {
    let mut g = vec![T::zero(); weights.len()];
    for (x, y) in batch {
        let xs = scaled(x);
        let z = weights.iter().zip(xs.iter()).fold(T::zero(), |a, (&w, &v)| a + w * v);
        let err = sigmoid(z) - if *y { T::one() } else { T::zero() };
        for (gi, &xi) in g.iter_mut().zip(xs.iter()) {
            *gi = *gi + err * xi;
        }
    }
    let n = T::count(batch.len().max(1));
    g.iter().zip(weights).map(|(&gi, &w)| gi / n + l2 * w).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub epochs: u32,
    pub batch_size: usize,
    pub l2: T,
    pub seed: u64,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig { learning_rate: T::lit(0.5), epochs: 60, batch_size: 16, l2: T::lit(1e-4), seed: 0xC10D }
    }
}

/// Mini-batch gradient descent from the current weights. The version always
/// increments.
pub fn finetune<T: Real>(
    model: &CloudModel<T>,
    batch: &[(FeatureVector<T>, bool)],
    config: &TrainConfig<T>,
) -> Result<CloudModel<T>, AiError> {
    model.check_dims()?;
    if batch.is_empty() {
        return Err(AiError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = model.weights.clone();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let size = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(size) {
            let mb: Vec<(FeatureVector<T>, bool)> = idx.iter().map(|&i| batch[i]).collect();
            let g = gradient(&w, &mb, config.l2);
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi = *wi - config.learning_rate * gi;
            }
        }
    }
    Ok(CloudModel {
        weights: w,
        version: model.version + 1,
        trained_on: model.trained_on + batch.len() as u64,
        param_budget_bytes: model.param_budget_bytes,
    })
}

pub fn accuracy<T: Real>(model: &CloudModel<T>, set: &[(FeatureVector<T>, bool)]) -> Result<f64, AiError> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut right = 0usize;
    for (x, y) in set {
        if is_cloudy(predict(model, x)?) == *y {
            right += 1;
        }
    }
    Ok(right as f64 / set.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtSource {
    ExternalSatelliteSim,
    GroundObsSim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtLabel {
    pub asset_id: u64,
    pub cloudy: bool,
    pub confidence: f64,
    pub source: GtSource,
}

/// Capture identities handed to the ground: asset id and scene seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtRequest {
    pub asset_id: u64,
    pub seed: u64,
}

/// Labels from external truth keyed by scene seed, each flipped with
/// probability `noise_rate`. Requests without truth are returned separately.
pub fn gt_factory(
    requests: &[GtRequest],
    truths: &BTreeMap<u64, SceneTruth>,
    noise_rate: f64,
    seed: u64,
) -> (Vec<GtLabel>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(requests.len());
    let mut missing = Vec::new();
    for r in requests {
        let Some(truth) = truths.get(&r.seed) else {
            missing.push(r.asset_id);
            continue;
        };
        let flip = rng.random::<f64>() < noise_rate;
        let source = if rng.random::<bool>() { GtSource::ExternalSatelliteSim } else { GtSource::GroundObsSim };
        labels.push(GtLabel {
            asset_id: r.asset_id,
            cloudy: (truth.cloud_fraction > CLOUDY_FRACTION) != flip,
            confidence: (1.0 - noise_rate).clamp(0.0, 1.0),
            source,
        });
    }
    (labels, missing)
}

/// Uplink form: per label, asset id u32 LE, flags u8 (bit 0 cloudy, bit 1
/// ground-observation source), confidence u8 scaled by 255.
pub fn encode_labels(labels: &[GtLabel]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * LABEL_RECORD_LEN);
    for l in labels {
        out.extend_from_slice(&(l.asset_id as u32).to_le_bytes());
        out.push(u8::from(l.cloudy) | (u8::from(l.source == GtSource::GroundObsSim) << 1));
        out.push((l.confidence.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<GtLabel>, AiError> {
    if !bytes.len().is_multiple_of(LABEL_RECORD_LEN) {
        return Err(AiError::LabelBatch(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(LABEL_RECORD_LEN)
        .map(|c| GtLabel {
            asset_id: u64::from(u32::from_le_bytes(c[0..4].try_into().expect("4 bytes"))),
            cloudy: c[4] & 1 == 1,
            source: if c[4] & 2 == 2 { GtSource::GroundObsSim } else { GtSource::ExternalSatelliteSim },
            confidence: f64::from(c[5]) / 255.0,
        })
        .collect())
}

/// Pairs uplinked labels with onboard features; returns the training set and
/// the ids that had no features.
pub fn join_labels<T: Real>(
    labels: &[GtLabel],
    features: &BTreeMap<u64, FeatureVector<T>>,
) -> (Vec<(FeatureVector<T>, bool)>, Vec<u64>) {
    let mut set = Vec::new();
    let mut unknown = Vec::new();
    for l in labels {
        match features.get(&l.asset_id) {
            Some(f) => set.push((*f, l.cloudy)),
            None => unknown.push(l.asset_id),
        }
    }
    (set, unknown)
}
