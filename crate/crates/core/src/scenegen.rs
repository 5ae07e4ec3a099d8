//! Synthetic Earth-observation scenes with cloud ground truth, and the
//! multiplexed camera suite that captures them.
//!
//! Noise, terrain and cloud compositing are done in 16.16 fixed point so the
//! same seed yields the same pixels on every platform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbitsim::{classify_zone, propagate, GeodeticPoint, OrbitConfig, OrbitError, Zone, ZonePolicy};
use crate::raster::Image;
use crate::scalar::Real;
use crate::thermal::GateDecision;
use crate::time::SimTime;

pub const MUX_CHANNELS: usize = 16;
const ONE: i64 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("channel {0} out of range 0..16")]
    InvalidChannel(u8),
    #[error("no sensor bound to channel {0}")]
    NoSensor(u8),
    #[error("payload inactive: {0}")]
    PayloadInactive(String),
    #[error("invalid sensor spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Rgb,
    Ir,
}

impl SensorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Rgb => "rgb",
            SensorKind::Ir => "ir",
        }
    }

    pub fn channels(self) -> u8 {
        match self {
            SensorKind::Rgb => 3,
            SensorKind::Ir => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub native_width: u32,
    pub native_height: u32,
    pub fov_deg: (f64, f64),
    pub spectrum_um: (f64, f64),
    pub frame_rate_fps: f64,
    pub scale_divisor: u32,
}

impl SensorSpec {
    pub fn rgb() -> Self {
        SensorSpec {
            kind: SensorKind::Rgb,
            native_width: 3820,
            native_height: 2464,
            fov_deg: (62.2, 48.8),
            spectrum_um: (0.4, 0.7),
            frame_rate_fps: 15.0,
            scale_divisor: 8,
        }
    }

    pub fn ir() -> Self {
        SensorSpec {
            kind: SensorKind::Ir,
            native_width: 160,
            native_height: 120,
            fov_deg: (57.0, 44.0),
            spectrum_um: (8.0, 14.0),
            frame_rate_fps: 8.7,
            scale_divisor: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.native_width == 0 || self.native_height == 0 {
            return Err(SceneError::InvalidSpec("native dimensions must be positive".into()));
        }
        if self.scale_divisor == 0 {
            return Err(SceneError::InvalidSpec("scale divisor must be positive".into()));
        }
        Ok(())
    }

    /// Output dimensions: native size divided by the divisor, rounded up so
    /// no native pixel column is dropped.
    pub fn dims(&self) -> (u32, u32) {
        (self.native_width.div_ceil(self.scale_divisor), self.native_height.div_ceil(self.scale_divisor))
    }

    /// Bytes of one uncompressed 8-bit frame at the output resolution.
    pub fn raw_bytes(&self) -> u64 {
        let (w, h) = self.dims();
        u64::from(w) * u64::from(h) * u64::from(self.kind.channels())
    }

    pub fn native_raw_bytes(&self) -> u64 {
        u64::from(self.native_width) * u64::from(self.native_height) * u64::from(self.kind.channels())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuxState {
    pub channels: Vec<Option<SensorSpec>>,
    pub selected: u8,
}

impl Default for MuxState {
    fn default() -> Self {
        let channels = (0..MUX_CHANNELS)
            .map(|c| match c {
                0..=5 => Some(SensorSpec::rgb()),
                6..=8 => Some(SensorSpec::ir()),
                _ => None,
            })
            .collect();
        MuxState { channels, selected: 0 }
    }
}

impl MuxState {
    pub fn selected_spec(&self) -> Option<&SensorSpec> {
        self.channels.get(usize::from(self.selected)).and_then(Option::as_ref)
    }

    /// Applies `divisor` to every bound sensor of `kind`.
    pub fn set_divisor(&mut self, kind: SensorKind, divisor: u32) {
        for spec in self.channels.iter_mut().flatten().filter(|s| s.kind == kind) {
            spec.scale_divisor = divisor;
        }
    }
}

pub fn select_channel(mux: &MuxState, channel: u8) -> Result<MuxState, SceneError> {
    if usize::from(channel) >= MUX_CHANNELS {
        return Err(SceneError::InvalidChannel(channel));
    }
    Ok(MuxState { selected: channel, ..mux.clone() })
}

/// Tunables for the synthetic scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Peak cloud opacity, 0..1.
    pub cloud_amplitude: f64,
    /// Opacity above which a pixel counts as cloud in the truth mask.
    pub cloud_threshold: f64,
    /// Per-scene cloud coverage parameter is drawn uniformly from this range.
    pub coverage_range: (f64, f64),
    pub terrain_octaves: u32,
    /// Amplitude ratio between successive terrain octaves; higher is rougher.
    pub terrain_persistence: f64,
    pub cloud_octaves: u32,
    pub cloud_persistence: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            cloud_amplitude: 0.85,
            cloud_threshold: 0.5,
            coverage_range: (0.3, 0.75),
            terrain_octaves: 9,
            terrain_persistence: 0.8,
            cloud_octaves: 8,
            cloud_persistence: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub cloud_mask: Vec<bool>,
    pub cloud_fraction: f64,
    pub seed: u64,
}

impl SceneTruth {
    pub fn from_mask(cloud_mask: Vec<bool>, seed: u64) -> Self {
        let cloud_fraction = mask_fraction(&cloud_mask);
        SceneTruth { cloud_mask, cloud_fraction, seed }
    }
}

pub fn mask_fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}

/// Metadata recorded with every capture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub time: SimTime,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_km: f64,
    pub channel: u8,
    pub kind: SensorKind,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, layer: u64, ix: i64, iy: i64) -> i64 {
    let h = splitmix(seed ^ splitmix(layer ^ splitmix((ix as u64) ^ (iy as u64).rotate_left(32))));
    (h >> 48) as i64
}

/// Lattice corners of the last cell visited by one octave.
#[derive(Clone, Copy)]
struct Corners {
    cell: (i64, i64),
    v: [i64; 4],
}

impl Default for Corners {
    fn default() -> Self {
        Corners { cell: (i64::MIN, i64::MIN), v: [0; 4] }
    }
}

/// Smoothly interpolated lattice noise at a 16.16 position; result in 0..ONE.
fn value_noise(seed: u64, layer: u64, x: i64, y: i64, cache: &mut Corners) -> i64 {
    let (ix, iy) = (x >> 16, y >> 16);
    let smooth = |f: i64| (((f * f) >> 16) * (3 * ONE - 2 * f)) >> 16;
    let (sx, sy) = (smooth(x & (ONE - 1)), smooth(y & (ONE - 1)));
    if cache.cell == (ix - 1, iy) {
        cache.cell = (ix, iy);
        cache.v = [cache.v[1], lattice(seed, layer, ix + 1, iy), cache.v[3], lattice(seed, layer, ix + 1, iy + 1)];
    } else if cache.cell != (ix, iy) {
        cache.cell = (ix, iy);
        cache.v = [
            lattice(seed, layer, ix, iy),
            lattice(seed, layer, ix + 1, iy),
            lattice(seed, layer, ix, iy + 1),
            lattice(seed, layer, ix + 1, iy + 1),
        ];
    }
    let [a, b, c, d] = cache.v;
    let top = a + (((b - a) * sx) >> 16);
    let bottom = c + (((d - c) * sx) >> 16);
    top + (((bottom - top) * sy) >> 16)
}

const MAX_OCTAVES: u32 = 16;

/// Sum of `octaves` noise layers, each at twice the frequency of the last and
/// `persistence` (16.16) times its amplitude.
fn fractal(seed: u64, layer: u64, x: i64, y: i64, octaves: u32, persistence: i64, cache: &mut [Corners; 16]) -> i64 {
    let (mut sum, mut norm, mut amp) = (0i64, 0i64, 1i64 << 16);
    for o in 0..octaves.clamp(1, MAX_OCTAVES) {
        sum += amp * value_noise(seed, layer * 64 + u64::from(o), x << o, y << o, &mut cache[o as usize]);
        norm += amp;
        amp = ((amp * persistence) >> 16).max(1);
    }
    sum / norm
}

fn to_q16(v: f64) -> i64 {
    (v * ONE as f64).floor() as i64
}

fn lerp(a: i64, b: i64, t: i64) -> i64 {
    a + (((b - a) * t) >> 16)
}

const TERRAIN_CELLS: i64 = 4;
const CLOUD_CELLS: i64 = 3;

/// Renders a scene for `spec` around `location`.
///
/// Noise coordinates are normalised to the image width, so the same seed at
/// a different divisor shows the same scene at a different resolution.
pub fn generate_scene<T: Real>(
    seed: u64,
    location: &GeodeticPoint<T>,
    spec: &SensorSpec,
    config: &SceneConfig,
) -> Result<(Image, SceneTruth), SceneError> {
    spec.validate()?;
    let (w, h) = spec.dims();
    let n = w as usize * h as usize;
    let abs_lat = location.lat_deg.to_f64_lossy().abs().min(90.0);

    let (lo, hi) = config.coverage_range;
    let cover_t = (splitmix(seed ^ 0xC0DE) >> 48) as i64;
    let coverage = lerp(to_q16(lo), to_q16(hi), cover_t);
    let amp = to_q16(config.cloud_amplitude.clamp(0.0, 1.0));
    let threshold = to_q16(config.cloud_threshold);
    // 0 at mid-latitudes, full ice cover towards the poles
    let ice = to_q16(((abs_lat - 50.0) / 30.0).clamp(0.0, 1.0));

    let mut planes = vec![vec![0u8; n]; spec.kind.channels() as usize];
    let mut mask = vec![false; n];
    let t_pers = to_q16(config.terrain_persistence.clamp(0.0, 1.0));
    let c_pers = to_q16(config.cloud_persistence.clamp(0.0, 1.0));
    let denom = 2 * i64::from(w);
    let mut t_cache = [Corners::default(); 16];
    let mut c_cache = [Corners::default(); 16];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w as usize + x as usize;
            let u = (2 * x + 1) * TERRAIN_CELLS * ONE / denom;
            let v = (2 * y + 1) * TERRAIN_CELLS * ONE / denom;
            let terrain = fractal(seed, 1, u, v, config.terrain_octaves, t_pers, &mut t_cache);
            let cu = (2 * x + 1) * CLOUD_CELLS * ONE / denom;
            let cv = (2 * y + 1) * CLOUD_CELLS * ONE / denom;
            let cloud_n = fractal(seed, 2, cu, cv, config.cloud_octaves, c_pers, &mut c_cache);
            let opacity = (amp * (4 * (cloud_n + coverage - ONE) + ONE / 2).clamp(0, ONE)) >> 16;
            mask[i] = opacity > threshold;

            match spec.kind {
                SensorKind::Rgb => {
                    let (r, g, b) = terrain_rgb(terrain);
                    let shade = 215 + (((cloud_n - ONE / 2) * 120) >> 16);
                    for (c, base) in [r, g, b].into_iter().enumerate() {
                        let iced = lerp(base, 215, ice);
                        planes[c][i] = lerp(iced, shade, opacity).clamp(0, 255) as u8;
                    }
                }
                SensorKind::Ir => {
                    // tenths of a degree Celsius
                    let surface = 300 - (abs_lat * 6.0) as i64 + (((terrain - ONE / 2) * 200) >> 16);
                    let temp = lerp(surface, -300, opacity);
                    planes[0][i] = ((temp + 100) * 255 / 4100).clamp(0, 255) as u8;
                }
            }
        }
    }
    let image =
        Image::new(w, h, spec.kind.channels(), planes.concat()).map_err(|e| SceneError::InvalidSpec(e.to_string()))?;
    Ok((image, SceneTruth::from_mask(mask, seed)))
}

fn terrain_rgb(t: i64) -> (i64, i64, i64) {
    let water = ONE * 45 / 100;
    if t < water {
        let depth = (water - t) * 255 / water;
        (20, 70 - depth / 6, 120 - depth / 5)
    } else {
        let height = (t - water) * 255 / (ONE - water);
        (60 + height / 2, 100 + height / 5, 40 + height / 4)
    }
}

/// Seed for a capture, derived from the mission seed, time and channel.
pub fn capture_seed(master_seed: u64, time: SimTime, channel: u8) -> u64 {
    splitmix(master_seed ^ splitmix(time.0 as u64 ^ (u64::from(channel) << 56)))
}

/// Captures a frame on the selected channel at time `t`.
///
/// The payload must be in a nominal zone with the thermal gate open.
#[allow(clippy::too_many_arguments)]
pub fn capture<T: Real>(
    mux: &MuxState,
    t: SimTime,
    orbit: &OrbitConfig<T>,
    policy: &ZonePolicy<T>,
    gate: GateDecision,
    master_seed: u64,
    config: &SceneConfig,
) -> Result<(CaptureMeta, Image, SceneTruth), SceneError> {
    let spec = mux.selected_spec().ok_or(SceneError::NoSensor(mux.selected))?;
    if gate != GateDecision::Allow {
        return Err(SceneError::PayloadInactive(format!("thermal gate {gate:?}")));
    }
    let position = propagate(orbit, t)?;
    let zone = classify_zone(policy, &position);
    if zone != Zone::Nominal {
        return Err(SceneError::PayloadInactive(format!("zone {}", zone.as_str())));
    }
    let seed = capture_seed(master_seed, t, mux.selected);
    let (image, truth) = generate_scene(seed, &position, spec, config)?;
    let meta = CaptureMeta {
        time: t,
        lat_deg: position.lat_deg.to_f64_lossy(),
        lon_deg: position.lon_deg.to_f64_lossy(),
        alt_km: position.alt_km.to_f64_lossy(),
        channel: mux.selected,
        kind: spec.kind,
        seed,
    };
    Ok((meta, image, truth))
}
