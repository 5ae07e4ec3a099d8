//! Scenario file: every knob of a mission run, loaded from TOML.
//!
//! All tables reject unknown keys. Omitted keys take the documented defaults,
//! so an empty file is the default scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ai::TrainConfig;
use crate::codec::SegmentPlan;
use crate::faults::SeeModel;
use crate::link::{LinkConfig, TransferTarget};
use crate::orbitsim::{GroundStation, OrbitConfig, ZonePolicy};
use crate::scenegen::{SceneConfig, MUX_CHANNELS};
use crate::store::QuotaConfig;
use crate::thermal::{ThermalLimits, ThermalParams, MAX_STEP_S};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Capture every `every_n_orbits` orbits on `channel`, at the first step in a
/// nominal zone once `phase` (fraction of the orbit) has elapsed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRule {
    pub channel: u8,
    #[serde(default = "one")]
    pub every_n_orbits: u32,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSettings {
    pub quality: u8,
    pub lossless: bool,
    pub plan: SegmentPlan,
}

impl Default for CodecSettings {
    fn default() -> Self {
        CodecSettings { quality: 75, lossless: false, plan: SegmentPlan::default() }
    }
}

/// Per-sensor desk-scale divisors applied to the mux at start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSettings {
    pub rgb_divisor: u32,
    pub ir_divisor: u32,
}

impl Default for SensorSettings {
    fn default() -> Self {
        SensorSettings { rgb_divisor: 8, ir_divisor: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferPolicy {
    /// Session opened for every new capture.
    pub default_target: TransferTarget,
    pub thumbnail_priority: i32,
    pub clear_priority: i32,
    pub cloudy_priority: i32,
    pub unlabeled_priority: i32,
    /// Once the thumbnail is down, continue to the full stream unless the
    /// asset is labelled cloudy.
    pub full_after_thumbnail: bool,
    /// Delete assets the ground labels cloudy once their thumbnail is down.
    pub discard_ground_cloudy: bool,
}

impl Default for TransferPolicy {
    fn default() -> Self {
        TransferPolicy {
            default_target: TransferTarget::Thumbnail,
            thumbnail_priority: 20,
            clear_priority: 10,
            cloudy_priority: 0,
            unlabeled_priority: 5,
            full_after_thumbnail: true,
            discard_ground_cloudy: true,
        }
    }
}

/// Pre-flight model: trained on synthetic scenes whose labels use
/// `label_threshold` instead of the operational cloudy fraction, which is
/// how a distribution shift between lab and orbit is modelled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSettings {
    pub samples: usize,
    pub scale_divisor: u32,
    pub label_threshold: f64,
    pub seed: u64,
    pub train: TrainConfig<f64>,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        PretrainSettings {
            samples: 200,
            scale_divisor: 32,
            label_threshold: 0.6,
            seed: 0x9E_F117,
            train: TrainConfig { learning_rate: 1.0, epochs: 200, ..TrainConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AiSettings {
    /// Days between GT-Factory cycles; 0 disables them.
    pub gt_cadence_days: u32,
    pub gt_noise_rate: f64,
    pub train: TrainConfig<f64>,
    pub pretrain: PretrainSettings,
    /// Size of the held-out synthetic set used for the accuracy trace.
    pub eval_samples: usize,
}

impl Default for AiSettings {
    fn default() -> Self {
        AiSettings {
            gt_cadence_days: 1,
            gt_noise_rate: 0.07,
            train: TrainConfig::default(),
            pretrain: PretrainSettings::default(),
            eval_samples: 150,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedFile {
    pub name: String,
    pub size_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegritySettings {
    pub backups: usize,
    /// Static flight files; the model file and catalog journal are added
    /// automatically.
    pub files: Vec<ProtectedFile>,
    /// Journal is rewritten as a compacted snapshot past this size.
    pub journal_compact_bytes: usize,
}

impl Default for IntegritySettings {
    fn default() -> Self {
        IntegritySettings {
            backups: 2,
            files: vec![
                ProtectedFile { name: "flight/app.bin".into(), size_bytes: 65_536 },
                ProtectedFile { name: "flight/config.bin".into(), size_bytes: 4_096 },
                ProtectedFile { name: "flight/sensor_cal.bin".into(), size_bytes: 16_384 },
            ],
            journal_compact_bytes: 65_536,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub master_seed: u64,
    pub duration_days: u32,
    pub step_s: f64,
    pub thermal_substeps: u32,
    /// Nano temperature at the start of the run.
    pub initial_temp_c: f64,
    /// Write one telemetry row every N steps.
    pub telemetry_every: u32,
    pub orbit: OrbitConfig<f64>,
    pub zones: ZonePolicy<f64>,
    pub thermal: ThermalParams<f64>,
    pub limits: ThermalLimits<f64>,
    pub see: SeeModel<f64>,
    pub quota: QuotaConfig,
    pub link: LinkConfig,
    pub stations: Vec<GroundStation<f64>>,
    pub captures: Vec<CaptureRule>,
    pub codec: CodecSettings,
    pub sensors: SensorSettings,
    pub scene: SceneConfig,
    pub transfer: TransferPolicy,
    pub ai: AiSettings,
    pub integrity: IntegritySettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            master_seed: 1,
            duration_days: 7,
            step_s: 10.0,
            thermal_substeps: 2,
            initial_temp_c: -18.0,
            telemetry_every: 1,
            orbit: OrbitConfig::default(),
            zones: ZonePolicy::default(),
            thermal: ThermalParams::default(),
            limits: ThermalLimits::default(),
            see: SeeModel::default(),
            quota: QuotaConfig::default(),
            link: LinkConfig::default(),
            stations: GroundStation::defaults(),
            captures: vec![
                CaptureRule { channel: 0, every_n_orbits: 1, phase: 0.0 },
                CaptureRule { channel: 6, every_n_orbits: 3, phase: 0.5 },
            ],
            codec: CodecSettings::default(),
            sensors: SensorSettings::default(),
            scene: SceneConfig::default(),
            transfer: TransferPolicy::default(),
            ai: AiSettings::default(),
            integrity: IntegritySettings::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.duration_days < 1 {
            return bad("duration_days must be at least 1".into());
        }
        if !(self.step_s > 0.0 && self.step_s <= MAX_STEP_S) || (self.step_s * 1000.0).fract() != 0.0 {
            return bad(format!("step_s must be a whole number of ms in (0, {MAX_STEP_S}]"));
        }
        if self.thermal_substeps == 0 || self.telemetry_every == 0 {
            return bad("thermal_substeps and telemetry_every must be positive".into());
        }
        if !self.initial_temp_c.is_finite() {
            return bad("initial_temp_c must be finite".into());
        }
        let inv = |e: &dyn std::fmt::Display| ScenarioError::Invalid(e.to_string());
        self.orbit.validate().map_err(|e| inv(&e))?;
        self.zones.validate().map_err(|e| inv(&e))?;
        self.thermal.validate().map_err(|e| inv(&e))?;
        self.limits.validate().map_err(|e| inv(&e))?;
        self.see.validate().map_err(|e| inv(&e))?;
        self.quota.validate().map_err(|e| inv(&e))?;
        self.link.validate().map_err(|e| inv(&e))?;
        self.codec.plan.validate().map_err(|e| inv(&e))?;
        if !(1..=100).contains(&self.codec.quality) {
            return bad("codec.quality must be in 1..=100".into());
        }
        if self.sensors.rgb_divisor == 0 || self.sensors.ir_divisor == 0 {
            return bad("sensor divisors must be positive".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for st in &self.stations {
            if !ids.insert(st.id.as_str()) {
                return bad(format!("duplicate station id {:?}", st.id));
            }
        }
        for r in &self.captures {
            if usize::from(r.channel) >= MUX_CHANNELS {
                return bad(format!("capture channel {} out of range", r.channel));
            }
            if r.every_n_orbits == 0 || !(0.0..1.0).contains(&r.phase) {
                return bad("capture rules need every_n_orbits >= 1 and phase in [0,1)".into());
            }
        }
        let ai = &self.ai;
        if !(0.0..=0.5).contains(&ai.gt_noise_rate) {
            return bad("ai.gt_noise_rate must be in [0, 0.5]".into());
        }
        for t in [&ai.train, &ai.pretrain.train] {
            if !(t.learning_rate > 0.0) || t.batch_size == 0 || !(t.l2 >= 0.0) {
                return bad("train configs need learning_rate > 0, batch_size > 0, l2 >= 0".into());
            }
        }
        if ai.pretrain.scale_divisor == 0 || !(0.0..=1.0).contains(&ai.pretrain.label_threshold) {
            return bad("ai.pretrain needs scale_divisor > 0 and label_threshold in [0,1]".into());
        }
        if self.integrity.backups == 0 {
            return bad("integrity.backups must be at least 1".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.integrity.files {
            if f.name.is_empty() || f.name.contains(['\t', '\n']) || !names.insert(f.name.as_str()) {
                return bad(format!("bad or duplicate protected file name {:?}", f.name));
            }
        }
        Ok(())
    }
}
