//! Single-event-effect bit flips in the payload filesystem.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fs::SimFs;
use crate::orbitsim::Zone;
use crate::scalar::Real;
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("invalid SEE model: {0}")]
    InvalidModel(String),
    #[error("injection interval must be positive")]
    InvalidInterval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct SeeModel<T> {
    pub base_rate_per_orbit: T,
    pub saa_multiplier: T,
    pub polar_multiplier: T,
    pub rng_seed: u64,
}

impl<T: Real> Default for SeeModel<T> {
    fn default() -> Self {
        SeeModel {
            base_rate_per_orbit: T::lit(1e-2),
            saa_multiplier: T::lit(10.0),
            polar_multiplier: T::lit(3.0),
            rng_seed: 0x5EE_5EED,
        }
    }
}

impl<T: Real> SeeModel<T> {
    pub fn validate(&self) -> Result<(), FaultError> {
        if !(self.base_rate_per_orbit >= T::zero()) {
            return Err(FaultError::InvalidModel("base_rate_per_orbit must be >= 0".into()));
        }
        if !(self.saa_multiplier >= T::one() && self.polar_multiplier >= T::one()) {
            return Err(FaultError::InvalidModel("zone multipliers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn multiplier(&self, zone: Zone) -> T {
        match zone {
            Zone::Nominal => T::one(),
            Zone::Polar => self.polar_multiplier,
            Zone::Saa => self.saa_multiplier,
        }
    }
}

/// Expected upsets per second in `zone`.
pub fn instantaneous_rate<T: Real>(model: &SeeModel<T>, zone: Zone, period_s: T) -> T {
    model.base_rate_per_orbit / period_s * model.multiplier(zone)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionEvent {
    pub time: SimTime,
    pub file_path: String,
    pub byte_offset: usize,
    pub bit_index: u8,
    pub zone: Zone,
}

/// Seeded Poisson injector. Owns its generator so event streams depend only
/// on the seed and the call sequence.
#[derive(Clone, Debug)]
pub struct Injector<T> {
    model: SeeModel<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Injector<T> {
    pub fn new(model: SeeModel<T>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
        Injector { model, rng }
    }

    pub fn model(&self) -> &SeeModel<T> {
        &self.model
    }

    /// Number of upsets in an interval with the given expected count.
    pub fn draw_count(&mut self, expected: f64) -> u64 {
        if !(expected > 0.0) {
            return 0;
        }
        let poisson = Poisson::new(expected).expect("positive finite mean");
        poisson.sample(&mut self.rng) as u64
    }

    /// Applies the upsets for one interval of `dt` seconds and reports them.
    pub fn inject(
        &mut self,
        fs: &mut SimFs,
        now: SimTime,
        dt: T,
        zone: Zone,
        period_s: T,
    ) -> Result<Vec<CorruptionEvent>, FaultError> {
        if !(dt > T::zero()) {
            return Err(FaultError::InvalidInterval);
        }
        let expected = (instantaneous_rate(&self.model, zone, period_s) * dt).to_f64_lossy();
        let n = self.draw_count(expected);
        let mut events = Vec::new();
        for _ in 0..n {
            if let Some(ev) = self.flip_random(fs, now, zone) {
                events.push(ev);
            }
        }
        Ok(events)
    }

    /// Flips one uniformly chosen bit of one uniformly chosen non-empty file.
    pub fn flip_random(&mut self, fs: &mut SimFs, now: SimTime, zone: Zone) -> Option<CorruptionEvent> {
        let candidates: Vec<(String, usize)> = fs
            .paths()
            .filter_map(|p| fs.read(p).map(|d| (p.to_string(), d.len())))
            .filter(|(_, len)| *len > 0)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let (path, len) = candidates[self.rng.random_range(0..candidates.len())].clone();
        let byte_offset = self.rng.random_range(0..len);
        let bit_index = self.rng.random_range(0..8u8);
        fs.flip_bit(&path, byte_offset, bit_index);
        Some(CorruptionEvent { time: now, file_path: path, byte_offset, bit_index, zone })
    }

    /// Flips a random bit of a specific file.
    pub fn flip_in(&mut self, fs: &mut SimFs, path: &str, now: SimTime, zone: Zone) -> Option<CorruptionEvent> {
        let len = fs.read(path)?.len();
        if len == 0 {
            return None;
        }
        let byte_offset = self.rng.random_range(0..len);
        let bit_index = self.rng.random_range(0..8u8);
        fs.flip_bit(path, byte_offset, bit_index);
        Some(CorruptionEvent { time: now, file_path: path.to_string(), byte_offset, bit_index, zone })
    }
}
