//! Two-node lumped thermal model of the processor module and its carrier
//! frame, driven by payload power and a sunlit/eclipse sink temperature.
//!
//! ```text
//! c_nano  dTn/dt = P - g_nf (Tn - Tf)
//! c_frame dTf/dt = g_nf (Tn - Tf) - g_fs (Tf - Tsink)
//! ```
//!
//! Integrated with explicit Euler.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbitsim::{self, OrbitConfig, OrbitError};
use crate::scalar::Real;
use crate::time::SimTime;

pub const MAX_STEP_S: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("step must be in (0, {MAX_STEP_S}] s, got {0}")]
    InvalidStep(f64),
    #[error("invalid thermal parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct ThermalParams<T> {
    pub c_nano: T,
    pub c_frame: T,
    pub g_nano_frame: T,
    pub g_frame_sink: T,
    pub sink_sunlit_c: T,
    pub sink_eclipse_c: T,
    pub p_active_w: T,
    pub p_idle_w: T,
}

impl<T: Real> Default for ThermalParams<T> {
    fn default() -> Self {
        calibrated_defaults()
    }
}

impl<T: Real> ThermalParams<T> {
    pub fn validate(&self) -> Result<(), ThermalError> {
        let z = T::zero();
        for (name, v) in [
            ("c_nano", self.c_nano),
            ("c_frame", self.c_frame),
            ("g_nano_frame", self.g_nano_frame),
            ("g_frame_sink", self.g_frame_sink),
        ] {
            if !(v > z) || !v.is_finite() {
                return Err(ThermalError::InvalidParams(format!("{name} must be > 0")));
            }
        }
        if !(self.p_active_w >= self.p_idle_w && self.p_idle_w >= z) {
            return Err(ThermalError::InvalidParams("need p_active_w >= p_idle_w >= 0".into()));
        }
        // Explicit Euler keeps each node a convex combination of its
        // neighbours only while these ratios stay at or below one.
        let dt = T::lit(MAX_STEP_S);
        if dt * self.g_nano_frame / self.c_nano > T::one()
            || dt * (self.g_nano_frame + self.g_frame_sink) / self.c_frame > T::one()
        {
            return Err(ThermalError::InvalidParams(format!(
                "capacities too small for a {MAX_STEP_S} s explicit step"
            )));
        }
        Ok(())
    }

    pub fn sink_c(&self, eclipse: bool) -> T {
        if eclipse {
            self.sink_eclipse_c
        } else {
            self.sink_sunlit_c
        }
    }

    pub fn power_w(&self, active: bool) -> T {
        if active {
            self.p_active_w
        } else {
            self.p_idle_w
        }
    }

    /// Steady payload temperature for constant power and sink.
    pub fn steady_nano_c(&self, power_w: T, sink_c: T) -> T {
        sink_c + power_w * (T::one() / self.g_frame_sink + T::one() / self.g_nano_frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ThermalState<T> {
    pub t_nano_c: T,
    pub t_frame_c: T,
    pub time: SimTime,
}

impl<T: Real> ThermalState<T> {
    pub fn uniform(temp_c: T, time: SimTime) -> Self {
        ThermalState { t_nano_c: temp_c, t_frame_c: temp_c, time }
    }

    pub fn is_sane(&self) -> bool {
        let ok = |v: T| v.is_finite() && v > T::lit(-100.0) && v < T::lit(150.0);
        ok(self.t_nano_c) && ok(self.t_frame_c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields, default)]
pub struct ThermalLimits<T> {
    pub op_min_c: T,
    pub nonop_min_c: T,
    pub op_max_c: T,
}

impl<T: Real> Default for ThermalLimits<T> {
    fn default() -> Self {
        ThermalLimits { op_min_c: T::lit(-25.0), nonop_min_c: T::lit(-40.0), op_max_c: T::lit(97.0) }
    }
}

impl<T: Real> ThermalLimits<T> {
    pub const HOT_GUARD_C: f64 = 5.0;

    pub fn validate(&self) -> Result<(), ThermalError> {
        if self.nonop_min_c < self.op_min_c && self.op_min_c < self.op_max_c {
            Ok(())
        } else {
            Err(ThermalError::InvalidParams("need nonop_min_c < op_min_c < op_max_c".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Allow,
    DenyCold,
    DenyHot,
}

pub fn step<T: Real>(
    params: &ThermalParams<T>,
    state: &ThermalState<T>,
    dt: T,
    active: bool,
    eclipse: bool,
) -> Result<ThermalState<T>, ThermalError> {
    if !(dt > T::zero() && dt <= T::lit(MAX_STEP_S)) {
        return Err(ThermalError::InvalidStep(dt.to_f64_lossy()));
    }
    let q_nf = params.g_nano_frame * (state.t_nano_c - state.t_frame_c);
    let q_fs = params.g_frame_sink * (state.t_frame_c - params.sink_c(eclipse));
    let d_nano = (params.power_w(active) - q_nf) / params.c_nano;
    let d_frame = (q_nf - q_fs) / params.c_frame;
    Ok(ThermalState {
        t_nano_c: state.t_nano_c + dt * d_nano,
        t_frame_c: state.t_frame_c + dt * d_frame,
        time: state.time.plus_secs_f64(dt.to_f64_lossy()),
    })
}

/// Parameters fitted to the worst-case orbital envelopes: idle payload
/// oscillating between about -21 and -14 C, active orbit peaking in the
/// low-to-high twenties, 5 W active dissipation and nothing when idle.
///
/// Produced by `examples/calibrate_thermal.rs` against the default orbit.
pub fn calibrated_defaults<T: Real>() -> ThermalParams<T> {
    ThermalParams {
        c_nano: T::lit(CAL_C_NANO),
        c_frame: T::lit(CAL_C_FRAME),
        g_nano_frame: T::lit(CAL_G_NANO_FRAME),
        g_frame_sink: T::lit(CAL_G_FRAME_SINK),
        sink_sunlit_c: T::lit(CAL_SINK_SUNLIT_C),
        sink_eclipse_c: T::lit(CAL_SINK_ECLIPSE_C),
        p_active_w: T::lit(5.0),
        p_idle_w: T::zero(),
    }
}

pub const CAL_C_NANO: f64 = 100.0;
pub const CAL_C_FRAME: f64 = 600.0;
pub const CAL_G_NANO_FRAME: f64 = 0.153_846;
pub const CAL_G_FRAME_SINK: f64 = 0.5;
pub const CAL_SINK_SUNLIT_C: f64 = -12.7928;
pub const CAL_SINK_ECLIPSE_C: f64 = -25.3275;

pub fn gate<T: Real>(limits: &ThermalLimits<T>, state: &ThermalState<T>, requested_active: bool) -> GateDecision {
    if requested_active && state.t_nano_c < limits.op_min_c {
        GateDecision::DenyCold
    } else if state.t_nano_c > limits.op_max_c - T::lit(ThermalLimits::<T>::HOT_GUARD_C) {
        GateDecision::DenyHot
    } else {
        GateDecision::Allow
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T> {
    pub elapsed_s: f64,
    pub state: ThermalState<T>,
    pub active: bool,
    pub eclipse: bool,
}

/// Runs the model along the orbit for `duration_s`, recording every step.
///
/// `active` is queried once per step with the current time.
pub fn simulate<T: Real>(
    params: &ThermalParams<T>,
    orbit: &OrbitConfig<T>,
    initial: ThermalState<T>,
    duration_s: f64,
    dt_s: f64,
    mut active: impl FnMut(SimTime) -> bool,
) -> Result<Vec<Sample<T>>, ThermalError> {
    let n = (duration_s / dt_s).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut state = initial;
    let start = initial.time;
    for _ in 0..n {
        let on = active(state.time);
        let ecl = orbitsim::in_eclipse(orbit, state.time)?;
        state = step(params, &state, T::lit(dt_s), on, ecl)?;
        out.push(Sample { elapsed_s: state.time.secs_since(start), state, active: on, eclipse: ecl });
    }
    Ok(out)
}

/// Min and max payload temperature over a slice of samples.
pub fn nano_envelope<T: Real>(samples: &[Sample<T>]) -> (T, T) {
    samples
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), s| (lo.min(s.state.t_nano_c), hi.max(s.state.t_nano_c)))
}
