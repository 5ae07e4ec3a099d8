//! Simulation core for a nanosatellite imaging payload: orbit and pass
//! geometry, thermal gating, radiation faults and file integrity, a
//! progressive image codec, onboard catalog, bandwidth-capped link and the
//! onboard cloud classifier, tied together by the [`mission`] loop.
//!
//! Numeric modules are generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the mission loop uses.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ai;
pub mod codec;
pub mod faults;
pub mod fs;
pub mod integrity;
pub mod link;
pub mod mission;
pub mod orbitsim;
pub mod raster;
pub mod scalar;
pub mod scenegen;
pub mod store;
pub mod thermal;
pub mod time;

pub type OrbitConfig = orbitsim::OrbitConfig<f64>;
pub type GeodeticPoint = orbitsim::GeodeticPoint<f64>;
pub type ZonePolicy = orbitsim::ZonePolicy<f64>;
pub type GroundStation = orbitsim::GroundStation<f64>;
pub type ThermalParams = thermal::ThermalParams<f64>;
pub type ThermalState = thermal::ThermalState<f64>;
pub type ThermalLimits = thermal::ThermalLimits<f64>;
pub type SeeModel = faults::SeeModel<f64>;
pub type Injector = faults::Injector<f64>;
pub type CloudModel = ai::CloudModel<f64>;
pub type TrainConfig = ai::TrainConfig<f64>;
