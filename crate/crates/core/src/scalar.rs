//! Scalar abstraction shared by the floating-point models.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real number type the orbit, thermal and learning models are generic over.
///
/// Implemented for `f32` and `f64`. Mission-level code uses `f64` through the
/// aliases exported at the crate root.
pub trait Real:
    Float + FloatConst + NumCast + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("literal representable in scalar type")
    }

    /// Converts a count into the scalar type.
    fn count(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
