use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::Serialize;

/// Floating point type used for distances: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Serialize + Send + Sync + 'static
{
    /// Slack used when checking metric axioms and non-strict analysis inequalities.
    fn axiom_tol() -> Self;

    /// Converts an `f64` literal. Panics only if the value is not representable at all.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `2^{-k}`, exact for every k the scalar type can represent.
    fn half_pow(k: u32) -> Self {
        Self::lit(0.5).powi(k as i32)
    }
}

impl Scalar for f32 {
    fn axiom_tol() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn axiom_tol() -> Self {
        1e-9
    }
}
