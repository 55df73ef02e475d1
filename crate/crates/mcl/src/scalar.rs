//! Scalar abstraction for the numeric core.
//!
//! All tensor math is generic over [`Scalar`] so the same code runs in f32
//! or f64. The crate-root aliases pin f64, which the gradient checks and
//! the checkpoint format require.

use num_traits::Float;
use std::fmt::{Debug, Display};

/// Floating-point scalar usable by every operation in this crate.
pub trait Scalar: Float + Debug + Display + Send + Sync + 'static {
    /// Conversion from f64 (exact when `Self` is f64).
    fn from_f64(v: f64) -> Self;

    /// Widening conversion to f64 (exact for f32 and f64).
    fn to_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}
