use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type accepted by the forward transforms.
///
/// `f64` is the verification type; `f32` is used for benchmarking.
pub trait Real: Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static {
    const NAME: &'static str;

    /// Converts an `f64` literal.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn as_f64(self) -> f64 {
        self
    }
}
