//! Floating-point scalar abstraction shared by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar usable throughout the library: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts a literal `f64`, rounding to nearest for narrower types.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in float range")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sign used for classification. Zero scores map to 0, which never equals a ±1 label.
pub fn sign_label<T: Scalar>(score: T) -> i8 {
    if score > T::zero() {
        1
    } else if score < T::zero() {
        -1
    } else {
        0
    }
}
