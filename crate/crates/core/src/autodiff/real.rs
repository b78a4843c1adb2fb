//! Scalar precision abstraction: f32 for training, f64 for gradient checks.

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Element type of a [`super::Tape`]. The precision of a graph is fixed at
/// construction by choosing `f32` or `f64` here.
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for lossless-enough constant conversion.
pub(crate) fn c<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("constant fits the scalar type")
}
