//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All matrix-valued code is written against [`Scalar`] so that the same
//! pipeline runs in `f64` (the default, see the aliases at the crate root)
//! or `f32`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type usable by the pipeline.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    /// Widen to `f64` (used for probability computations and IO).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<F: Scalar>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let s: F = xs.iter().copied().sum();
    Some(s / F::from_usize_lossy(xs.len()))
}

/// Standard deviation with `ddof` degrees of freedom removed from the
/// denominator (0 = population, 1 = sample).
pub fn std_dev<F: Scalar>(xs: &[F], ddof: usize) -> Option<F> {
    if xs.len() <= ddof {
        return None;
    }
    let m = mean(xs)?;
    let ss: F = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some((ss / F::from_usize_lossy(xs.len() - ddof)).sqrt())
}

/// Squared Euclidean distance between equal-length slices.
#[inline]
pub fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(F::zero(), |acc, v| acc + v)
}
