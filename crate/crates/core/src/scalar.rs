//! Floating-point abstraction for the numeric core.
//!
//! Everything downstream (regression, dynamic programming, estimators,
//! simulation) is generic over [`Scalar`] so the same code runs at `f32` or
//! `f64`. Concrete aliases at the crate root pin the default precision used
//! by the command-line tools.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar usable throughout the crate.
///
/// Beyond arithmetic this adds the two random draws the simulator needs, so
/// that generic code never has to name distribution types.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Send + Sync + Debug + Display + 'static
{
    /// Lossy conversion from `f64` (panics only for values outside the
    /// type's representable range, which never occurs for the constants
    /// used here).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Lossy conversion to `f64` for reporting and serialization.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// Convert a count to the scalar type.
    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable in scalar type")
    }

    /// One standard normal draw.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw from `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Logistic function `1 / (1 + exp(-x))`, saturating gracefully.
    #[inline]
    fn expit(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            // Rearranged for numerical stability at very negative inputs.
            let e = self.exp();
            e / (one + e)
        }
    }

    /// Log-odds `ln(x / (1 - x))`; the inverse of [`Scalar::expit`].
    #[inline]
    fn logit(self) -> Self {
        (self / (Self::one() - self)).ln()
    }
}

impl Scalar for f64 {
    #[inline]
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }
}

impl Scalar for f32 {
    #[inline]
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }
}
