//! Floating-point scalar abstraction: the whole numeric core is generic over
//! [`Scalar`], with `f64` as the default everywhere (see the crate-root
//! aliases). `f32` is supported but the documented tolerances assume `f64`.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::{Debug, Display, LowerExp};

/// IEEE-754 scalar (f32 or f64) with everything the crate needs: arithmetic,
/// ndarray linear algebra, uniform/Gaussian sampling and serde.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
    + Serialize
    + DeserializeOwned
    + Display
    + LowerExp
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for tolerances and literal constants.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant")
    }

    /// Widening (or identity) conversion to `f64`.
    fn f64(self) -> f64;

    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn f64(self) -> f64 {
        self
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f32 {
    fn f64(self) -> f64 {
        self as f64
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}
