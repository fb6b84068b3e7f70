//! Flat-metric toolkit for discrete nonnegative measures of unequal mass.
//!
//! The flat metric (dual bounded Lipschitz distance) generalizes the
//! Wasserstein-1 distance to measures whose total masses differ: mass may be
//! transported, but also created or deleted at unit cost. This crate computes
//! it three ways, from exact to learned:
//!
//! - [`analytic`]: closed-form distances and optimal transport/creation
//!   splits for Dirac configurations (one Dirac against a weighted cloud).
//! - [`lp`]: an exact oracle for arbitrary finite discrete measures, by
//!   maximizing the dual objective over test-function values on the supports
//!   with a dense bounded-variable simplex.
//! - [`net`] + [`training`]: a 1-Lipschitz neural estimator (spectral
//!   normalization, GroupSort activations) trained against the dual
//!   objective with an adaptive bound penalty, plus [`calibration`] for the
//!   post-hoc output correction by the expected relative error.
//!
//! [`experiments`] contains the reproducible experiment presets behind the
//! `flat-metric` CLI.
//!
//! Everything numeric is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the `f64` defaults used throughout the experiments.

pub mod analytic;
pub mod calibration;
pub mod error;
pub mod experiments;
pub mod lp;
pub mod measures;
pub mod net;
pub mod scalar;
pub mod simplex;
pub mod training;

pub use calibration::derive_seed;
pub use error::{Error, Result};
pub use lp::DistanceMode;
pub use scalar::Scalar;

/// `f64` discrete measure.
pub type Measure = measures::DiscreteMeasure<f64>;
/// `f64` measure pair.
pub type Pair = measures::MeasurePair<f64>;
/// `f64` Dirac configuration.
pub type Dirac = analytic::DiracConfig<f64>;
/// `f64` Lipschitz network.
pub type Net = net::LipschitzNet<f64>;
/// `f64` training configuration.
pub type TrainConfig = training::TrainConfig<f64>;
/// `f64` calibration model.
pub type DimensionModel = calibration::DimensionModel<f64>;
