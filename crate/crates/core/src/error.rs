//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A measure has zero total mass where positive mass is required.
    #[error("measure has zero total mass")]
    ZeroMass,

    /// Sphere/ball sampling asked for a non-positive or inverted radius.
    #[error("invalid radius: {0}")]
    InvalidRadius(String),

    /// Ball sampling asked for more inner points than total points.
    #[error("invalid split: {inner} inner points requested out of {total}")]
    InvalidSplit { inner: usize, total: usize },

    /// An image pixel has negative intensity.
    #[error("negative intensity {0}")]
    NegativeIntensity(f64),

    /// An image pixel exceeds the declared maximum intensity.
    #[error("intensity {value} exceeds maximum {max}")]
    IntensityTooLarge { value: f64, max: f64 },

    /// Vectors or matrices whose dimensions do not chain.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A transport/creation split violates its feasibility constraints.
    #[error("infeasible decomposition: {0}")]
    InfeasibleDecomposition(String),

    /// Dirac configuration with a non-positive weight or mass.
    #[error("dirac configuration requires strictly positive weights and mass")]
    NonPositiveWeight,

    /// Wasserstein mode on measures whose total masses differ.
    #[error("wasserstein distance requires equal total masses (got {mu} vs {nu})")]
    UnbalancedWasserstein { mu: f64, nu: f64 },

    /// The LP solver failed to reach an optimum.
    #[error("numerical failure in LP solver: {0}")]
    NumericalFailure(String),

    /// GroupSort with a group size that does not divide the vector length.
    #[error("group size {group} does not divide vector length {len}")]
    BadGroupSize { group: usize, len: usize },

    /// Spectral normalization of an (almost) zero matrix.
    #[error("cannot spectrally normalize a zero matrix")]
    ZeroMatrix,

    /// Parameter and gradient/moment shapes disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: total loss {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },

    /// Loss history shorter than the extraction window.
    #[error("history of length {len} is shorter than window {window}")]
    ShortHistory { len: usize, window: usize },

    /// Mass ratio outside the calibration model's domain.
    #[error("bad mass ratio {0}: must be > 0")]
    BadRatio(f64),

    /// Dimension outside the calibration model's fitted range.
    #[error("dimension {0} outside supported range [1, 20]")]
    BadDimension(usize),

    /// Output correction with an expected error at or below -1.
    #[error("degenerate correction: expected relative error {0} <= -1")]
    DegenerateCorrection(f64),

    /// Curve fitting failed to produce finite parameters.
    #[error("curve fit diverged")]
    FitDiverged,

    /// Dimension-model fit with fewer than two distinct dimensions.
    #[error("need at least two distinct dimensions, got {0}")]
    InsufficientDimensions(usize),

    /// Malformed input file (point-cloud CSV, image matrix, PGM, model file).
    #[error("parse error: {0}")]
    Parse(String),

    /// I/O failure while reading or writing artifacts.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
