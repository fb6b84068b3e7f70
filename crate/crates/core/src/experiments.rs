//! Reproducible experiment presets: distance computation with selectable
//! engines, sphere/ball grids with closed-form ground truth, pairwise
//! distance matrices, the Gaussian domain-adaptation preset, grayscale-image
//! benchmarks and the optimizer hyperparameter sweep.
//!
//! Everything here is `f64` and deterministic from a master seed: each grid
//! cell derives its own seed from its coordinates, so parallel execution
//! cannot reorder results.

use crate::analytic::{experiment2_ground_truth, DiracConfig};
use crate::calibration::{correct, derive_seed, expected_relative_error, DimensionModel};
use crate::error::{Error, Result};
use crate::lp::{flat_distance_exact, wasserstein_exact, DistanceMode};
use crate::measures::{normalize_pair, sample_ball_with_split, sample_sphere, DiscreteMeasure};
use crate::scalar::Scalar;
use crate::training::{extract_estimate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Measure = DiscreteMeasure<f64>;

/// How a distance is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    /// Trained Lipschitz network, optionally with output correction.
    Neural,
    /// Exact LP oracle.
    Lp,
    /// Closed-form Dirac-family formula (one side must be a single Dirac).
    Analytic,
}

/// Options for [`distance`].
#[derive(Debug, Clone)]
pub struct DistanceOptions {
    pub mode: DistanceMode,
    pub engine: Engine,
    /// Output-correction model for the neural engine in flat mode; `None`
    /// reports the raw estimate.
    pub correction: Option<DimensionModel<f64>>,
    pub train: TrainConfig<f64>,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            mode: DistanceMode::Flat,
            engine: Engine::Lp,
            correction: None,
            train: TrainConfig::default(),
        }
    }
}

/// A computed distance: `value` is the number to use (corrected when a model
/// was given); `raw` and `sem` are populated by the neural engine.
#[derive(Debug, Clone, Copy)]
pub struct DistanceOutcome {
    pub value: f64,
    pub raw: Option<f64>,
    pub sem: Option<f64>,
}

/// Compute the distance between two measures with the selected engine.
///
/// In Wasserstein mode both measures are first normalized to unit mass (the
/// comparison convention for unequal-mass inputs); in flat mode the masses
/// are what the metric is about and stay untouched. The neural flat engine
/// rescales the pair by `1/min(mass)` for training and scales the estimate
/// back.
pub fn distance(mu: &Measure, nu: &Measure, opts: &DistanceOptions) -> Result<DistanceOutcome> {
    Ok(distance_detailed(mu, nu, opts)?.0)
}

/// Like [`distance`], additionally returning the training state (loss
/// history, schedule checkpoints) when the neural engine ran.
pub fn distance_detailed(
    mu: &Measure,
    nu: &Measure,
    opts: &DistanceOptions,
) -> Result<(DistanceOutcome, Option<crate::training::TrainingState<f64>>)> {
    match opts.mode {
        DistanceMode::Wasserstein => {
            let (m, n) = (mu.total_variation(), nu.total_variation());
            if m <= 0.0 || n <= 0.0 {
                return Err(Error::ZeroMass);
            }
            let mu_n = mu.scaled(1.0 / m);
            let nu_n = nu.scaled(1.0 / n);
            match opts.engine {
                Engine::Lp => Ok((
                    DistanceOutcome {
                        value: wasserstein_exact(&mu_n, &nu_n)?,
                        raw: None,
                        sem: None,
                    },
                    None,
                )),
                Engine::Neural => {
                    let pair = crate::measures::MeasurePair::unscaled(mu_n, nu_n)?;
                    let cfg = TrainConfig {
                        mode: DistanceMode::Wasserstein,
                        ..opts.train.clone()
                    };
                    let out = train(&pair, &cfg)?;
                    let (rho, sem) = extract_estimate(&out.state.history, cfg.tail_window)?;
                    Ok((
                        DistanceOutcome {
                            value: rho,
                            raw: Some(rho),
                            sem: Some(sem),
                        },
                        Some(out.state),
                    ))
                }
                Engine::Analytic => Err(Error::ShapeMismatch(
                    "analytic engine only computes flat distances".into(),
                )),
            }
        }
        DistanceMode::Flat => match opts.engine {
            Engine::Lp => Ok((
                DistanceOutcome {
                    value: flat_distance_exact(mu, nu)?,
                    raw: None,
                    sem: None,
                },
                None,
            )),
            Engine::Analytic => {
                let cfg = dirac_config_of_pair(mu, nu)?;
                Ok((
                    DistanceOutcome {
                        value: cfg.flat_distance(),
                        raw: None,
                        sem: None,
                    },
                    None,
                ))
            }
            Engine::Neural => {
                let pair = normalize_pair(mu, nu)?;
                let cfg = TrainConfig {
                    mode: DistanceMode::Flat,
                    ..opts.train.clone()
                };
                let out = train(&pair, &cfg)?;
                let (rho_scaled, sem_scaled) =
                    extract_estimate(&out.state.history, cfg.tail_window)?;
                let back = 1.0 / pair.scale;
                let raw = rho_scaled * back;
                let value = match &opts.correction {
                    Some(model) => {
                        let (m, n) = (mu.total_variation(), nu.total_variation());
                        let ratio = (m / n).max(n / m);
                        let x_hat = expected_relative_error(model, mu.dim().clamp(1, 20), ratio)?;
                        correct(raw, x_hat)?
                    }
                    None => raw,
                };
                Ok((
                    DistanceOutcome {
                        value,
                        raw: Some(raw),
                        sem: Some(sem_scaled * back),
                    },
                    Some(out.state),
                ))
            }
        },
    }
}

/// Interpret the pair as a Dirac configuration: one side must be a single
/// support point (either side; the metric is symmetric).
pub fn dirac_config_of_pair(mu: &Measure, nu: &Measure) -> Result<DiracConfig<f64>> {
    let (center, cloud) = if mu.len() == 1 {
        (mu, nu)
    } else if nu.len() == 1 {
        (nu, mu)
    } else {
        return Err(Error::ShapeMismatch(
            "analytic engine needs one measure concentrated in a single point".into(),
        ));
    };
    DiracConfig::new(
        center.weight(0),
        cloud.distances_from(center.point(0)),
        cloud.weights().to_vec(),
    )
}

/// Dirac of mass `m` at the origin against `n` unit Diracs on the sphere of
/// radius `r0`, rescaled by `1/min(n, m)`.
pub fn sphere_pair(
    dim: usize,
    n: usize,
    m: f64,
    r0: f64,
    seed: u64,
) -> Result<crate::measures::MeasurePair<f64>> {
    let mu = DiscreteMeasure::dirac(vec![0.0; dim], m)?;
    let nu = sample_sphere(n, dim, r0, seed)?;
    normalize_pair(&mu, &nu)
}

// ---------------------------------------------------------------------------
// Experiment 1: sphere supports, closed-form truth, saturation in the radius
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exp1Spec {
    pub dims: Vec<usize>,
    /// Mass ratios n/m (1 = the balanced saturation experiment).
    pub ratios: Vec<f64>,
    pub radii: Vec<f64>,
    /// Dirac mass m; the sphere gets `round(ratio * base_points)` points.
    pub base_points: usize,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl Exp1Spec {
    /// Radius sweep small enough for a laptop run.
    pub fn desk(master_seed: u64) -> Self {
        Self {
            dims: vec![1, 2],
            ratios: vec![1.0],
            radii: vec![0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 8.0, 28.0],
            base_points: 12,
            repetitions: 1,
            master_seed,
        }
    }

    /// The full radius grid 0.01..3 (step 0.1) plus {8, 13, 18, 23, 28}.
    pub fn paper(master_seed: u64) -> Self {
        let mut radii: Vec<f64> = (0..30).map(|k| 0.01 + 0.1 * k as f64).collect();
        radii.extend([3.0, 8.0, 13.0, 18.0, 23.0, 28.0]);
        Self {
            dims: vec![1, 5, 10],
            ratios: vec![1.0],
            radii,
            base_points: 30,
            repetitions: 1,
            master_seed,
        }
    }
}

/// One trained cell of an experiment grid with known ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthCell {
    pub dim: usize,
    pub ratio: f64,
    pub radius: f64,
    pub inner_fraction: f64,
    pub rep: usize,
    pub rho_true: f64,
    pub rho_raw: f64,
    pub rho_corrected: f64,
    pub sem: f64,
    pub rel_err_raw: f64,
    pub rel_err_corrected: f64,
}

/// Report of an experiment over cells with ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    pub cells: Vec<TruthCell>,
}

impl DistanceReport {
    pub fn mean_abs_rel_err(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        let raw = self.cells.iter().map(|c| c.rel_err_raw.abs()).sum::<f64>() / n;
        let corrected = self
            .cells
            .iter()
            .map(|c| c.rel_err_corrected.abs())
            .sum::<f64>()
            / n;
        (raw, corrected)
    }

    /// Mean and standard deviation of the signed corrected relative errors.
    pub fn rel_err_stats(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        let mean = self.cells.iter().map(|c| c.rel_err_corrected).sum::<f64>() / n;
        if self.cells.len() < 2 {
            return (mean, 0.0);
        }
        let var = self
            .cells
            .iter()
            .map(|c| (c.rel_err_corrected - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (mean, var.sqrt())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "dim,ratio,radius,inner_fraction,rep,rho_true,rho_raw,rho_corrected,sem,rel_err_raw,rel_err_corrected"
        )?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.dim,
                c.ratio,
                c.radius,
                c.inner_fraction,
                c.rep,
                c.rho_true,
                c.rho_raw,
                c.rho_corrected,
                c.sem,
                c.rel_err_raw,
                c.rel_err_corrected
            )?;
        }
        Ok(())
    }
}

/// Run experiment 1: train per (dim, ratio, radius, repetition) cell and
/// compare raw and corrected estimates against `min(2, r0) + |n-m|/min(n,m)`.
pub fn run_experiment1(
    spec: &Exp1Spec,
    cfg: &TrainConfig<f64>,
    model: &DimensionModel<f64>,
) -> Result<DistanceReport> {
    let mut jobs = Vec::new();
    for (di, &dim) in spec.dims.iter().enumerate() {
        for (ri, &ratio) in spec.ratios.iter().enumerate() {
            for (xi, &radius) in spec.radii.iter().enumerate() {
                for rep in 0..spec.repetitions {
                    jobs.push((di, dim, ri, ratio, xi, radius, rep));
                }
            }
        }
    }
    let cells: Result<Vec<TruthCell>> = jobs
        .par_iter()
        .map(|&(di, dim, ri, ratio, xi, radius, rep)| {
            let m_count = spec.base_points;
            let n_count = ((ratio * m_count as f64).round() as usize).max(1);
            let seed = derive_seed(
                spec.master_seed,
                &[1, di as u64, ri as u64, xi as u64, rep as u64],
            );
            let pair = sphere_pair(dim, n_count, m_count as f64, radius, seed)?;
            let cell_cfg = TrainConfig {
                seed: derive_seed(seed, &[2]),
                mode: DistanceMode::Flat,
                ..cfg.clone()
            };
            let out = train(&pair, &cell_cfg)?;
            let (rho_raw, sem) = extract_estimate(&out.state.history, cell_cfg.tail_window)?;
            let (m, n) = (m_count as f64, n_count as f64);
            let rho_true = radius.min(2.0) + (n - m).abs() / n.min(m);
            log::debug!("exp1 cell d={dim} ratio={ratio} r0={radius} rep={rep}: {rho_raw:.4} vs {rho_true:.4}");
            let x_hat = expected_relative_error(model, dim.clamp(1, 20), n / m)?;
            let rho_corrected = correct(rho_raw, x_hat)?;
            Ok(TruthCell {
                dim,
                ratio,
                radius,
                inner_fraction: if radius <= 2.0 { 1.0 } else { 0.0 },
                rep,
                rho_true,
                rho_raw,
                rho_corrected,
                sem,
                rel_err_raw: (rho_raw - rho_true) / rho_true,
                rel_err_corrected: (rho_corrected - rho_true) / rho_true,
            })
        })
        .collect();
    Ok(DistanceReport { cells: cells? })
}

// ---------------------------------------------------------------------------
// Experiment 2: arbitrary supports in a large ball, split by transport range
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exp2Spec {
    pub dim: usize,
    /// Fractions of the cloud inside transport range (radius 2).
    pub inner_fractions: Vec<f64>,
    /// Mass ratios n/m.
    pub ratios: Vec<f64>,
    pub n_points: usize,
    pub outer_radius: f64,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl Exp2Spec {
    pub fn desk(master_seed: u64) -> Self {
        Self {
            dim: 2,
            inner_fractions: vec![0.0, 0.4, 0.8, 1.0],
            ratios: vec![1.0, 2.0, 5.0],
            n_points: 40,
            outer_radius: 200.0,
            repetitions: 2,
            master_seed,
        }
    }

    pub fn paper(master_seed: u64) -> Self {
        Self {
            dim: 2,
            inner_fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            ratios: vec![0.5, 1.0, 2.0, 5.0, 10.0, 16.0],
            n_points: 100,
            outer_radius: 200.0,
            repetitions: 50,
            master_seed,
        }
    }
}

/// Run experiment 2: ball-sampled supports with exactly `l_f` points within
/// transport range, truth from the closed formula, raw and corrected errors.
pub fn run_experiment2(
    spec: &Exp2Spec,
    cfg: &TrainConfig<f64>,
    model: &DimensionModel<f64>,
) -> Result<DistanceReport> {
    let mut jobs = Vec::new();
    for (fi, &frac) in spec.inner_fractions.iter().enumerate() {
        for (ri, &ratio) in spec.ratios.iter().enumerate() {
            for rep in 0..spec.repetitions {
                jobs.push((fi, frac, ri, ratio, rep));
            }
        }
    }
    let cells: Result<Vec<TruthCell>> = jobs
        .par_iter()
        .map(|&(fi, frac, ri, ratio, rep)| {
            let n = spec.n_points;
            let l_f = ((frac * n as f64).round() as usize).min(n);
            let m = (n as f64 / ratio).round().max(1.0);
            let seed = derive_seed(spec.master_seed, &[3, fi as u64, ri as u64, rep as u64]);
            let nu = sample_ball_with_split(n, l_f, spec.dim, spec.outer_radius, 2.0, seed)?;
            let mu = DiscreteMeasure::dirac(vec![0.0; spec.dim], m)?;
            let pair = normalize_pair(&mu, &nu)?;
            let origin = vec![0.0; spec.dim];
            let rho_true = experiment2_ground_truth(n, m, l_f, &nu.distances_from(&origin))?;
            let cell_cfg = TrainConfig {
                seed: derive_seed(seed, &[4]),
                mode: DistanceMode::Flat,
                ..cfg.clone()
            };
            let out = train(&pair, &cell_cfg)?;
            let (rho_raw, sem) = extract_estimate(&out.state.history, cell_cfg.tail_window)?;
            log::debug!(
                "exp2 cell frac={frac} ratio={ratio} rep={rep}: {rho_raw:.4} vs {rho_true:.4}"
            );
            let x_hat = expected_relative_error(model, spec.dim.clamp(1, 20), n as f64 / m)?;
            let rho_corrected = correct(rho_raw, x_hat)?;
            Ok(TruthCell {
                dim: spec.dim,
                ratio,
                radius: spec.outer_radius,
                inner_fraction: frac,
                rep,
                rho_true,
                rho_raw,
                rho_corrected,
                sem,
                rel_err_raw: (rho_raw - rho_true) / rho_true,
                rel_err_corrected: (rho_corrected - rho_true) / rho_true,
            })
        })
        .collect();
    Ok(DistanceReport { cells: cells? })
}

// ---------------------------------------------------------------------------
// Pairwise distance matrices
// ---------------------------------------------------------------------------

/// Pairwise distances between all measures, including the computed diagonal.
/// The upper triangle is computed and mirrored (the metric is symmetric).
pub fn pairwise_matrix(
    measures: &[Measure],
    opts: &DistanceOptions,
    master_seed: u64,
) -> Result<ndarray::Array2<f64>> {
    let n = measures.len();
    if n < 2 {
        return Err(Error::ShapeMismatch("need at least two measures".into()));
    }
    let dim = measures[0].dim();
    for m in measures {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
    }
    let mut jobs = Vec::new();
    for i in 0..n {
        for j in i..n {
            jobs.push((i, j));
        }
    }
    let entries: Result<Vec<(usize, usize, f64)>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let cell_opts = DistanceOptions {
                train: TrainConfig {
                    seed: derive_seed(master_seed, &[5, i as u64, j as u64]),
                    ..opts.train.clone()
                },
                ..opts.clone()
            };
            let d = distance(&measures[i], &measures[j], &cell_opts)?;
            Ok((i, j, d.value))
        })
        .collect();
    let mut matrix = ndarray::Array2::zeros((n, n));
    for (i, j, v) in entries? {
        matrix[(i, j)] = v;
        matrix[(j, i)] = v;
    }
    Ok(matrix)
}

/// Divide each entry by the smaller of the two total masses: the distance of
/// the mass-normalized pair, which is the convention the cluster-comparison
/// tables use (including the published ones this crate reproduces). Useful
/// for reading distances across clusters of very different sizes; not a
/// metric, so triangle-inequality reasoning must use the raw matrix.
pub fn pair_normalized_matrix(
    measures: &[Measure],
    matrix: &ndarray::Array2<f64>,
) -> ndarray::Array2<f64> {
    let masses: Vec<f64> = measures.iter().map(|m| m.total_variation()).collect();
    ndarray::Array2::from_shape_fn(matrix.raw_dim(), |(i, j)| {
        matrix[(i, j)] / masses[i].min(masses[j])
    })
}

/// Row-wise nearest neighbor with lowest-index tie break: for each row of a
/// target-by-source distance matrix, the index of the closest source.
pub fn nearest_source_assignment(matrix: &ndarray::Array2<f64>) -> Vec<usize> {
    matrix
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Write a labeled square matrix as CSV.
pub fn write_matrix_csv<W: std::io::Write>(
    labels: &[String],
    matrix: &ndarray::Array2<f64>,
    out: &mut W,
) -> Result<()> {
    writeln!(out, "label,{}", labels.join(","))?;
    for (i, label) in labels.iter().enumerate() {
        let row: Vec<String> = (0..labels.len())
            .map(|j| format!("{}", matrix[(i, j)]))
            .collect();
        writeln!(out, "{},{}", label, row.join(","))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Domain-adaptation preset: six bivariate Gaussian clusters
// ---------------------------------------------------------------------------

/// Sample the six-cluster domain-adaptation configuration: sources A, B, C
/// and deformed targets X, Y, Z with systematic mass differences. Sample
/// counts are 50, 50, 150, 38, 42, 113 and every point carries weight 1/50,
/// so the total masses are the imposed ratios relative to A:
/// 1, 1, 3, 0.76, 0.84, 2.26.
pub fn gaussian_cluster_preset(master_seed: u64) -> Result<Vec<(String, Measure)>> {
    let sigma = 0.3;
    let point_weight = 1.0 / 50.0;
    // (label, mean, covariance (2x2, row-major), count)
    let specs: [(&str, [f64; 2], [f64; 4], usize); 6] = [
        ("A", [1.0, 5.0], [1.0, 0.0, 0.0, 1.0], 50),
        ("B", [5.0, 3.5], [1.0, 0.0, 0.0, 1.0], 50),
        ("C", [3.0, 1.0], [5.0, 0.0, 0.0, 1.0], 150),
        ("X", [2.0, 5.0], [1.0, 0.5, 0.5, 1.0], 38),
        ("Y", [5.0, 3.5], [1.5, 1.0, 1.0, 1.5], 42),
        ("Z", [6.5, 1.0], [2.0, 0.0, 0.0, 2.0], 113),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(k, &(label, mean, cov, count))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[6, k as u64]));
            // Cholesky factor of sigma * cov.
            let c11 = (sigma * cov[0]).sqrt();
            let c21 = sigma * cov[2] / c11;
            let c22 = (sigma * cov[3] - c21 * c21).sqrt();
            let points: Vec<Vec<f64>> = (0..count)
                .map(|_| {
                    let g1: f64 = f64::standard_normal(&mut rng);
                    let g2: f64 = f64::standard_normal(&mut rng);
                    vec![mean[0] + c11 * g1, mean[1] + c21 * g1 + c22 * g2]
                })
                .collect();
            let weights = vec![point_weight; count];
            Ok((label.to_string(), DiscreteMeasure::new(points, weights, 2)?))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Image benchmark: image measure against a hot pixel at the origin
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageBenchRow {
    pub image: String,
    pub class: String,
    pub pixel_mass: f64,
    pub rho_true: f64,
    pub rho_raw: Option<f64>,
    pub rho_corrected: Option<f64>,
    pub residual: Option<f64>,
}

/// Benchmark the neural estimator against the closed-form truth for image
/// measures versus `c * delta_(0,0)`. Images with no foreground get a
/// truth-only row (the neural engine needs a nonempty support).
pub fn image_benchmark(
    images: &[(String, String, Measure)],
    pixel_masses: &[f64],
    cfg: &TrainConfig<f64>,
    model: &DimensionModel<f64>,
    master_seed: u64,
) -> Result<Vec<ImageBenchRow>> {
    let mut jobs = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        for (ci, &c) in pixel_masses.iter().enumerate() {
            jobs.push((ii, img, ci, c));
        }
    }
    jobs.par_iter()
        .map(|&(ii, (name, class, measure), ci, c)| {
            let origin = vec![0.0, 0.0];
            let rho_true = if measure.is_empty() {
                // Pure deletion of the pixel mass.
                c
            } else {
                DiracConfig::new(
                    c,
                    measure.distances_from(&origin),
                    measure.weights().to_vec(),
                )?
                .flat_distance()
            };
            if measure.is_empty() {
                return Ok(ImageBenchRow {
                    image: name.clone(),
                    class: class.clone(),
                    pixel_mass: c,
                    rho_true,
                    rho_raw: None,
                    rho_corrected: None,
                    residual: None,
                });
            }
            let pixel = DiscreteMeasure::dirac(origin.clone(), c)?;
            let opts = DistanceOptions {
                mode: DistanceMode::Flat,
                engine: Engine::Neural,
                correction: Some(model.clone()),
                train: TrainConfig {
                    seed: derive_seed(master_seed, &[7, ii as u64, ci as u64]),
                    ..cfg.clone()
                },
            };
            let out = distance(measure, &pixel, &opts)?;
            Ok(ImageBenchRow {
                image: name.clone(),
                class: class.clone(),
                pixel_mass: c,
                rho_true,
                rho_raw: out.raw,
                rho_corrected: Some(out.value),
                residual: Some((out.value - rho_true).abs() / rho_true),
            })
        })
        .collect()
}

/// Median residual per class over the benchmark rows (rows without residuals
/// are skipped).
pub fn median_residual_per_class(rows: &[ImageBenchRow]) -> Vec<(String, f64)> {
    let mut classes: Vec<String> = rows.iter().map(|r| r.class.clone()).collect();
    classes.sort();
    classes.dedup();
    classes
        .into_iter()
        .filter_map(|class| {
            let mut residuals: Vec<f64> = rows
                .iter()
                .filter(|r| r.class == class)
                .filter_map(|r| r.residual)
                .collect();
            if residuals.is_empty() {
                return None;
            }
            residuals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let mid = residuals.len() / 2;
            let median = if residuals.len() % 2 == 0 {
                0.5 * (residuals[mid - 1] + residuals[mid])
            } else {
                residuals[mid]
            };
            Some((class, median))
        })
        .collect()
}

pub fn write_image_bench_csv<W: std::io::Write>(rows: &[ImageBenchRow], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "image,class,pixel_mass,rho_true,rho_raw,rho_corrected,residual"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.image,
            r.class,
            r.pixel_mass,
            r.rho_true,
            opt(r.rho_raw),
            opt(r.rho_corrected),
            opt(r.residual)
        )?;
    }
    Ok(())
}

/// Deterministic synthetic grayscale test images (square matrices of
/// intensities in `[0, 255]`), used by the image benchmark at desk scale:
/// a filled disk, a smooth radial ramp, and pseudo-random noise.
pub fn synthetic_image(kind: &str, size: usize, seed: u64) -> Result<ndarray::Array2<f64>> {
    let mut grid = ndarray::Array2::zeros((size, size));
    let center = (size as f64 - 1.0) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..size {
        for j in 0..size {
            let dx = (j as f64 - center) / size as f64;
            let dy = (i as f64 - center) / size as f64;
            let r = (dx * dx + dy * dy).sqrt();
            grid[(i, j)] = match kind {
                "disk" => {
                    if r < 0.3 {
                        255.0
                    } else {
                        0.0
                    }
                }
                "ramp" => 255.0 * (1.0 - (2.0 * r).min(1.0)),
                "noise" => rng.gen_range(0.0f64..256.0).floor().min(255.0),
                other => {
                    return Err(Error::Parse(format!("unknown synthetic image {other:?}")));
                }
            };
        }
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Hyperparameter sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub feature: String,
    pub value: String,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub dim: usize,
    pub radius: f64,
    pub n_points: usize,
    pub master_seed: u64,
}

impl SweepSpec {
    /// The optimizer-sweep preset: equal masses, supports on a radius-5
    /// sphere in four dimensions.
    pub fn desk(master_seed: u64) -> Self {
        Self {
            dim: 4,
            radius: 5.0,
            n_points: 48,
            master_seed,
        }
    }
}

/// Probe optimizer hyperparameters one at a time around the default
/// configuration: learning rate, step-decay factor at three milestone
/// presets, Adam beta1 and weight decay. Reports the relative error against
/// the closed-form truth (`min(2, r0)` for the balanced pair).
pub fn hyperparameter_sweep(spec: &SweepSpec, base: &TrainConfig<f64>) -> Result<Vec<SweepRow>> {
    let mut jobs: Vec<(String, String, TrainConfig<f64>)> = Vec::new();
    for &lr in &[1e-1, 1e-2, 1e-3, 1e-4] {
        jobs.push((
            "learning_rate".into(),
            format!("{lr}"),
            TrainConfig { lr, ..base.clone() },
        ));
    }
    for &(m1, m2) in &[(32usize, 64usize), (200, 400), (1000, 2000)] {
        for &decay in &[0.9, 0.8, 0.7] {
            jobs.push((
                format!("lr_decay_milestones_{m1}_{m2}"),
                format!("{decay}"),
                TrainConfig {
                    lr_decay: decay,
                    lr_milestones: vec![m1, m2],
                    ..base.clone()
                },
            ));
        }
    }
    for &beta1 in &[0.95, 0.9, 0.85, 0.8] {
        jobs.push((
            "adam_beta1".into(),
            format!("{beta1}"),
            TrainConfig {
                beta1,
                ..base.clone()
            },
        ));
    }
    for &wd in &[0.0, 0.01, 0.05, 0.1] {
        jobs.push((
            "weight_decay".into(),
            format!("{wd}"),
            TrainConfig {
                weight_decay: wd,
                ..base.clone()
            },
        ));
    }

    let truth = spec.radius.min(2.0);
    jobs.par_iter()
        .enumerate()
        .map(|(k, (feature, value, cfg))| {
            let seed = derive_seed(spec.master_seed, &[8, k as u64]);
            let pair = sphere_pair(
                spec.dim,
                spec.n_points,
                spec.n_points as f64,
                spec.radius,
                seed,
            )?;
            let cell_cfg = TrainConfig {
                seed: derive_seed(seed, &[9]),
                ..cfg.clone()
            };
            let out = train(&pair, &cell_cfg)?;
            let (rho, _) = extract_estimate(&out.state.history, cell_cfg.tail_window)?;
            Ok(SweepRow {
                feature: feature.clone(),
                value: value.clone(),
                rel_err: (rho - truth) / truth,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: &mut W) -> Result<()> {
    writeln!(out, "feature,value,rel_err")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.feature, r.value, r.rel_err)?;
    }
    Ok(())
}
