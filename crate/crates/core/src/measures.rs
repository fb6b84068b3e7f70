//! Discrete nonnegative measures: weighted point clouds in `R^d`.
//!
//! A measure is a finite list of support points with nonnegative weights; the
//! total mass is arbitrary (this is the whole point — nothing here normalizes
//! to probability measures unless explicitly asked to). The module also owns
//! the samplers used by the experiment presets and the file-ingestion formats
//! (point-cloud CSV, plain-text intensity matrices, 8-bit PGM).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read};
use std::path::Path;

/// Weighted point cloud representing a nonnegative measure on `R^d`.
///
/// Immutable after construction; all mutators return new values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiscreteMeasure<T = f64> {
    coords: Vec<T>, // row-major, n * dim
    weights: Vec<T>,
    dim: usize,
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Build a measure from `points` (each of length `dim`) and `weights`.
    pub fn new(points: Vec<Vec<T>>, weights: Vec<T>, dim: usize) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} weights",
                points.len(),
                weights.len()
            )));
        }
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        for &w in &weights {
            if !(w >= T::zero()) {
                return Err(Error::ShapeMismatch(format!("negative weight {w}")));
            }
        }
        Ok(Self {
            coords,
            weights,
            dim,
        })
    }

    /// Measure with unit weight at every point.
    pub fn unit_weights(points: Vec<Vec<T>>, dim: usize) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![T::one(); n], dim)
    }

    /// Single Dirac of mass `mass` at `point`.
    pub fn dirac(point: Vec<T>, mass: T) -> Result<Self> {
        let dim = point.len();
        Self::new(vec![point], vec![mass], dim)
    }

    /// The empty measure on `R^dim` (zero total mass).
    pub fn empty(dim: usize) -> Self {
        Self {
            coords: Vec::new(),
            weights: Vec::new(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn points(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Support coordinates as a `dim x n` matrix (one column per point).
    pub fn coords_matrix(&self) -> Array2<T> {
        let n = self.len();
        Array2::from_shape_fn((self.dim, n), |(k, i)| self.coords[i * self.dim + k])
    }

    /// Total variation norm; for nonnegative measures this is the total mass.
    pub fn total_variation(&self) -> T {
        self.weights.iter().fold(T::zero(), |acc, &w| acc + w)
    }

    /// Same support, every weight multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            coords: self.coords.clone(),
            weights: self.weights.iter().map(|&w| w * factor).collect(),
            dim: self.dim,
        }
    }

    /// Euclidean distance from `origin` to each support point.
    pub fn distances_from(&self, origin: &[T]) -> Vec<T> {
        self.points()
            .map(|p| {
                p.iter()
                    .zip(origin)
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
                    .sqrt()
            })
            .collect()
    }
}

/// A pair of measures on the same space, with the applied mass rescaling
/// factor recorded (`scale == 1` when unscaled).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasurePair<T = f64> {
    pub mu: DiscreteMeasure<T>,
    pub nu: DiscreteMeasure<T>,
    pub scale: T,
}

impl<T: Scalar> MeasurePair<T> {
    /// Pair the measures without rescaling.
    pub fn unscaled(mu: DiscreteMeasure<T>, nu: DiscreteMeasure<T>) -> Result<Self> {
        if mu.dim() != nu.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: nu.dim(),
            });
        }
        Ok(Self {
            mu,
            nu,
            scale: T::one(),
        })
    }
}

/// Rescale both measures by `1 / min(mass(mu), mass(nu))` so the lighter one
/// becomes a probability measure. The factor is recorded in `scale`.
pub fn normalize_pair<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
) -> Result<MeasurePair<T>> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let (m, n) = (mu.total_variation(), nu.total_variation());
    if m <= T::zero() || n <= T::zero() {
        return Err(Error::ZeroMass);
    }
    let low = m.min(n);
    Ok(MeasurePair {
        mu: mu.scaled(T::one() / low),
        nu: nu.scaled(T::one() / low),
        scale: T::one() / low,
    })
}

fn unit_direction<T: Scalar, R: Rng>(dim: usize, rng: &mut R) -> Vec<T> {
    loop {
        let g: Vec<T> = (0..dim).map(|_| T::standard_normal(rng)).collect();
        let norm = g.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm > T::c(1e-12) {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `n` unit-weight points uniform on the sphere of radius `radius` in `R^dim`
/// (standard Gaussians rescaled to the target norm; for `dim == 1` this gives
/// `±radius`). Same seed, same points, bit for bit.
pub fn sample_sphere<T: Scalar>(
    n: usize,
    dim: usize,
    radius: T,
    seed: u64,
) -> Result<DiscreteMeasure<T>> {
    if radius <= T::zero() {
        return Err(Error::InvalidRadius(format!("sphere radius {radius}")));
    }
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<T>> = (0..n)
        .map(|_| {
            unit_direction::<T, _>(dim, &mut rng)
                .into_iter()
                .map(|x| x * radius)
                .collect()
        })
        .collect();
    DiscreteMeasure::unit_weights(points, dim)
}

/// `n` unit-weight points in the ball of radius `outer`, of which exactly
/// `inner_count` have norm `<= inner` and the rest have norm in
/// `(inner, outer]`. Each region is sampled uniformly via the radial inverse
/// CDF (`r = R * u^(1/d)` restricted to the region).
pub fn sample_ball_with_split<T: Scalar>(
    n: usize,
    inner_count: usize,
    dim: usize,
    outer: T,
    inner: T,
    seed: u64,
) -> Result<DiscreteMeasure<T>> {
    if inner_count > n {
        return Err(Error::InvalidSplit {
            inner: inner_count,
            total: n,
        });
    }
    if !(T::zero() < inner && inner < outer) {
        return Err(Error::InvalidRadius(format!(
            "need 0 < inner < outer, got {inner} and {outer}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_exp = T::one() / T::c(dim as f64);
    let inner_d = inner.powi(dim as i32);
    let outer_d = outer.powi(dim as i32);
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let dir = unit_direction::<T, _>(dim, &mut rng);
        let u: T = rng.gen_range(T::zero()..T::one());
        let r = if i < inner_count {
            u.powf(d_exp) * inner
        } else {
            // u in (0, 1] keeps the radius strictly above `inner`.
            (inner_d + (T::one() - u) * (outer_d - inner_d)).powf(d_exp)
        };
        let mut p: Vec<T> = dir.into_iter().map(|x| x * r).collect();
        // Guard the region boundaries against rounding of the final scaling.
        let norm = p.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if i < inner_count {
            if norm > inner {
                let f = inner / norm;
                p.iter_mut().for_each(|x| *x *= f);
            }
        } else if norm <= inner {
            let f = inner * (T::one() + T::c(1e-12)) / norm;
            p.iter_mut().for_each(|x| *x *= f);
        } else if norm > outer {
            let f = outer / norm;
            p.iter_mut().for_each(|x| *x *= f);
        }
        points.push(p);
    }
    DiscreteMeasure::unit_weights(points, dim)
}

/// Number of intensity classes used when turning a grayscale image into a
/// measure.
pub const INTENSITY_BINS: usize = 9;

/// Convert a grayscale intensity grid into a measure on `[0, 1]^2`.
///
/// Pixel `(row i, col j)` of an `R x C` grid maps to `((j+0.5)/C, (i+0.5)/R)`.
/// Intensities are binned into [`INTENSITY_BINS`] equal-width classes of
/// `(0, intensity_max]`; the weight of a pixel is its class index
/// `floor(intensity * 9 / intensity_max)`, so intensities up to
/// `intensity_max/9` (28 for 8-bit images) count as background and are
/// dropped, while `intensity_max` itself lands in class 9.
pub fn image_to_measure<T: Scalar>(
    grid: &Array2<T>,
    intensity_max: T,
) -> Result<DiscreteMeasure<T>> {
    let (rows, cols) = grid.dim();
    let bins = T::c(INTENSITY_BINS as f64);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = grid[(i, j)];
            if v < T::zero() {
                return Err(Error::NegativeIntensity(v.f64()));
            }
            if v > intensity_max {
                return Err(Error::IntensityTooLarge {
                    value: v.f64(),
                    max: intensity_max.f64(),
                });
            }
            let bin = (v * bins / intensity_max).floor();
            if bin > T::zero() {
                let x = (T::c(j as f64) + T::c(0.5)) / T::c(cols as f64);
                let y = (T::c(i as f64) + T::c(0.5)) / T::c(rows as f64);
                points.push(vec![x, y]);
                weights.push(bin);
            }
        }
    }
    if points.is_empty() {
        return Ok(DiscreteMeasure::empty(2));
    }
    DiscreteMeasure::new(points, weights, 2)
}

// ---------------------------------------------------------------------------
// File ingestion
// ---------------------------------------------------------------------------

/// Read a point cloud from CSV: one row per point, `d` coordinate columns and
/// an optional trailing weight column.
///
/// A header row is detected by its first field not parsing as a number. With
/// a header, the last column is treated as weights iff it is named `w` or
/// `weight` (case-insensitive). Without a header, all columns are
/// coordinates and every point gets weight 1 unless `force_weight_column`.
pub fn read_measure_csv<T: Scalar, R: BufRead>(
    reader: R,
    force_weight_column: bool,
) -> Result<DiscreteMeasure<T>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header: Option<Vec<String>> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            header = Some(fields.iter().map(|s| s.to_string()).collect());
            continue;
        }
        let row: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {f:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(prev) = rows.first() {
            if row.len() != prev.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 1,
                    prev.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    let ncols = rows[0].len();
    let has_weights = force_weight_column
        || header.as_ref().is_some_and(|h| {
            h.last()
                .map(|name| {
                    let n = name.to_ascii_lowercase();
                    n == "w" || n == "weight"
                })
                .unwrap_or(false)
        });
    let dim = if has_weights { ncols - 1 } else { ncols };
    if dim == 0 {
        return Err(Error::Parse("no coordinate columns".into()));
    }
    let mut points = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len());
    for row in rows {
        points.push(row[..dim].iter().map(|&v| T::c(v)).collect::<Vec<T>>());
        weights.push(if has_weights {
            T::c(row[dim])
        } else {
            T::one()
        });
    }
    DiscreteMeasure::new(points, weights, dim)
}

/// Read a point cloud from a CSV file. See [`read_measure_csv`].
pub fn read_measure_csv_path<T: Scalar>(
    path: &Path,
    force_weight_column: bool,
) -> Result<DiscreteMeasure<T>> {
    let file = std::fs::File::open(path)?;
    read_measure_csv(std::io::BufReader::new(file), force_weight_column)
}

/// Write a point cloud as CSV with header `x0,..,x{d-1},w`.
pub fn write_measure_csv<T: Scalar, W: std::io::Write>(
    measure: &DiscreteMeasure<T>,
    out: &mut W,
) -> Result<()> {
    let names: Vec<String> = (0..measure.dim()).map(|k| format!("x{k}")).collect();
    writeln!(out, "{},w", names.join(","))?;
    for i in 0..measure.len() {
        let coords: Vec<String> = measure.point(i).iter().map(|c| format!("{c}")).collect();
        writeln!(out, "{},{}", coords.join(","), measure.weight(i))?;
    }
    Ok(())
}

/// Read a grayscale image as an intensity matrix plus its maximum intensity.
///
/// Supports plain-text matrices (whitespace-separated numbers, one row per
/// line; maximum intensity taken as 255) and 8-bit PGM, both ASCII (`P2`) and
/// binary (`P5`).
pub fn read_image(path: &Path) -> Result<(Array2<f64>, f64)> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        read_pgm(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
        let grid = read_text_matrix(&text)?;
        Ok((grid, 255.0))
    }
}

fn read_text_matrix(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {f:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(prev) = rows.first() {
            if row.len() != prev.len() {
                return Err(Error::Parse(format!(
                    "ragged matrix at line {}",
                    lineno + 1
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty image".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_fn((r, c), |(i, j)| rows[i][j]))
}

fn read_pgm(bytes: &[u8]) -> Result<(Array2<f64>, f64)> {
    let mut cursor = std::io::Cursor::new(bytes);
    let mut tokens: Vec<String> = Vec::new();
    // Header: magic, width, height, maxval, with '#' comments allowed.
    let binary = bytes.starts_with(b"P5");
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        let mut tok = String::new();
        loop {
            if cursor.read_exact(&mut byte).is_err() {
                return Err(Error::Parse("truncated PGM header".into()));
            }
            let ch = byte[0] as char;
            if ch == '#' {
                // Skip comment to end of line.
                while cursor.read_exact(&mut byte).is_ok() && byte[0] != b'\n' {}
                continue;
            }
            if ch.is_whitespace() {
                if tok.is_empty() {
                    continue;
                }
                break;
            }
            tok.push(ch);
        }
        tokens.push(tok);
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Parse("bad PGM width".into()))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Parse("bad PGM height".into()))?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| Error::Parse("bad PGM maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("unsupported PGM maxval {maxval}")));
    }
    let mut grid = Array2::zeros((height, width));
    if binary {
        let mut data = vec![0u8; width * height];
        cursor
            .read_exact(&mut data)
            .map_err(|_| Error::Parse("truncated PGM data".into()))?;
        for i in 0..height {
            for j in 0..width {
                grid[(i, j)] = data[i * width + j] as f64;
            }
        }
    } else {
        let rest = String::from_utf8(bytes[cursor.position() as usize..].to_vec())
            .map_err(|e| Error::Parse(e.to_string()))?;
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad PGM value {t:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() < width * height {
            return Err(Error::Parse("truncated PGM data".into()));
        }
        for i in 0..height {
            for j in 0..width {
                grid[(i, j)] = values[i * width + j];
            }
        }
    }
    Ok((grid, maxval as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_variation_sums_weights() {
        let m: DiscreteMeasure =
            DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 1.5], 1).unwrap();
        assert_eq!(m.total_variation(), 2.0);
        let dirac: DiscreteMeasure = DiscreteMeasure::dirac(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(dirac.total_variation(), 1.0);
    }

    #[test]
    fn tv_of_difference_split_is_two() {
        // delta_a and delta_b, as the positive/negative parts of mu - nu:
        // the TV cost is 2 no matter how far apart a and b are.
        let a: DiscreteMeasure = DiscreteMeasure::dirac(vec![0.0], 1.0).unwrap();
        let b: DiscreteMeasure = DiscreteMeasure::dirac(vec![1e9], 1.0).unwrap();
        assert_eq!(a.total_variation() + b.total_variation(), 2.0);
    }

    #[test]
    fn normalize_pair_scales_by_lower_mass() {
        let mu: DiscreteMeasure = DiscreteMeasure::dirac(vec![0.0], 5.0).unwrap();
        let nu: DiscreteMeasure =
            DiscreteMeasure::new(vec![vec![1.0], vec![2.0]], vec![1.0, 2.0], 1).unwrap();
        let pair = normalize_pair(&mu, &nu).unwrap();
        assert!((pair.mu.total_variation() - 5.0 / 3.0).abs() < 1e-12);
        assert!((pair.nu.total_variation() - 1.0).abs() < 1e-12);
        assert!((pair.scale - 1.0 / 3.0).abs() < 1e-15);
        let min = pair.mu.total_variation().min(pair.nu.total_variation());
        assert!((min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_pair_identity_and_appendix_masses() {
        let mu: DiscreteMeasure = DiscreteMeasure::dirac(vec![0.0], 1.0).unwrap();
        let nu: DiscreteMeasure = DiscreteMeasure::dirac(vec![2.0], 1.0).unwrap();
        let pair = normalize_pair(&mu, &nu).unwrap();
        assert_eq!(pair.scale, 1.0);
        assert_eq!(pair.mu.total_variation(), 1.0);

        // m = 2^4 * 10, n = 2^4 * 50 -> masses (1, 5) after scaling.
        let mu: DiscreteMeasure = DiscreteMeasure::dirac(vec![0.0], 160.0).unwrap();
        let nu: DiscreteMeasure = DiscreteMeasure::dirac(vec![1.0], 800.0).unwrap();
        let pair = normalize_pair(&mu, &nu).unwrap();
        assert!((pair.mu.total_variation() - 1.0).abs() < 1e-12);
        assert!((pair.nu.total_variation() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_pair_rejects_zero_mass() {
        let mu: DiscreteMeasure = DiscreteMeasure::empty(1);
        let nu: DiscreteMeasure = DiscreteMeasure::dirac(vec![0.0], 1.0).unwrap();
        assert!(matches!(normalize_pair(&mu, &nu), Err(Error::ZeroMass)));
    }

    #[test]
    fn sphere_sample_has_exact_norms() {
        for &dim in &[1usize, 2, 5, 10] {
            let m: DiscreteMeasure = sample_sphere(50, dim, 2.0, 7).unwrap();
            assert_eq!(m.len(), 50);
            for p in m.points() {
                let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 2.0).abs() < 1e-9, "norm {norm} in dim {dim}");
            }
        }
    }

    #[test]
    fn sphere_dim_one_is_plus_minus_radius() {
        let m: DiscreteMeasure = sample_sphere(1, 1, 5.0, 3).unwrap();
        let x = m.point(0)[0];
        assert!((x.abs() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_paper_sizes() {
        // n = 30 * 2^d points, all norms equal to the radius.
        let d = 3;
        let m: DiscreteMeasure = sample_sphere(30 << d, d, 1.0, 11).unwrap();
        assert_eq!(m.len(), 240);
        for p in m.points() {
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_sampling_is_deterministic() {
        let a: DiscreteMeasure = sample_sphere(20, 3, 1.5, 42).unwrap();
        let b: DiscreteMeasure = sample_sphere(20, 3, 1.5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_rejects_bad_radius() {
        assert!(matches!(
            sample_sphere::<f64>(4, 2, 0.0, 0),
            Err(Error::InvalidRadius(_))
        ));
    }

    #[test]
    fn ball_split_counts_are_exact() {
        let m: DiscreteMeasure = sample_ball_with_split(100, 40, 2, 200.0, 2.0, 5).unwrap();
        let inside = m
            .points()
            .filter(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt() <= 2.0)
            .count();
        assert_eq!(inside, 40);
        for p in m.points() {
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 200.0);
        }
    }

    #[test]
    fn ball_split_boundary_cases() {
        let all_in: DiscreteMeasure = sample_ball_with_split(10, 10, 3, 200.0, 2.0, 1).unwrap();
        for p in all_in.points() {
            assert!(p.iter().map(|x| x * x).sum::<f64>().sqrt() <= 2.0);
        }
        let all_out: DiscreteMeasure = sample_ball_with_split(10, 0, 3, 200.0, 2.0, 2).unwrap();
        for p in all_out.points() {
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm > 2.0 && norm <= 200.0);
        }
    }

    #[test]
    fn ball_split_rejects_overfull_inner() {
        assert!(matches!(
            sample_ball_with_split::<f64>(3, 4, 2, 200.0, 2.0, 0),
            Err(Error::InvalidSplit { .. })
        ));
    }

    #[test]
    fn image_binning_matches_published_examples() {
        // Intensity 23 counts as black, 250 is fed eightfold.
        let g23 = Array2::from_shape_vec((1, 1), vec![23.0]).unwrap();
        let m: DiscreteMeasure = image_to_measure(&g23, 255.0).unwrap();
        assert!(m.is_empty());

        let g250 = Array2::from_shape_vec((1, 1), vec![250.0]).unwrap();
        let m: DiscreteMeasure = image_to_measure(&g250, 255.0).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.weight(0), 8.0);

        let g28 = Array2::from_shape_vec((1, 1), vec![28.0]).unwrap();
        let m: DiscreteMeasure = image_to_measure(&g28, 255.0).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn image_full_intensity_grid() {
        let g = Array2::from_elem((2, 2), 255.0);
        let m: DiscreteMeasure = image_to_measure(&g, 255.0).unwrap();
        assert_eq!(m.len(), 4);
        for i in 0..4 {
            assert_eq!(m.weight(i), 9.0);
            for &c in m.point(i) {
                assert!(c == 0.25 || c == 0.75);
            }
        }
        assert_eq!(m.total_variation(), 36.0);
    }

    #[test]
    fn image_rejects_negative_intensity() {
        let g = Array2::from_shape_vec((1, 1), vec![-1.0]).unwrap();
        assert!(matches!(
            image_to_measure::<f64>(&g, 255.0),
            Err(Error::NegativeIntensity(_))
        ));
    }

    #[test]
    fn csv_roundtrip_with_weights() {
        let m: DiscreteMeasure =
            DiscreteMeasure::new(vec![vec![0.25, -1.5], vec![3.0, 4.0]], vec![1.0, 2.5], 2)
                .unwrap();
        let mut buf = Vec::new();
        write_measure_csv(&m, &mut buf).unwrap();
        let back: DiscreteMeasure = read_measure_csv(&buf[..], false).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_headerless_defaults_to_unit_weights() {
        let data = "0.0,1.0\n2.0,3.0\n";
        let m: DiscreteMeasure = read_measure_csv(data.as_bytes(), false).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.weights(), &[1.0, 1.0]);
        let forced: DiscreteMeasure = read_measure_csv(data.as_bytes(), true).unwrap();
        assert_eq!(forced.dim(), 1);
        assert_eq!(forced.weights(), &[1.0, 3.0]);
    }

    #[test]
    fn pgm_ascii_and_binary_agree() {
        let ascii = b"P2\n# comment\n2 2\n255\n0 100\n200 255\n".to_vec();
        let mut binary = b"P5\n2 2\n255\n".to_vec();
        binary.extend_from_slice(&[0, 100, 200, 255]);
        let (ga, ma) = read_pgm(&ascii).unwrap();
        let (gb, mb) = read_pgm(&binary).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(ma, mb);
        assert_eq!(ga[(1, 1)], 255.0);
    }

    #[test]
    fn f32_measures_work() {
        let m: DiscreteMeasure<f32> = sample_sphere(8, 2, 1.0f32, 9).unwrap();
        for p in m.points() {
            let norm = p.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5);
        }
    }
}
