//! Exact flat and Wasserstein distances by linear programming.
//!
//! Both metrics maximize `integral f d(mu - nu)` over test functions; on
//! finite supports it is enough to optimize the values of `f` at the support
//! nodes, because any node assignment that is 1-Lipschitz across all node
//! pairs (and bounded by 1 in flat mode) extends to an admissible function on
//! all of `R^d` — McShane extension, clipped to `[-1, 1]` when a bound
//! applies. This restriction-to-supports step is what makes the oracle exact
//! rather than approximate.
//!
//! The LP has one variable per node, a box per variable in flat mode, and a
//! Lipschitz range constraint per node pair. Pair constraints are activated
//! lazily: the solver runs on a working subset, scans the full set for
//! violations, and re-solves until the optimum of the relaxation is feasible
//! for every pair, which certifies the exact optimum.

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, MeasurePair};
use crate::scalar::Scalar;
use crate::simplex::{maximize, BoundedLp, RangeRow};

/// Which dual problem to solve: the flat metric bounds test functions by 1
/// and allows unequal masses; Wasserstein drops the bound and requires equal
/// masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DistanceMode {
    Flat,
    Wasserstein,
}

/// Support points within this Euclidean distance are merged into one node
/// (summing weights), so no zero-length pair constraints arise.
const MERGE_TOL: f64 = 1e-12;

/// Dual LP over test-function values on the union of supports.
#[derive(Debug, Clone)]
pub struct DualLp<T = f64> {
    coords: Vec<T>, // node coordinates, row-major n x dim
    dim: usize,
    /// Signed mass `mu_i - nu_i` per node.
    objective: Vec<T>,
    /// `(i, j, ||x_i - x_j||)` for every node pair `i < j`.
    pairs: Vec<(usize, usize, T)>,
    /// `Some(M)`: every `|f_i| <= M` (flat mode); `None` in Wasserstein mode.
    box_bound: Option<T>,
}

/// Optimal objective value and node assignment.
#[derive(Debug, Clone)]
pub struct LpSolution<T = f64> {
    pub value: T,
    pub f_values: Vec<T>,
}

impl<T: Scalar> DualLp<T> {
    pub fn num_nodes(&self) -> usize {
        self.objective.len()
    }

    pub fn node(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn objective(&self) -> &[T] {
        &self.objective
    }

    pub fn pair_constraints(&self) -> &[(usize, usize, T)] {
        &self.pairs
    }

    pub fn box_bound(&self) -> Option<T> {
        self.box_bound
    }
}

fn node_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Assemble the dual LP for a pair of measures.
pub fn build_lp<T: Scalar>(pair: &MeasurePair<T>, mode: DistanceMode) -> Result<DualLp<T>> {
    let (mu, nu) = (&pair.mu, &pair.nu);
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    if mode == DistanceMode::Wasserstein {
        let (m, n) = (mu.total_variation(), nu.total_variation());
        let tol = T::c(1e-9) * T::one().max(m.abs()).max(n.abs());
        if (m - n).abs() > tol {
            return Err(Error::UnbalancedWasserstein {
                mu: m.f64(),
                nu: n.f64(),
            });
        }
    }
    let dim = mu.dim();
    let merge_tol = T::c(MERGE_TOL);
    let mut coords: Vec<T> = Vec::new();
    let mut objective: Vec<T> = Vec::new();
    let add = |point: &[T], weight: T, coords: &mut Vec<T>, objective: &mut Vec<T>| {
        let n = objective.len();
        for i in 0..n {
            if node_distance(&coords[i * dim..(i + 1) * dim], point) <= merge_tol {
                objective[i] += weight;
                return;
            }
        }
        coords.extend_from_slice(point);
        objective.push(weight);
    };
    for i in 0..mu.len() {
        add(mu.point(i), mu.weight(i), &mut coords, &mut objective);
    }
    for j in 0..nu.len() {
        add(nu.point(j), -nu.weight(j), &mut coords, &mut objective);
    }
    let n = objective.len();
    let mut pairs = Vec::with_capacity(n.saturating_sub(1) * n / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = node_distance(
                &coords[i * dim..(i + 1) * dim],
                &coords[j * dim..(j + 1) * dim],
            );
            pairs.push((i, j, d));
        }
    }
    Ok(DualLp {
        coords,
        dim,
        objective,
        pairs,
        box_bound: match mode {
            DistanceMode::Flat => Some(T::one()),
            DistanceMode::Wasserstein => None,
        },
    })
}

/// Solve the dual LP exactly.
///
/// The returned assignment satisfies every pair constraint and box bound
/// within `1e-9`. In Wasserstein mode the optimum is shift-invariant and is
/// reported anchored at the first node (`f_0 = 0`).
pub fn solve_exact<T: Scalar>(lp: &DualLp<T>) -> Result<LpSolution<T>> {
    let n = lp.num_nodes();
    if n == 0 {
        return Ok(LpSolution {
            value: T::zero(),
            f_values: Vec::new(),
        });
    }
    // Variable boxes. Wasserstein has no intrinsic bound, but some optimum
    // lies within max-distance-to-node-0 of zero after shifting, so a box of
    // that radius is harmless and keeps the solver's bounded form.
    let bound = match lp.box_bound {
        Some(m) => m,
        None => {
            let mut d_max = T::zero();
            for i in 1..n {
                d_max = d_max.max(node_distance(lp.node(0), lp.node(i)));
            }
            d_max
        }
    };
    let lower = vec![-bound; n];
    let upper = vec![bound; n];

    // Working set: each node's nearest neighbor, then lazily whatever the
    // relaxation violates.
    let mut active: Vec<bool> = vec![false; lp.pairs.len()];
    if n > 1 {
        let mut nearest: Vec<(usize, T)> = vec![(usize::MAX, T::infinity()); n];
        for (k, &(i, j, d)) in lp.pairs.iter().enumerate() {
            if d < nearest[i].1 {
                nearest[i] = (k, d);
            }
            if d < nearest[j].1 {
                nearest[j] = (k, d);
            }
        }
        for &(k, _) in &nearest {
            if k != usize::MAX {
                active[k] = true;
            }
        }
    }

    let add_tol = T::c(1e-10).max(T::epsilon() * T::c(32.0));
    let max_new_per_round = (4 * n).max(64);
    let mut solution: Option<LpSolution<T>> = None;
    for _round in 0..200 {
        let rows: Vec<RangeRow<T>> = lp
            .pairs
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .map(|(&(i, j, d), _)| RangeRow {
                coeffs: vec![(i, T::one()), (j, -T::one())],
                lo: -d,
                up: d,
            })
            .collect();
        let out = maximize(&BoundedLp {
            objective: lp.objective.clone(),
            lower: lower.clone(),
            upper: upper.clone(),
            rows,
        })?;

        // Scan the full pair set for violations.
        let mut violated: Vec<(usize, T)> = Vec::new();
        for (k, &(i, j, d)) in lp.pairs.iter().enumerate() {
            if active[k] {
                continue;
            }
            let v = (out.x[i] - out.x[j]).abs() - d;
            if v > add_tol {
                violated.push((k, v));
            }
        }
        if violated.is_empty() {
            solution = Some(LpSolution {
                value: out.value,
                f_values: out.x,
            });
            break;
        }
        violated.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        for &(k, _) in violated.iter().take(max_new_per_round) {
            active[k] = true;
        }
    }
    let mut sol = solution
        .ok_or_else(|| Error::NumericalFailure("constraint generation did not converge".into()))?;

    // Certify the assignment against the complete constraint set.
    let feas_tol = T::c(1e-9).max(T::epsilon() * T::c(256.0));
    for &(i, j, d) in &lp.pairs {
        if (sol.f_values[i] - sol.f_values[j]).abs() > d + feas_tol {
            return Err(Error::NumericalFailure(format!(
                "pair ({i}, {j}) violated at optimum"
            )));
        }
    }
    if let Some(m) = lp.box_bound {
        for (i, &f) in sol.f_values.iter().enumerate() {
            if f.abs() > m + feas_tol {
                return Err(Error::NumericalFailure(format!("box violated at node {i}")));
            }
        }
    } else {
        let shift = sol.f_values[0];
        sol.f_values.iter_mut().for_each(|f| *f = *f - shift);
    }
    Ok(sol)
}

/// Exact flat distance between two measures.
pub fn flat_distance_exact<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
) -> Result<T> {
    let pair = MeasurePair::unscaled(mu.clone(), nu.clone())?;
    Ok(solve_exact(&build_lp(&pair, DistanceMode::Flat)?)?.value)
}

/// Exact Wasserstein-1 distance between two measures of equal total mass.
pub fn wasserstein_exact<T: Scalar>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>) -> Result<T> {
    let pair = MeasurePair::unscaled(mu.clone(), nu.clone())?;
    Ok(solve_exact(&build_lp(&pair, DistanceMode::Wasserstein)?)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::DiracConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirac(x: Vec<f64>, w: f64) -> DiscreteMeasure {
        DiscreteMeasure::dirac(x, w).unwrap()
    }

    #[test]
    fn build_merges_identical_nodes() {
        let mu = dirac(vec![0.0, 0.0], 1.0);
        let nu = dirac(vec![0.0, 0.0], 1.0);
        let pair = MeasurePair::unscaled(mu, nu).unwrap();
        let lp = build_lp(&pair, DistanceMode::Flat).unwrap();
        assert_eq!(lp.num_nodes(), 1);
        assert_eq!(lp.objective(), &[0.0]);
        assert_eq!(solve_exact(&lp).unwrap().value, 0.0);
    }

    #[test]
    fn build_two_node_example() {
        let mu = dirac(vec![0.0, 0.0], 1.0);
        let nu = dirac(vec![3.0, 0.0], 1.0);
        let pair = MeasurePair::unscaled(mu, nu).unwrap();
        let lp = build_lp(&pair, DistanceMode::Flat).unwrap();
        assert_eq!(lp.num_nodes(), 2);
        assert_eq!(lp.pair_constraints().len(), 1);
        assert!((lp.pair_constraints()[0].2 - 3.0).abs() < 1e-12);
        assert_eq!(lp.box_bound(), Some(1.0));
        let sol = solve_exact(&lp).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-9);
        assert!((sol.f_values[0] - 1.0).abs() < 1e-9);
        assert!((sol.f_values[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_diracs_saturate_at_two() {
        for r in [0.25, 1.0, 2.0, 5.0, 40.0] {
            let mu = dirac(vec![0.0], 1.0);
            let nu = dirac(vec![r], 1.0);
            let flat = flat_distance_exact(&mu, &nu).unwrap();
            assert!((flat - r.min(2.0)).abs() < 1e-9, "r = {r}");
            let w1 = wasserstein_exact(&mu, &nu).unwrap();
            assert!((w1 - r).abs() < 1e-9, "r = {r}");
            // Optimal gap between the nodes is min(2, r); the individual
            // values are unique only once the box saturates.
            let pair = MeasurePair::unscaled(mu, nu).unwrap();
            let sol = solve_exact(&build_lp(&pair, DistanceMode::Flat).unwrap()).unwrap();
            assert!((sol.f_values[0] - sol.f_values[1] - r.min(2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn unbalanced_two_diracs() {
        // mu = 2 delta_0, nu = delta_x with |x| = 1: distance 2.
        let mu = dirac(vec![0.0, 0.0], 2.0);
        let nu = dirac(vec![1.0, 0.0], 1.0);
        assert!((flat_distance_exact(&mu, &nu).unwrap() - 2.0).abs() < 1e-9);
        assert!(matches!(
            wasserstein_exact(&mu, &nu),
            Err(Error::UnbalancedWasserstein { .. })
        ));
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let m = DiscreteMeasure::new(
            vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]],
            vec![1.0, 2.0, 0.5],
            2,
        )
        .unwrap();
        assert_eq!(flat_distance_exact(&m, &m).unwrap(), 0.0);
        assert_eq!(wasserstein_exact(&m, &m).unwrap(), 0.0);
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, dim: usize, span: f64) -> DiscreteMeasure {
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-span..span)).collect())
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..2.0)).collect();
        DiscreteMeasure::new(points, weights, dim).unwrap()
    }

    #[test]
    fn symmetry_and_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let mu = random_measure(&mut rng, 6, 2, 3.0);
            let nu = random_measure(&mut rng, 5, 2, 3.0);
            let ab = flat_distance_exact(&mu, &nu).unwrap();
            let ba = flat_distance_exact(&nu, &mu).unwrap();
            assert!((ab - ba).abs() < 1e-9);
            let s = 2.75;
            let scaled = flat_distance_exact(&mu.scaled(s), &nu.scaled(s)).unwrap();
            assert!((scaled - s * ab).abs() < 1e-9);
        }
    }

    #[test]
    fn triangle_inequality_on_small_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..6 {
            let a = random_measure(&mut rng, 5, 2, 2.5);
            let b = random_measure(&mut rng, 6, 2, 2.5);
            let c = random_measure(&mut rng, 4, 2, 2.5);
            let ab = flat_distance_exact(&a, &b).unwrap();
            let bc = flat_distance_exact(&b, &c).unwrap();
            let ac = flat_distance_exact(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-8);
        }
    }

    #[test]
    fn flat_bounded_by_tv_and_wasserstein() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..8 {
            let mu = random_measure(&mut rng, 6, 3, 4.0);
            let nu = random_measure(&mut rng, 6, 3, 4.0);
            let flat = flat_distance_exact(&mu, &nu).unwrap();
            let tv_mu = mu.total_variation();
            let tv_nu = nu.total_variation();
            assert!(flat <= tv_mu + tv_nu + 1e-9);
            assert!(flat <= 2.0 * tv_mu.max(tv_nu) + 1e-9);
            // Equalize masses to compare with W1.
            let nu_eq = nu.scaled(tv_mu / tv_nu);
            let flat_eq = flat_distance_exact(&mu, &nu_eq).unwrap();
            let w1 = wasserstein_exact(&mu, &nu_eq).unwrap();
            assert!(flat_eq <= w1 + 1e-9);
        }
    }

    #[test]
    fn matches_analytic_on_dirac_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..=8);
            let dim = rng.gen_range(1..=3);
            let c: f64 = rng.gen_range(0.2..8.0);
            let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|k| center[k] + rng.gen_range(-3.0..3.0))
                        .collect()
                })
                .collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..2.5)).collect();
            let nu = DiscreteMeasure::new(points, weights.clone(), dim).unwrap();
            let mu = dirac(center.clone(), c);
            let cfg = DiracConfig::new(c, nu.distances_from(&center), weights).unwrap();
            let lp_val = flat_distance_exact(&mu, &nu).unwrap();
            assert!(
                (lp_val - cfg.flat_distance()).abs() < 1e-7,
                "lp {lp_val} vs analytic {}",
                cfg.flat_distance()
            );
        }
    }

    #[test]
    fn f32_lp_solves() {
        let mu = DiscreteMeasure::<f32>::dirac(vec![0.0f32], 1.0).unwrap();
        let nu = DiscreteMeasure::<f32>::dirac(vec![5.0f32], 1.0).unwrap();
        let flat = flat_distance_exact(&mu, &nu).unwrap();
        assert!((flat - 2.0).abs() < 1e-4);
    }

    #[test]
    fn normalized_pair_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mu = random_measure(&mut rng, 5, 2, 2.0);
            let nu = random_measure(&mut rng, 7, 2, 2.0);
            let pair = crate::measures::normalize_pair(&mu, &nu).unwrap();
            let scaled = flat_distance_exact(&pair.mu, &pair.nu).unwrap();
            let raw = flat_distance_exact(&mu, &nu).unwrap();
            assert!((scaled - raw * pair.scale).abs() < 1e-8);
        }
    }
}
