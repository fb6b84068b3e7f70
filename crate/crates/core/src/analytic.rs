//! Closed-form flat distances for Dirac configurations.
//!
//! The configuration is a Dirac of mass `c` at some center against a finite
//! weighted sum of Diracs, described only by the sorted center distances
//! `d_1 <= ... <= d_n` and weights `b_i > 0`. For this family the flat
//! distance has an exact formula: transport is worthwhile only up to distance
//! 2 (beyond that, deleting and re-creating mass is cheaper at cost 1 per
//! unit on each side), and among the reachable points the cheapest prefix is
//! transported first. The same split yields the optimal transport/creation
//! decomposition, which doubles as an independent check of the value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Distance beyond which moving a unit of mass costs more than deleting and
/// re-creating it.
pub fn transport_threshold<T: Scalar>() -> T {
    T::c(2.0)
}

/// Dirac of mass `c` at a center versus points at sorted `distances` with
/// positive `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiracConfig<T = f64> {
    c: T,
    distances: Vec<T>,
    weights: Vec<T>,
}

/// Optimal transport/creation split for a [`DiracConfig`].
///
/// `alpha_star` is the total transported mass, `beta_star[i]` the share taken
/// from point `i` (full weights up to `i_star`, a remainder at `i_star + 1`,
/// zero beyond), and `value` the attained cost, equal to the flat distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Decomposition<T = f64> {
    pub alpha_star: T,
    pub beta_star: Vec<T>,
    pub i_star: usize,
    pub value: T,
}

impl<T: Scalar> DiracConfig<T> {
    /// Build a configuration; distance/weight pairs are sorted by distance
    /// (stable, so equal distances keep their given order).
    pub fn new(c: T, distances: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if distances.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} distances vs {} weights",
                distances.len(),
                weights.len()
            )));
        }
        if !(c > T::zero()) {
            return Err(Error::NonPositiveWeight);
        }
        for &b in &weights {
            if !(b > T::zero()) {
                return Err(Error::NonPositiveWeight);
            }
        }
        for &d in &distances {
            if !(d >= T::zero()) {
                return Err(Error::InvalidRadius(format!("negative distance {d}")));
            }
        }
        let mut pairs: Vec<(T, T)> = distances.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
        let (distances, weights) = pairs.into_iter().unzip();
        Ok(Self {
            c,
            distances,
            weights,
        })
    }

    /// Unit weights at the given distances.
    pub fn unit(c: T, distances: Vec<T>) -> Result<Self> {
        let n = distances.len();
        Self::new(c, distances, vec![T::one(); n])
    }

    pub fn center_mass(&self) -> T {
        self.c
    }

    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Largest `l` with `d_l <= 2` (0 if every point is farther). Distances
    /// exactly at the threshold are included; transport and deletion cost the
    /// same there, so the value is unaffected.
    pub fn split_index(&self) -> usize {
        let thr = transport_threshold::<T>();
        self.distances.iter().take_while(|&&d| d <= thr).count()
    }

    /// Largest prefix 0..=l whose weight fits under `c`, with a relative
    /// tolerance absorbing float accumulation in the prefix sums.
    fn prefix_index(&self, l: usize) -> usize {
        let tol = T::c(1e-12);
        let mut sum = T::zero();
        let mut idx = 0;
        for i in 0..l {
            sum += self.weights[i];
            if sum <= self.c * (T::one() + tol) {
                idx = i + 1;
            } else {
                break;
            }
        }
        idx
    }

    /// Exact flat distance between `c * delta_center` and the weighted points.
    pub fn flat_distance(&self) -> T {
        let l = self.split_index();
        let i_star = self.prefix_index(l);
        let transported: T = self.weights[..i_star]
            .iter()
            .zip(&self.distances[..i_star])
            .fold(T::zero(), |acc, (&b, &d)| acc + b * d);
        let prefix_mass: T = self.weights[..i_star]
            .iter()
            .fold(T::zero(), |acc, &b| acc + b);
        let near_mass: T = self.weights[..l].iter().fold(T::zero(), |acc, &b| acc + b);
        let far_mass: T = self.weights[l..].iter().fold(T::zero(), |acc, &b| acc + b);
        let remainder = self.c.min(near_mass) - prefix_mass;
        let mut total = transported + (self.c - near_mass).abs() + far_mass;
        if remainder > T::zero() && i_star < l {
            total += remainder * self.distances[i_star];
        }
        total
    }

    /// The optimal transport/creation split attaining [`flat_distance`].
    pub fn optimal_decomposition(&self) -> Decomposition<T> {
        let l = self.split_index();
        let i_star = self.prefix_index(l);
        let near_mass: T = self.weights[..l].iter().fold(T::zero(), |acc, &b| acc + b);
        let alpha_star = self.c.min(near_mass);
        let prefix_mass: T = self.weights[..i_star]
            .iter()
            .fold(T::zero(), |acc, &b| acc + b);
        let mut beta_star = vec![T::zero(); self.len()];
        beta_star[..i_star].copy_from_slice(&self.weights[..i_star]);
        let remainder = alpha_star - prefix_mass;
        if remainder > T::zero() && i_star < self.len() {
            beta_star[i_star] = remainder;
        }
        let value = self
            .decomposition_cost(alpha_star, &beta_star)
            .expect("optimal split is feasible");
        Decomposition {
            alpha_star,
            beta_star,
            i_star,
            value,
        }
    }

    /// Cost `c + sum(b) - 2*alpha + sum(beta_i * d_i)` of transporting `beta`
    /// and deleting/creating the rest. Upper-bounds the flat distance for any
    /// feasible split, with equality at the optimum.
    pub fn decomposition_cost(&self, alpha: T, beta: &[T]) -> Result<T> {
        if beta.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} beta entries vs {} points",
                beta.len(),
                self.len()
            )));
        }
        let tol = T::c(1e-9);
        let mut sum = T::zero();
        for (i, (&bi, &wi)) in beta.iter().zip(&self.weights).enumerate() {
            if bi < -tol || bi > wi + tol {
                return Err(Error::InfeasibleDecomposition(format!(
                    "beta[{i}] = {bi} outside [0, {wi}]"
                )));
            }
            sum += bi;
        }
        if (sum - alpha).abs() > tol {
            return Err(Error::InfeasibleDecomposition(format!(
                "sum(beta) = {sum} != alpha = {alpha}"
            )));
        }
        let total_weight: T = self.weights.iter().fold(T::zero(), |acc, &b| acc + b);
        if alpha > self.c.min(total_weight) + tol {
            return Err(Error::InfeasibleDecomposition(format!(
                "alpha = {alpha} exceeds min(c, total weight)"
            )));
        }
        let moved: T = beta
            .iter()
            .zip(&self.distances)
            .fold(T::zero(), |acc, (&b, &d)| acc + b * d);
        Ok(self.c + total_weight - T::c(2.0) * alpha + moved)
    }
}

/// Flat distance for unit weights: `|c - l| + (n - l) + sum of the floor(λ)
/// nearest distances + fractional next term`, with `λ = min(c, l)`. Input
/// distances are sorted internally.
pub fn flat_distance_unit<T: Scalar>(c: T, distances: &[T]) -> T {
    let mut d = distances.to_vec();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let thr = transport_threshold::<T>();
    let l = d.iter().take_while(|&&x| x <= thr).count();
    let n = d.len();
    let lambda = c.min(T::c(l as f64));
    let whole = lambda.floor();
    let frac = lambda - whole;
    let k = whole.f64() as usize;
    let mut total = (c - T::c(l as f64)).abs() + T::c((n - l) as f64);
    total = total + d[..k].iter().fold(T::zero(), |acc, &x| acc + x);
    if frac > T::zero() && k < n {
        total += frac * d[k];
    }
    total
}

/// Ground truth for the ball-split experiment: the flat distance between
/// `(m/min(n,m)) * delta_0` and `1/min(n,m)` times `n` unit Diracs of which
/// the `inner_count` nearest lie within transport range. `distances` must
/// hold all `n` center distances.
pub fn experiment2_ground_truth<T: Scalar>(
    n: usize,
    m: T,
    inner_count: usize,
    distances: &[T],
) -> Result<T> {
    if distances.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} distances vs n = {n}",
            distances.len()
        )));
    }
    let mut d = distances.to_vec();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let lf = T::c(inner_count as f64);
    let lambda = lf.min(m);
    let whole = lambda.floor();
    let frac = lambda - whole;
    let k = whole.f64() as usize;
    let mut total = (m - lf).abs() + T::c(n as f64) - lf;
    total = total + d[..k].iter().fold(T::zero(), |acc, &x| acc + x);
    if frac > T::zero() && k < n {
        total += frac * d[k];
    }
    Ok(total / T::c(n as f64).min(m))
}
