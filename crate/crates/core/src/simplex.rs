//! Dense bounded-variable primal simplex.
//!
//! Solves `maximize c'x` subject to range rows `lo_r <= a_r'x <= up_r` and
//! finite variable boxes `l_j <= x_j <= u_j`. Each row gets a slack
//! (`a_r'x - s_r = 0`, `s_r` boxed by the row range), so the all-slack basis
//! is available whenever the all-lower-bound point satisfies every row — the
//! callers in this crate construct exactly such problems, so no phase 1 is
//! needed.
//!
//! Pivoting is Dantzig pricing with lowest-index tie-breaks; after a run of
//! degenerate pivots it falls back to Bland's rule, which makes the solver
//! both cycle-free and deterministic. The basis inverse is kept explicitly
//! and refactorized periodically.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `lo <= sum(coeff_k * x_{var_k}) <= up` with a sparse coefficient list.
#[derive(Debug, Clone)]
pub struct RangeRow<T> {
    pub coeffs: Vec<(usize, T)>,
    pub lo: T,
    pub up: T,
}

/// A box-constrained LP over range rows. All bounds must be finite.
#[derive(Debug, Clone)]
pub struct BoundedLp<T> {
    pub objective: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub rows: Vec<RangeRow<T>>,
}

/// Optimal value and the maximizing point.
#[derive(Debug, Clone)]
pub struct LpOutcome<T> {
    pub value: T,
    pub x: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize), // row slot
    AtLower,
    AtUpper,
}

const REFACTOR_EVERY: usize = 128;
const DEGENERATE_RUN_FOR_BLAND: usize = 40;

struct Solver<'a, T: Scalar> {
    lp: &'a BoundedLp<T>,
    n: usize, // structural vars
    m: usize, // rows == slacks
    // Per-variable data over structural then slack indices.
    lower: Vec<T>,
    upper: Vec<T>,
    cost: Vec<T>,
    cols: Vec<Vec<(usize, T)>>,
    state: Vec<VarState>,
    x: Vec<T>,
    basic: Vec<usize>, // row slot -> variable
    binv: Vec<T>,      // m x m, row-major
    rc_tol: T,
    pivot_tol: T,
}

impl<'a, T: Scalar> Solver<'a, T> {
    fn new(lp: &'a BoundedLp<T>) -> Result<Self> {
        let n = lp.objective.len();
        let m = lp.rows.len();
        if lp.lower.len() != n || lp.upper.len() != n {
            return Err(Error::ShapeMismatch("bounds vs objective".into()));
        }
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        let mut cost = lp.objective.clone();
        let mut cols: Vec<Vec<(usize, T)>> = vec![Vec::new(); n + m];
        for (r, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(Error::ShapeMismatch(format!("row {r} references var {j}")));
                }
                cols[j].push((r, a));
            }
            cols[n + r].push((r, -T::one()));
            lower.push(row.lo);
            upper.push(row.up);
            cost.push(T::zero());
        }
        for j in 0..n + m {
            if !(lower[j] <= upper[j]) {
                return Err(Error::NumericalFailure(format!(
                    "empty box on var {j}: [{}, {}]",
                    lower[j], upper[j]
                )));
            }
        }

        // Start: structural at lower bound, slacks basic.
        let mut state = vec![VarState::AtLower; n + m];
        let mut x = lower.clone();
        let mut basic = Vec::with_capacity(m);
        for r in 0..m {
            state[n + r] = VarState::Basic(r);
            basic.push(n + r);
        }
        // Slack values from the start point; must be within range.
        for (r, row) in lp.rows.iter().enumerate() {
            let mut v = T::zero();
            for &(j, a) in &row.coeffs {
                v += a * x[j];
            }
            if v < row.lo - T::c(1e-9) || v > row.up + T::c(1e-9) {
                return Err(Error::NumericalFailure(format!(
                    "all-lower start violates row {r}"
                )));
            }
            x[n + r] = v;
        }
        // B = -I for the all-slack basis.
        let mut binv = vec![T::zero(); m * m];
        for r in 0..m {
            binv[r * m + r] = -T::one();
        }
        Ok(Self {
            lp,
            n,
            m,
            lower,
            upper,
            cost,
            cols,
            state,
            x,
            basic,
            binv,
            // Scale with the type's precision so f32 problems stay solvable.
            rc_tol: T::c(1e-9).max(T::epsilon() * T::c(64.0)),
            pivot_tol: T::c(1e-10).max(T::epsilon() * T::c(8.0)),
        })
    }

    /// y = (B^-1)' c_B
    fn duals(&self) -> Vec<T> {
        let mut y = vec![T::zero(); self.m];
        for (k, &v) in self.basic.iter().enumerate() {
            let cb = self.cost[v];
            if cb != T::zero() {
                let row = &self.binv[k * self.m..(k + 1) * self.m];
                for (r, yr) in y.iter_mut().enumerate() {
                    *yr += cb * row[r];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[T]) -> T {
        let mut rc = self.cost[j];
        for &(r, a) in &self.cols[j] {
            rc -= y[r] * a;
        }
        rc
    }

    /// w = B^-1 A_q
    fn ftran(&self, q: usize) -> Vec<T> {
        let mut w = vec![T::zero(); self.m];
        for &(r, a) in &self.cols[q] {
            for k in 0..self.m {
                w[k] += self.binv[k * self.m + r] * a;
            }
        }
        w
    }

    fn refactorize(&mut self) -> Result<()> {
        let m = self.m;
        // Dense basis matrix from the basic columns.
        let mut b = vec![T::zero(); m * m];
        for (k, &v) in self.basic.iter().enumerate() {
            for &(r, a) in &self.cols[v] {
                b[r * m + k] = a;
            }
        }
        // Gauss-Jordan inversion with partial pivoting.
        let mut inv = vec![T::zero(); m * m];
        for k in 0..m {
            inv[k * m + k] = T::one();
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = b[col * m + col].abs();
            for r in col + 1..m {
                let v = b[r * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= T::c(1e-13) {
                return Err(Error::NumericalFailure("singular basis".into()));
            }
            if piv != col {
                for j in 0..m {
                    b.swap(col * m + j, piv * m + j);
                    inv.swap(col * m + j, piv * m + j);
                }
            }
            let d = b[col * m + col];
            for j in 0..m {
                b[col * m + j] /= d;
                inv[col * m + j] /= d;
            }
            for r in 0..m {
                if r != col {
                    let f = b[r * m + col];
                    if f != T::zero() {
                        for j in 0..m {
                            let delta_b = f * b[col * m + j];
                            b[r * m + j] -= delta_b;
                            let delta_i = f * inv[col * m + j];
                            inv[r * m + j] -= delta_i;
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.recompute_basic_values();
        Ok(())
    }

    /// x_B = -B^-1 (N x_N); the equality right-hand side is zero by
    /// construction.
    fn recompute_basic_values(&mut self) {
        let mut rhs = vec![T::zero(); self.m];
        for j in 0..self.n + self.m {
            match self.state[j] {
                VarState::Basic(_) => {}
                _ => {
                    let xj = self.x[j];
                    if xj != T::zero() {
                        for &(r, a) in &self.cols[j] {
                            rhs[r] += a * xj;
                        }
                    }
                }
            }
        }
        for k in 0..self.m {
            let mut v = T::zero();
            let row = &self.binv[k * self.m..(k + 1) * self.m];
            for r in 0..self.m {
                v += row[r] * rhs[r];
            }
            self.x[self.basic[k]] = -v;
        }
    }

    fn solve(&mut self) -> Result<()> {
        let max_iters = 2000 + 400 * (self.n + self.m);
        let mut degenerate_run = 0usize;
        let mut pivots_since_refactor = 0usize;
        for _ in 0..max_iters {
            let y = self.duals();
            let bland = degenerate_run >= DEGENERATE_RUN_FOR_BLAND;
            let mut entering: Option<(usize, T, bool)> = None; // (var, |rc|, from_lower)
            for j in 0..self.n + self.m {
                let (eligible, from_lower, score) = match self.state[j] {
                    VarState::Basic(_) => continue,
                    VarState::AtLower => {
                        let rc = self.reduced_cost(j, &y);
                        (rc > self.rc_tol, true, rc)
                    }
                    VarState::AtUpper => {
                        let rc = self.reduced_cost(j, &y);
                        (rc < -self.rc_tol, false, -rc)
                    }
                };
                if !eligible || self.upper[j] <= self.lower[j] {
                    continue;
                }
                if bland {
                    entering = Some((j, score, from_lower));
                    break;
                }
                if entering
                    .as_ref()
                    .map(|&(_, s, _)| score > s)
                    .unwrap_or(true)
                {
                    entering = Some((j, score, from_lower));
                }
            }
            let Some((q, _, from_lower)) = entering else {
                self.recompute_basic_values();
                return Ok(());
            };

            let w = self.ftran(q);
            let dir = if from_lower { T::one() } else { -T::one() };
            // theta bounded by the entering variable's own opposite bound.
            let mut theta = self.upper[q] - self.lower[q];
            let mut leaving: Option<(usize, bool)> = None; // (row slot, hits_upper)
            for k in 0..self.m {
                let delta = -dir * w[k]; // basic value change per unit theta
                let v = self.basic[k];
                if delta > self.pivot_tol {
                    let room = (self.upper[v] - self.x[v]).max(T::zero());
                    let t = room / delta;
                    if t < theta - self.pivot_tol
                        || (t < theta + self.pivot_tol
                            && leaving.map(|(kk, _)| v < self.basic[kk]).unwrap_or(false))
                    {
                        theta = t;
                        leaving = Some((k, true));
                    }
                } else if delta < -self.pivot_tol {
                    let room = (self.lower[v] - self.x[v]).min(T::zero());
                    let t = room / delta;
                    if t < theta - self.pivot_tol
                        || (t < theta + self.pivot_tol
                            && leaving.map(|(kk, _)| v < self.basic[kk]).unwrap_or(false))
                    {
                        theta = t;
                        leaving = Some((k, false));
                    }
                }
            }
            if theta < T::zero() {
                theta = T::zero();
            }
            degenerate_run = if theta <= self.pivot_tol {
                degenerate_run + 1
            } else {
                0
            };

            // Move the entering variable and the basic values.
            let x_q_new = if from_lower {
                self.lower[q] + theta
            } else {
                self.upper[q] - theta
            };
            for k in 0..self.m {
                let delta = -dir * w[k];
                let v = self.basic[k];
                self.x[v] += delta * theta;
            }

            match leaving {
                None => {
                    // Bound flip: no basis change.
                    self.x[q] = if from_lower {
                        self.upper[q]
                    } else {
                        self.lower[q]
                    };
                    self.state[q] = if from_lower {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                }
                Some((k, hits_upper)) => {
                    let leave = self.basic[k];
                    let pivot = w[k];
                    if pivot.abs() <= self.pivot_tol {
                        return Err(Error::NumericalFailure("zero pivot".into()));
                    }
                    self.x[leave] = if hits_upper {
                        self.upper[leave]
                    } else {
                        self.lower[leave]
                    };
                    self.state[leave] = if hits_upper {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[q] = x_q_new;
                    self.state[q] = VarState::Basic(k);
                    self.basic[k] = q;
                    // Elementary update of B^-1: scale pivot row, cancel others.
                    let m = self.m;
                    let inv_pivot = T::one() / pivot;
                    for j in 0..m {
                        self.binv[k * m + j] *= inv_pivot;
                    }
                    for r in 0..m {
                        if r != k {
                            let f = w[r];
                            if f != T::zero() {
                                for j in 0..m {
                                    let delta = f * self.binv[k * m + j];
                                    self.binv[r * m + j] -= delta;
                                }
                            }
                        }
                    }
                    pivots_since_refactor += 1;
                    if pivots_since_refactor >= REFACTOR_EVERY {
                        self.refactorize()?;
                        pivots_since_refactor = 0;
                    }
                }
            }
        }
        Err(Error::NumericalFailure(
            "simplex iteration limit exceeded".into(),
        ))
    }

    fn outcome(&self) -> LpOutcome<T> {
        let x: Vec<T> = self.x[..self.n].to_vec();
        let value = x
            .iter()
            .zip(&self.lp.objective)
            .fold(T::zero(), |acc, (&xi, &ci)| acc + xi * ci);
        LpOutcome { value, x }
    }
}

/// Maximize the LP. The all-lower-bound point must satisfy every row range
/// (true for the distance LPs this crate builds); otherwise this fails with
/// [`Error::NumericalFailure`] rather than running a phase-1 search.
pub fn maximize<T: Scalar>(lp: &BoundedLp<T>) -> Result<LpOutcome<T>> {
    if lp.rows.is_empty() {
        // Pure box problem.
        let x: Vec<T> = lp
            .objective
            .iter()
            .zip(lp.lower.iter().zip(&lp.upper))
            .map(|(&c, (&lo, &up))| if c > T::zero() { up } else { lo })
            .collect();
        let value = x
            .iter()
            .zip(&lp.objective)
            .fold(T::zero(), |acc, (&xi, &ci)| acc + xi * ci);
        return Ok(LpOutcome { value, x });
    }
    let mut solver = Solver::new(lp)?;
    solver.solve()?;
    Ok(solver.outcome())
}
