//! Training loop for the neural flat-distance estimator.
//!
//! The network maximizes the dual objective over the two supports, so the
//! loss is `L = L_m + lambda * L_b`: the metric loss `L_m` is the negated
//! objective (after training, `-L_m` estimates the distance), and the bound
//! loss `L_b` is a mass-normalized quadratic hinge penalizing `|f| > M`.
//! Only `L_b` acts as an error measure and should vanish; `L_m` persists as
//! the estimate.
//!
//! The penalty weight follows an adaptive schedule: constant `lambda_init`
//! until 20% of training, then a linear ramp to `-2 * L_m` (twice the current
//! distance estimate) reached at 50%, then a ramp to that value rescaled by
//! `L_b / b_target` reached at 80%, constant afterwards. The point of the
//! adaptation is comparability: independently trained networks end up
//! honoring the bound to the same extent, so their outputs can be compared.

use crate::error::{Error, Result};
use crate::lp::DistanceMode;
use crate::measures::MeasurePair;
use crate::net::{AdamState, LipschitzNet};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// One epoch's losses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LossBreakdown<T = f64> {
    pub metric_loss: T,
    pub bound_loss: T,
    pub lambda: T,
    pub total: T,
}

/// Adaptive penalty schedule state. Checkpoint values are captured lazily at
/// the first evaluation past each switch point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LambdaSchedule<T = f64> {
    pub lambda_init: T,
    pub s1: T,
    pub s2: T,
    pub s3: T,
    pub b_target: T,
    lambda_s1: Option<T>,
    lambda_s2: Option<T>,
}

impl<T: Scalar> Default for LambdaSchedule<T> {
    fn default() -> Self {
        Self {
            lambda_init: T::c(10.0),
            s1: T::c(0.2),
            s2: T::c(0.5),
            s3: T::c(0.8),
            b_target: T::c(0.02),
            lambda_s1: None,
            lambda_s2: None,
        }
    }
}

impl<T: Scalar> LambdaSchedule<T> {
    pub fn lambda_s1(&self) -> Option<T> {
        self.lambda_s1
    }

    pub fn lambda_s2(&self) -> Option<T> {
        self.lambda_s2
    }

    /// Penalty weight at training fraction `t` in `[0, 1]`, updating the
    /// checkpoints from the current losses when `t` first crosses `s1`/`s2`:
    /// `lambda_s1 = -2 * L_m` (twice the current distance estimate) and
    /// `lambda_s2 = lambda_s1 * max(L_b, b_target) / b_target` (proportional
    /// to the bound violation, floored so it never shrinks on an
    /// unequilibrated sample).
    ///
    /// Piecewise linear and continuous: `lambda_init` before `s1`, ramping to
    /// `lambda_s1` on `[s1, s2)`, to `lambda_s2` on `[s2, s3)`, constant
    /// after `s3`; never below `1e-3`.
    pub fn lambda_at(&mut self, t: T, current_lm: T, current_lb: T) -> T {
        if t >= self.s1 && self.lambda_s1.is_none() {
            let candidate = -T::c(2.0) * current_lm;
            // Early in training -2*L_m can be nonpositive; fall back to the
            // initial value so the penalty never vanishes.
            self.lambda_s1 = Some(if candidate > T::zero() {
                candidate
            } else {
                self.lambda_init
            });
        }
        if t >= self.s2 && self.lambda_s2.is_none() {
            let ls1 = self.lambda_s1.unwrap_or(self.lambda_init);
            // The bound loss is floored at its target here: sampled below
            // target it usually just has not equilibrated yet (short runs
            // suppress it until exactly this point), and scaling lambda down
            // proportionally lets the bound collapse entirely.
            self.lambda_s2 = Some(ls1 * (current_lb.max(self.b_target)) / self.b_target);
        }
        let value = if t < self.s1 {
            self.lambda_init
        } else if t < self.s2 {
            let ls1 = self.lambda_s1.unwrap_or(self.lambda_init);
            self.lambda_init + (t - self.s1) / (self.s2 - self.s1) * (ls1 - self.lambda_init)
        } else if t < self.s3 {
            let ls1 = self.lambda_s1.unwrap_or(self.lambda_init);
            let ls2 = self.lambda_s2.unwrap_or(ls1);
            ls1 + (t - self.s2) / (self.s3 - self.s2) * (ls2 - ls1)
        } else {
            let ls1 = self.lambda_s1.unwrap_or(self.lambda_init);
            self.lambda_s2.unwrap_or(ls1)
        };
        value.max(T::c(1e-3))
    }
}

/// Penalty weighting: the adaptive schedule, or a fixed value (used for the
/// adaptive-versus-static comparison).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Penalty<T = f64> {
    Adaptive(LambdaSchedule<T>),
    Static(T),
}

impl<T: Scalar> Default for Penalty<T> {
    fn default() -> Self {
        Penalty::Adaptive(LambdaSchedule::default())
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T = f64> {
    pub epochs: usize,
    pub lr: T,
    pub lr_decay: T,
    pub lr_milestones: Vec<usize>,
    pub beta1: T,
    pub beta2: T,
    pub weight_decay: T,
    pub tail_window: usize,
    pub mode: DistanceMode,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub group_size: usize,
    pub power_iters: usize,
    pub penalty: Penalty<T>,
    pub bound: T,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            lr: T::c(0.01),
            lr_decay: T::c(0.9),
            lr_milestones: vec![32, 64],
            beta1: T::c(0.9),
            beta2: T::c(0.999),
            weight_decay: T::zero(),
            tail_window: 50,
            mode: DistanceMode::Flat,
            seed: 0,
            hidden: vec![64, 64],
            group_size: 2,
            power_iters: 1,
            penalty: Penalty::default(),
            bound: T::one(),
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: DistanceMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Loss history plus the schedule checkpoints of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainingState<T = f64> {
    pub history: Vec<LossBreakdown<T>>,
    pub lambda_s1: Option<T>,
    pub lambda_s2: Option<T>,
    pub final_lr: T,
}

/// Trained network and its state.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub net: LipschitzNet<T>,
    pub state: TrainingState<T>,
}

fn metric_loss_from_values<T: Scalar>(f_mu: &[T], w_mu: &[T], f_nu: &[T], w_nu: &[T]) -> T {
    let mu_term = f_mu
        .iter()
        .zip(w_mu)
        .fold(T::zero(), |acc, (&f, &w)| acc + w * f);
    let nu_term = f_nu
        .iter()
        .zip(w_nu)
        .fold(T::zero(), |acc, (&f, &w)| acc + w * f);
    nu_term - mu_term
}

fn bound_loss_from_values<T: Scalar>(
    f_mu: &[T],
    w_mu: &[T],
    tv_mu: T,
    f_nu: &[T],
    w_nu: &[T],
    tv_nu: T,
    bound: T,
) -> T {
    let hinge_sq = |f: &[T], w: &[T]| {
        f.iter().zip(w).fold(T::zero(), |acc, (&fi, &wi)| {
            let h = (fi.abs() - bound).max(T::zero());
            acc + wi * h * h
        })
    };
    hinge_sq(f_mu, w_mu) / tv_mu + hinge_sq(f_nu, w_nu) / tv_nu
}

/// Metric loss `L_m = -sum w_mu f(x_mu) + sum w_nu f(x_nu)` of the net's
/// current (frozen) function on the pair's supports.
pub fn metric_loss<T: Scalar>(net: &LipschitzNet<T>, pair: &MeasurePair<T>) -> Result<T> {
    let f_mu = net.eval_batch(pair.mu.coords_matrix().view())?;
    let f_nu = net.eval_batch(pair.nu.coords_matrix().view())?;
    Ok(metric_loss_from_values(
        f_mu.as_slice().unwrap(),
        pair.mu.weights(),
        f_nu.as_slice().unwrap(),
        pair.nu.weights(),
    ))
}

/// Bound loss `L_b`: measure-weighted mean-square hinge of `|f| - M` over
/// each support, normalized by the respective total mass (so duplicating
/// every support point leaves it unchanged).
pub fn bound_loss<T: Scalar>(net: &LipschitzNet<T>, pair: &MeasurePair<T>, bound: T) -> Result<T> {
    let (tv_mu, tv_nu) = (pair.mu.total_variation(), pair.nu.total_variation());
    if tv_mu <= T::zero() || tv_nu <= T::zero() {
        return Err(Error::ZeroMass);
    }
    let f_mu = net.eval_batch(pair.mu.coords_matrix().view())?;
    let f_nu = net.eval_batch(pair.nu.coords_matrix().view())?;
    Ok(bound_loss_from_values(
        f_mu.as_slice().unwrap(),
        pair.mu.weights(),
        tv_mu,
        f_nu.as_slice().unwrap(),
        pair.nu.weights(),
        tv_nu,
        bound,
    ))
}

/// Full-batch training of a fresh network on the pair.
///
/// Deterministic given the seed. In Wasserstein mode the penalty is disabled
/// (`lambda = 0`); the bound loss is still recorded for the log. The returned
/// network has settled normalization, so it evaluates as a fixed 1-Lipschitz
/// function.
pub fn train<T: Scalar>(pair: &MeasurePair<T>, cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    if pair.mu.is_empty() || pair.nu.is_empty() {
        return Err(Error::ZeroMass);
    }
    let (tv_mu, tv_nu) = (pair.mu.total_variation(), pair.nu.total_variation());
    if tv_mu <= T::zero() || tv_nu <= T::zero() {
        return Err(Error::ZeroMass);
    }
    if cfg.epochs < cfg.tail_window {
        return Err(Error::ShortHistory {
            len: cfg.epochs,
            window: cfg.tail_window,
        });
    }
    let dim = pair.mu.dim();
    let n_mu = pair.mu.len();
    let n_nu = pair.nu.len();
    let batch = n_mu + n_nu;
    let mut x: Array2<T> = Array2::zeros((dim, batch));
    for i in 0..n_mu {
        for (k, &c) in pair.mu.point(i).iter().enumerate() {
            x[(k, i)] = c;
        }
    }
    for j in 0..n_nu {
        for (k, &c) in pair.nu.point(j).iter().enumerate() {
            x[(k, n_mu + j)] = c;
        }
    }
    let w_mu = pair.mu.weights();
    let w_nu = pair.nu.weights();

    let mut net = LipschitzNet::new(dim, &cfg.hidden, cfg.group_size, cfg.seed)?;
    let mut adam = AdamState::new(&net, cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut penalty = cfg.penalty.clone();
    let mut lr = cfg.lr;
    let mut history: Vec<LossBreakdown<T>> = Vec::with_capacity(cfg.epochs);
    let epochs_t = T::c(cfg.epochs as f64);
    let two = T::c(2.0);
    // The schedule checkpoints read smoothed losses: a single epoch's value
    // is noisy under the loss antagonism.
    let smooth_window = (cfg.epochs / 100).max(1);

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.lr_milestones.contains(&epoch) {
            lr *= cfg.lr_decay;
        }
        let (values, cache) = net.forward_batch(x.view(), cfg.power_iters)?;
        let f = values.as_slice().unwrap();
        let (f_mu, f_nu) = f.split_at(n_mu);
        let lm = metric_loss_from_values(f_mu, w_mu, f_nu, w_nu);
        let lb = bound_loss_from_values(f_mu, w_mu, tv_mu, f_nu, w_nu, tv_nu, cfg.bound);
        let lambda = match (cfg.mode, &mut penalty) {
            (DistanceMode::Wasserstein, _) => T::zero(),
            (DistanceMode::Flat, Penalty::Static(v)) => *v,
            (DistanceMode::Flat, Penalty::Adaptive(schedule)) => {
                let k = history.len().min(smooth_window.saturating_sub(1));
                let tail = &history[history.len() - k..];
                let lm_smooth =
                    tail.iter().fold(lm, |acc, h| acc + h.metric_loss) / T::c((k + 1) as f64);
                let lb_smooth =
                    tail.iter().fold(lb, |acc, h| acc + h.bound_loss) / T::c((k + 1) as f64);
                schedule.lambda_at(T::c(epoch as f64) / epochs_t, lm_smooth, lb_smooth)
            }
        };
        let total = lm + lambda * lb;
        if !total.is_finite() {
            return Err(Error::DivergedTraining {
                epoch,
                loss: total.f64(),
            });
        }
        // d total / d f at every support point.
        let mut upstream: Array1<T> = Array1::zeros(batch);
        for i in 0..n_mu {
            let fi = f_mu[i];
            let h = (fi.abs() - cfg.bound).max(T::zero());
            let grad_hinge = if h > T::zero() {
                two * h * fi.signum() * w_mu[i] / tv_mu
            } else {
                T::zero()
            };
            upstream[i] = -w_mu[i] + lambda * grad_hinge;
        }
        for j in 0..n_nu {
            let fj = f_nu[j];
            let h = (fj.abs() - cfg.bound).max(T::zero());
            let grad_hinge = if h > T::zero() {
                two * h * fj.signum() * w_nu[j] / tv_nu
            } else {
                T::zero()
            };
            upstream[n_mu + j] = w_nu[j] + lambda * grad_hinge;
        }
        let grads = net.backward(&cache, &upstream)?;
        adam.step(&mut net, &grads, lr)?;
        history.push(LossBreakdown {
            metric_loss: lm,
            bound_loss: lb,
            lambda,
            total,
        });
    }
    net.settle_normalization(500, T::c(1e-14))?;
    let (lambda_s1, lambda_s2) = match &penalty {
        Penalty::Adaptive(s) => (s.lambda_s1(), s.lambda_s2()),
        Penalty::Static(_) => (None, None),
    };
    Ok(TrainOutcome {
        net,
        state: TrainingState {
            history,
            lambda_s1,
            lambda_s2,
            final_lr: lr,
        },
    })
}

/// Mean and standard error of `-L_m` over the last `window` epochs.
pub fn extract_estimate<T: Scalar>(history: &[LossBreakdown<T>], window: usize) -> Result<(T, T)> {
    if history.len() < window || window == 0 {
        return Err(Error::ShortHistory {
            len: history.len(),
            window,
        });
    }
    let tail = &history[history.len() - window..];
    let n = T::c(window as f64);
    let mean = tail.iter().fold(T::zero(), |acc, lb| acc - lb.metric_loss) / n;
    if window == 1 {
        return Ok((mean, T::zero()));
    }
    let var = tail.iter().fold(T::zero(), |acc, lb| {
        let d = -lb.metric_loss - mean;
        acc + d * d
    }) / (n - T::one());
    Ok((mean, var.sqrt() / n.sqrt()))
}

/// Number of history steps where the metric loss strictly decreases while
/// the bound loss strictly increases (the two objectives pulling against
/// each other).
pub fn count_antagonistic_epochs<T: Scalar>(history: &[LossBreakdown<T>]) -> usize {
    history
        .windows(2)
        .filter(|w| w[1].metric_loss < w[0].metric_loss && w[1].bound_loss > w[0].bound_loss)
        .count()
}

/// Write a training log as CSV (`epoch,metric_loss,bound_loss,lambda,total`).
pub fn write_history_csv<T: Scalar, W: std::io::Write>(
    history: &[LossBreakdown<T>],
    out: &mut W,
) -> Result<()> {
    writeln!(out, "epoch,metric_loss,bound_loss,lambda,total")?;
    for (e, row) in history.iter().enumerate() {
        writeln!(
            out,
            "{e},{},{},{},{}",
            row.metric_loss, row.bound_loss, row.lambda, row.total
        )?;
    }
    Ok(())
}

impl<T: Scalar> TrainConfig<T> {
    /// Render as a plain `key = value` file.
    pub fn to_key_value_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let penalty = match &self.penalty {
            Penalty::Adaptive(_) => "adaptive".to_string(),
            Penalty::Static(v) => format!("static:{v}"),
        };
        format!(
            "epochs = {}\nlr = {}\nlr_decay = {}\nlr_milestones = {}\nbeta1 = {}\nbeta2 = {}\nweight_decay = {}\ntail_window = {}\nmode = {}\nseed = {}\nhidden = {}\ngroup_size = {}\npower_iters = {}\npenalty = {}\nbound = {}\n",
            self.epochs,
            self.lr,
            self.lr_decay,
            list(&self.lr_milestones),
            self.beta1,
            self.beta2,
            self.weight_decay,
            self.tail_window,
            match self.mode {
                DistanceMode::Flat => "flat",
                DistanceMode::Wasserstein => "wasserstein",
            },
            self.seed,
            list(&self.hidden),
            self.group_size,
            self.power_iters,
            penalty,
            self.bound,
        )
    }

    /// Parse a plain `key = value` file; unknown keys are rejected, missing
    /// keys keep their defaults. `#` starts a comment line.
    pub fn from_key_value_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let parse_f = |v: &str| -> Result<T> {
            v.trim()
                .parse::<f64>()
                .map(T::c)
                .map_err(|_| Error::Parse(format!("bad number {v:?}")))
        };
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad integer {s:?}")))
                })
                .collect()
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad config line: {line}")))?;
            let value = value.trim();
            match key.trim() {
                "epochs" => {
                    cfg.epochs = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad epochs {value:?}")))?
                }
                "lr" => cfg.lr = parse_f(value)?,
                "lr_decay" => cfg.lr_decay = parse_f(value)?,
                "lr_milestones" => cfg.lr_milestones = parse_list(value)?,
                "beta1" => cfg.beta1 = parse_f(value)?,
                "beta2" => cfg.beta2 = parse_f(value)?,
                "weight_decay" => cfg.weight_decay = parse_f(value)?,
                "tail_window" => {
                    cfg.tail_window = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad tail_window {value:?}")))?
                }
                "mode" => {
                    cfg.mode = match value {
                        "flat" => DistanceMode::Flat,
                        "wasserstein" => DistanceMode::Wasserstein,
                        other => return Err(Error::Parse(format!("unknown mode {other:?}"))),
                    }
                }
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad seed {value:?}")))?
                }
                "hidden" => cfg.hidden = parse_list(value)?,
                "group_size" => {
                    cfg.group_size = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad group_size {value:?}")))?
                }
                "power_iters" => {
                    cfg.power_iters = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad power_iters {value:?}")))?
                }
                "penalty" => {
                    cfg.penalty = if value == "adaptive" {
                        Penalty::Adaptive(LambdaSchedule::default())
                    } else if let Some(v) = value.strip_prefix("static:") {
                        Penalty::Static(parse_f(v)?)
                    } else {
                        return Err(Error::Parse(format!("unknown penalty {value:?}")));
                    }
                }
                "bound" => cfg.bound = parse_f(value)?,
                other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}
