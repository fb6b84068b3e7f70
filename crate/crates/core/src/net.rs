//! 1-Lipschitz multilayer perceptron: spectrally normalized dense layers with
//! GroupSort activations and a linear scalar output.
//!
//! Lipschitz continuity is closed under composition, so bounding every
//! layer's operator norm by 1 and using the 1-Lipschitz GroupSort activation
//! bounds the whole network. Spectral normalization divides each weight
//! matrix by its largest singular value, estimated by power iteration with a
//! persistent warm-started left vector: one iteration per training forward
//! pass, and [`LipschitzNet::settle_normalization`] to converge the estimates
//! before the network is used as a fixed function (evaluation, checkpointing,
//! Lipschitz checks).
//!
//! Gradients are reverse-mode. The spectral norm estimate is treated as
//! constant with respect to the power-iteration vectors, but `W / sigma(W)`
//! is differentiated in full (`sigma = u' W v`), matching the convention the
//! training loop's finite-difference oracle assumes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense layer state: raw weights plus persistent power-iteration vector and
/// the last spectral-norm estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T: Scalar> {
    pub weight: Array2<T>, // out x in
    pub bias: Array1<T>,   // out
    sn_u: Array1<T>,       // out, unit norm
    sigma: T,
}

/// The full network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LipschitzNet<T: Scalar> {
    layers: Vec<DenseLayer<T>>,
    group_size: usize,
    input_dim: usize,
}

/// Per-layer intermediates captured by a training forward pass.
#[derive(Debug, Clone)]
struct LayerCache<T: Scalar> {
    input: Array2<T>, // in x batch
    w_hat: Array2<T>, // normalized weight used
    u: Array1<T>,     // power-iteration vectors behind sigma
    v: Array1<T>,
    sigma: T,
    perm: Option<Array2<usize>>, // GroupSort source slot per output entry
}

/// Activations and normalization state of one forward pass, consumed by
/// [`LipschitzNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    layers: Vec<LayerCache<T>>,
    batch: usize,
}

/// Parameter gradients, same shapes as the layers.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<(Array2<T>, Array1<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Zero gradients shaped like `net`.
    pub fn zeros_like(net: &LipschitzNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros((l.out_dim(), l.in_dim())),
                        Array1::zeros(l.out_dim()),
                    )
                })
                .collect(),
        }
    }
}

fn l2_norm<T: Scalar>(v: &Array1<T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Sort each consecutive group of `group_size` entries ascending. The output
/// is a permutation of the input, so the operation is an isometry; gradients
/// route each output slot back to its source slot.
pub fn group_sort<T: Scalar>(v: &[T], group_size: usize) -> Result<Vec<T>> {
    if group_size == 0 || v.len() % group_size != 0 {
        return Err(Error::BadGroupSize {
            group: group_size,
            len: v.len(),
        });
    }
    let mut out = v.to_vec();
    for chunk in out.chunks_mut(group_size) {
        chunk.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    }
    Ok(out)
}

/// Columnwise GroupSort of a `features x batch` matrix, returning the sorted
/// values and the source slot of every output entry.
fn group_sort_batch<T: Scalar>(
    z: &Array2<T>,
    group_size: usize,
) -> Result<(Array2<T>, Array2<usize>)> {
    let (rows, cols) = z.dim();
    if group_size == 0 || rows % group_size != 0 {
        return Err(Error::BadGroupSize {
            group: group_size,
            len: rows,
        });
    }
    let mut out = z.clone();
    let mut perm = Array2::zeros((rows, cols));
    let mut idx: Vec<usize> = Vec::with_capacity(group_size);
    for col in 0..cols {
        for g in (0..rows).step_by(group_size) {
            idx.clear();
            idx.extend(g..g + group_size);
            // Stable sort: first occurrence wins on ties.
            idx.sort_by(|&a, &b| {
                z[(a, col)]
                    .partial_cmp(&z[(b, col)])
                    .expect("finite activations")
            });
            for (slot, &src) in idx.iter().enumerate() {
                out[(g + slot, col)] = z[(src, col)];
                perm[(g + slot, col)] = src;
            }
        }
    }
    Ok((out, perm))
}

fn layer_is_zero<T: Scalar>(layer: &DenseLayer<T>) -> bool {
    let frob = layer
        .weight
        .iter()
        .fold(T::zero(), |acc, &x| acc + x * x)
        .sqrt();
    frob <= T::c(1e-30)
}

/// Advance the persistent power iteration by `power_iters` steps and return
/// the consistent triple `(u, v, sigma)` with `v = W'u/|W'u|` and
/// `sigma = u'Wv = |W'u|`. With `power_iters == 0` the current `u` is used
/// without being advanced. `sigma` is always a lower bound of the spectral
/// norm, reaching it as the iteration converges.
fn directions_and_sigma<T: Scalar>(
    layer: &mut DenseLayer<T>,
    power_iters: usize,
) -> Result<(Array1<T>, Array1<T>, T)> {
    let frob = layer
        .weight
        .iter()
        .fold(T::zero(), |acc, &x| acc + x * x)
        .sqrt();
    if frob <= T::c(1e-30) {
        return Err(Error::ZeroMatrix);
    }
    for _ in 0..power_iters {
        let (sigma, u, _v) = power_iteration_step(&layer.weight, &layer.sn_u);
        layer.sn_u = u;
        layer.sigma = sigma;
    }
    let mut v = layer.weight.t().dot(&layer.sn_u);
    let nv = l2_norm(&v);
    if !(nv > T::c(1e-300)) {
        // u is in the left null space of a nonzero matrix; restart it.
        let mut u0: Array1<T> = Array1::zeros(layer.sn_u.len());
        u0[0] = T::one();
        layer.sn_u = u0;
        return directions_and_sigma(layer, 1.max(power_iters));
    }
    v.mapv_inplace(|x| x / nv);
    let sigma = layer.sn_u.dot(&layer.weight.dot(&v));
    if !(sigma > T::zero()) {
        return Err(Error::ZeroMatrix);
    }
    layer.sigma = sigma;
    Ok((layer.sn_u.clone(), v, sigma))
}

/// Run `power_iters` power-iteration steps on `layer` (updating the
/// persistent `u` and the cached estimate) and return the normalized weight
/// `W / sigma`.
pub fn spectral_normalize<T: Scalar>(
    layer: &mut DenseLayer<T>,
    power_iters: usize,
) -> Result<Array2<T>> {
    let (_u, _v, sigma) = directions_and_sigma(layer, power_iters)?;
    Ok(layer.weight.mapv(|w| w / sigma))
}

/// `v = W'u / |W'u|`, `u = Wv / |Wv|`, `sigma = u'Wv`.
fn power_iteration_step<T: Scalar>(w: &Array2<T>, u: &Array1<T>) -> (T, Array1<T>, Array1<T>) {
    let mut v = w.t().dot(u);
    let nv = l2_norm(&v);
    if !(nv > T::c(1e-300)) {
        // u fell into the left null space; restart from a fixed direction.
        let mut u0: Array1<T> = Array1::zeros(u.len());
        u0[0] = T::one();
        let mut v = w.t().dot(&u0);
        let nv = l2_norm(&v);
        if !(nv > T::c(1e-300)) {
            return (T::zero(), u0, Array1::zeros(w.ncols()));
        }
        v.mapv_inplace(|x| x / nv);
        let mut u_new = w.dot(&v);
        let nu = l2_norm(&u_new);
        u_new.mapv_inplace(|x| x / nu);
        let sigma = u_new.dot(&w.dot(&v));
        return (sigma, u_new, v);
    }
    v.mapv_inplace(|x| x / nv);
    let mut u_new = w.dot(&v);
    let nu = l2_norm(&u_new);
    u_new.mapv_inplace(|x| x / nu);
    let sigma = u_new.dot(&w.dot(&v));
    (sigma, u_new, v)
}

/// Orthonormalize the rows (if `rows <= cols`) or columns of a Gaussian
/// matrix: a semi-orthogonal matrix with unit spectral norm.
fn orthogonal_init<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let transpose = rows > cols;
    let (r, c) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut m = Array2::from_shape_fn((r, c), |_| T::standard_normal(rng));
    for i in 0..r {
        loop {
            for k in 0..i {
                let proj = m.row(i).dot(&m.row(k));
                let scaled = m.row(k).mapv(|x| x * proj);
                let mut row = m.row_mut(i);
                row -= &scaled;
            }
            let norm = m
                .row(i)
                .iter()
                .fold(T::zero(), |acc, &x| acc + x * x)
                .sqrt();
            if norm > T::c(1e-8) {
                m.row_mut(i).mapv_inplace(|x| x / norm);
                break;
            }
            for x in m.row_mut(i).iter_mut() {
                *x = T::standard_normal(rng);
            }
        }
    }
    if transpose {
        m.t().to_owned()
    } else {
        m
    }
}

impl<T: Scalar> DenseLayer<T> {
    fn fresh<R: Rng>(out: usize, inp: usize, rng: &mut R) -> Self {
        let weight = orthogonal_init(out, inp, rng);
        let mut u = Array1::from_shape_fn(out, |_| T::standard_normal(rng));
        let n = l2_norm(&u);
        u.mapv_inplace(|x| x / n);
        Self {
            weight,
            bias: Array1::zeros(out),
            sn_u: u,
            sigma: T::one(),
        }
    }

    /// Build a layer from explicit parameters (tests, checkpoint surgery).
    pub fn from_parts(weight: Array2<T>, bias: Array1<T>, sn_u: Array1<T>, sigma: T) -> Self {
        Self {
            weight,
            bias,
            sn_u,
            sigma,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Last spectral-norm estimate.
    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn sn_u(&self) -> &Array1<T> {
        &self.sn_u
    }

    /// Converge the spectral-norm estimate on the current weights. Runs power
    /// iteration from the persistent vector, a fixed pseudo-random vector and
    /// the dominant-row unit vector, keeping the largest estimate; the extra
    /// starts escape vectors that are exactly orthogonal to the top singular
    /// direction.
    fn settle(&mut self, max_iters: usize, tol: T) -> Result<T> {
        let out = self.out_dim();
        let mut starts: Vec<Array1<T>> = vec![self.sn_u.clone()];
        let mut rng =
            ChaCha8Rng::seed_from_u64(0x5eed ^ ((out as u64) << 17) ^ self.in_dim() as u64);
        let mut fixed = Array1::from_shape_fn(out, |_| T::standard_normal(&mut rng));
        let n = l2_norm(&fixed);
        fixed.mapv_inplace(|x| x / n);
        starts.push(fixed);
        let top_row = (0..out)
            .map(|i| {
                (
                    i,
                    self.weight.row(i).iter().fold(T::zero(), |a, &x| a + x * x),
                )
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut basis: Array1<T> = Array1::zeros(out);
        basis[top_row] = T::one();
        starts.push(basis);

        let mut best: Option<(T, Array1<T>)> = None;
        for start in starts {
            let mut u = start;
            let mut sigma = T::zero();
            for _ in 0..max_iters {
                let (s, u_new, _v) = power_iteration_step(&self.weight, &u);
                u = u_new;
                let done = (s - sigma).abs() <= tol * s.max(T::one());
                sigma = s;
                if done {
                    break;
                }
            }
            if best.as_ref().map(|(s, _)| sigma > *s).unwrap_or(true) {
                best = Some((sigma, u));
            }
        }
        let (sigma, u) = best.expect("at least one start");
        if !(sigma > T::zero()) {
            return Err(Error::ZeroMatrix);
        }
        self.sn_u = u;
        self.sigma = sigma;
        Ok(sigma)
    }
}

impl<T: Scalar> LipschitzNet<T> {
    /// Fresh network `input_dim -> hidden[0] -> ... -> hidden[k-1] -> 1` with
    /// GroupSort after every hidden layer and a linear output. Weights are
    /// orthogonal (unit spectral norm), biases zero.
    pub fn new(input_dim: usize, hidden: &[usize], group_size: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        for &h in hidden {
            if group_size == 0 || h % group_size != 0 {
                return Err(Error::BadGroupSize {
                    group: group_size,
                    len: h,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::fresh(h, prev, &mut rng));
            prev = h;
        }
        layers.push(DenseLayer::fresh(1, prev, &mut rng));
        Ok(Self {
            layers,
            group_size,
            input_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    /// Training forward pass over an `input_dim x batch` matrix: refreshes
    /// the spectral normalization (`power_iters` steps per layer, warm
    /// started) and caches everything [`Self::backward`] needs.
    pub fn forward_batch(
        &mut self,
        x: ArrayView2<T>,
        power_iters: usize,
    ) -> Result<(Array1<T>, ForwardCache<T>)> {
        if x.nrows() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.nrows(),
            });
        }
        let batch = x.ncols();
        let n_layers = self.layers.len();
        let group_size = self.group_size;
        let mut caches = Vec::with_capacity(n_layers);
        let mut h = x.to_owned();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            // An all-zero layer is the zero map (trivially 1-Lipschitz);
            // there is nothing to normalize.
            let (u, v, sigma) = if layer_is_zero(layer) {
                layer.sigma = T::one();
                (layer.sn_u.clone(), Array1::zeros(layer.in_dim()), T::one())
            } else {
                directions_and_sigma(layer, power_iters)?
            };
            let w_hat = layer.weight.mapv(|w| w / sigma);
            let mut z = w_hat.dot(&h);
            for mut col in z.axis_iter_mut(Axis(1)) {
                col += &layer.bias;
            }
            let (a, perm) = if li + 1 < n_layers {
                let (a, p) = group_sort_batch(&z, group_size)?;
                (a, Some(p))
            } else {
                (z, None)
            };
            caches.push(LayerCache {
                input: h,
                w_hat,
                u,
                v,
                sigma,
                perm,
            });
            h = a;
        }
        let y = h.row(0).to_owned();
        Ok((
            y,
            ForwardCache {
                layers: caches,
                batch,
            },
        ))
    }

    /// Forward pass for a single point, with cache.
    pub fn forward(&mut self, x: &[T], power_iters: usize) -> Result<(T, ForwardCache<T>)> {
        let col = Array2::from_shape_vec((x.len(), 1), x.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let (y, cache) = self.forward_batch(col.view(), power_iters)?;
        Ok((y[0], cache))
    }

    /// Evaluation with frozen normalization: uses the cached spectral-norm
    /// estimates without touching the power-iteration state, so repeated
    /// calls evaluate one fixed function. Call
    /// [`Self::settle_normalization`] first to make that function certified
    /// 1-Lipschitz.
    pub fn eval_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        if x.nrows() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.nrows(),
            });
        }
        let n_layers = self.layers.len();
        let mut h = x.to_owned();
        for (li, layer) in self.layers.iter().enumerate() {
            if !(layer.sigma > T::zero()) {
                return Err(Error::ZeroMatrix);
            }
            let mut z = layer.weight.mapv(|w| w / layer.sigma).dot(&h);
            for mut col in z.axis_iter_mut(Axis(1)) {
                col += &layer.bias;
            }
            h = if li + 1 < n_layers {
                group_sort_batch(&z, self.group_size)?.0
            } else {
                z
            };
        }
        Ok(h.row(0).to_owned())
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        let col = Array2::from_shape_vec((x.len(), 1), x.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.eval_batch(col.view())?[0])
    }

    /// Converge every layer's spectral-norm estimate (multi-start power
    /// iteration). After this, `eval` is 1-Lipschitz up to roundoff
    /// regardless of the raw parameter values.
    pub fn settle_normalization(&mut self, max_iters: usize, tol: T) -> Result<()> {
        for layer in &mut self.layers {
            layer.settle(max_iters, tol)?;
        }
        Ok(())
    }

    /// Reverse-mode gradients of `sum_i upstream_i * y_i` with respect to all
    /// weights and biases, for the forward pass that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Array1<T>) -> Result<Gradients<T>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("cache from a different net".into()));
        }
        if upstream.len() != cache.batch {
            return Err(Error::ShapeMismatch(format!(
                "{} upstream values vs batch {}",
                upstream.len(),
                cache.batch
            )));
        }
        let mut grads: Vec<(Array2<T>, Array1<T>)> = self
            .layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros((l.out_dim(), l.in_dim())),
                    Array1::zeros(l.out_dim()),
                )
            })
            .collect();
        // Gradient w.r.t. the current layer's post-activation output.
        let mut g: Array2<T> = {
            let mut m = Array2::zeros((1, cache.batch));
            m.row_mut(0).assign(upstream);
            m
        };
        for li in (0..self.layers.len()).rev() {
            let lc = &cache.layers[li];
            // Through GroupSort: scatter by the cached permutation.
            let g_z = match &lc.perm {
                Some(perm) => {
                    let mut gz = Array2::zeros(g.raw_dim());
                    for col in 0..cache.batch {
                        for row in 0..g.nrows() {
                            gz[(perm[(row, col)], col)] += g[(row, col)];
                        }
                    }
                    gz
                }
                None => g,
            };
            let g_w_hat = g_z.dot(&lc.input.t());
            let g_b = g_z.sum_axis(Axis(1));
            // Quotient rule through W/sigma with sigma = u'Wv, u and v fixed.
            let inner = g_w_hat
                .iter()
                .zip(lc.w_hat.iter())
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let mut g_w = g_w_hat;
            for (i, &ui) in lc.u.iter().enumerate() {
                for (j, &vj) in lc.v.iter().enumerate() {
                    g_w[(i, j)] -= inner * ui * vj;
                }
            }
            g_w.mapv_inplace(|x| x / lc.sigma);
            g = lc.w_hat.t().dot(&g_z);
            grads[li] = (g_w, g_b);
        }
        Ok(Gradients { layers: grads })
    }

    /// Serialize to JSON (shapes, weights, biases, power-iteration state,
    /// group size). Round-trips bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Adam optimizer state for a [`LipschitzNet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdamState<T: Scalar> {
    first: Vec<(Array2<T>, Array1<T>)>,
    second: Vec<(Array2<T>, Array1<T>)>,
    pub step_count: usize,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub weight_decay: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &LipschitzNet<T>, beta1: T, beta2: T, weight_decay: T) -> Self {
        let zeros = |l: &DenseLayer<T>| {
            (
                Array2::zeros((l.out_dim(), l.in_dim())),
                Array1::zeros(l.out_dim()),
            )
        };
        Self {
            first: net.layers.iter().map(zeros).collect(),
            second: net.layers.iter().map(zeros).collect(),
            step_count: 0,
            beta1,
            beta2,
            epsilon: T::c(1e-8),
            weight_decay,
        }
    }

    /// One Adam update with bias correction at learning rate `lr`.
    pub fn step(&mut self, net: &mut LipschitzNet<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.layers.len() != net.layers.len() || self.first.len() != net.layers.len() {
            return Err(Error::ShapeMismatch("adam state vs net".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let corr1 = T::one() - self.beta1.powi(t);
        let corr2 = T::one() - self.beta2.powi(t);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            if gw.dim() != layer.weight.dim() || gb.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient shape at layer {li}"
                )));
            }
            let (mw, mb) = &mut self.first[li];
            let (vw, vb) = &mut self.second[li];
            let wd = self.weight_decay;
            for ((w, g), (m, v)) in layer
                .weight
                .iter_mut()
                .zip(gw.iter())
                .zip(mw.iter_mut().zip(vw.iter_mut()))
            {
                let g = *g + wd * *w;
                *m = self.beta1 * *m + (T::one() - self.beta1) * g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            for ((b, g), (m, v)) in layer
                .bias
                .iter_mut()
                .zip(gb.iter())
                .zip(mb.iter_mut().zip(vb.iter_mut()))
            {
                let g = *g;
                *m = self.beta1 * *m + (T::one() - self.beta1) * g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *b = *b - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
