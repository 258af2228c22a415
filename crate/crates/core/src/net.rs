//! The value network `v_θ`: sigmoid hidden layers and an affine output,
//! with exact input gradients and exact parameter gradients of losses that
//! contain the input gradient.
//!
//! Batched evaluation takes point matrices of shape `(B, n)` (one point per
//! row). Internally activations are stored column-per-point, `(width, B)`,
//! so each layer is a single GEMM.
//!
//! Residual terms need `∂/∂θ [∇v_θ(x)·f]`. The directional derivative
//! `D = ∇v_θ(x)·f` is computed by pushing the tangent `f` forward alongside
//! the primal activations, and the parameter gradient of any function of
//! `(v, D)` comes from one reverse sweep over that dual forward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{arg_err, Result, ZubovError};
use crate::rng::{stream, Rng};

/// Points per work unit in batched gradient evaluation. Chunk results are
/// reduced in chunk order, so gradients do not depend on the thread count.
pub const CHUNK: usize = 256;

/// Weights and biases of the network. Layer `l` maps `h ↦ W_l h + b_l`;
/// `W_l` has shape `(out, in)`.
///
/// The same shape doubles as the container for parameter gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    input_dim: usize,
    width: usize,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Value and input gradient at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub input_grad: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. `depth` counts affine layers,
    /// so `depth − 1` hidden sigmoid layers precede the linear output.
    pub fn init(seed: u64, input_dim: usize, width: usize, depth: usize) -> Result<Self> {
        if depth < 2 {
            return arg_err(format!("depth {depth} < 2: need a hidden layer and an output"));
        }
        if input_dim == 0 || width == 0 {
            return arg_err("input dimension and width must be positive");
        }
        let mut rng = Rng::stream(seed, stream::INIT);
        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        for l in 0..depth {
            let (rows, cols) = layer_shape(input_dim, width, depth, l);
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((rows, cols), || rng.uniform(-limit, limit));
            weights.push(w);
            biases.push(Array1::zeros(rows));
        }
        Ok(Self {
            input_dim,
            width,
            weights,
            biases,
        })
    }

    /// Builds parameters from explicit layers, validating every shape.
    pub fn from_layers(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        let depth = weights.len();
        if depth < 2 || biases.len() != depth {
            return arg_err(format!(
                "need ≥ 2 layers with one bias each, got {} weights and {} biases",
                depth,
                biases.len()
            ));
        }
        let input_dim = weights[0].ncols();
        let width = weights[0].nrows();
        for l in 0..depth {
            let expect = layer_shape(input_dim, width, depth, l);
            if weights[l].dim() != expect || biases[l].len() != expect.0 {
                return arg_err(format!(
                    "layer {}: weight {:?} / bias {} do not match expected {:?}",
                    l + 1,
                    weights[l].dim(),
                    biases[l].len(),
                    expect
                ));
            }
            if weights[l].iter().chain(biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(ZubovError::Numeric(format!("layer {} has non-finite entries", l + 1)));
            }
        }
        Ok(Self {
            input_dim,
            width,
            weights,
            biases,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            width: self.width,
            weights: self.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Mutable access to layer `l` (zero-based). Shapes must not change.
    pub fn layer_mut(&mut self, l: usize) -> (&mut Array2<f64>, &mut Array1<f64>) {
        (&mut self.weights[l], &mut self.biases[l])
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattens layer by layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return arg_err(format!(
                "flat vector has {} entries, network has {}",
                flat.len(),
                self.num_params()
            ));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Index of the first layer holding a non-finite entry, if any.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        (0..self.depth()).find(|&l| {
            self.weights[l]
                .iter()
                .chain(self.biases[l].iter())
                .any(|v| !v.is_finite())
        })
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(
        &mut self,
    ) -> impl Iterator<Item = (&mut Array2<f64>, &mut Array1<f64>)> {
        self.weights.iter_mut().zip(self.biases.iter_mut())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return arg_err(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim
            ));
        }
        Ok(())
    }

    fn check_batch(&self, points: &ArrayView2<f64>) -> Result<()> {
        if points.ncols() != self.input_dim {
            return arg_err(format!(
                "points have {} columns, network expects {}",
                points.ncols(),
                self.input_dim
            ));
        }
        Ok(())
    }

    /// `v_θ(x)`. Shares the batched code path, so it agrees bitwise with
    /// [`MlpParams::forward_batch`] and [`MlpParams::forward_with_input_grad`].
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let pts = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        Ok(ValueCache::forward(self, pts).values[0])
    }

    /// `v_θ(x)` and `∇ₓv_θ(x)`.
    pub fn forward_with_input_grad(&self, x: &[f64]) -> Result<DualEval> {
        self.check_point(x)?;
        let pts = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        let (v, g) = self.value_and_input_grad_unchecked(pts);
        Ok(DualEval {
            value: v[0],
            input_grad: g.row(0).to_vec(),
        })
    }

    /// Values at every row of `points`.
    pub fn forward_batch(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&points)?;
        let mut out = Array1::zeros(points.nrows());
        for start in (0..points.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(points.nrows());
            let cache = ValueCache::forward(self, points.slice(s![start..end, ..]));
            out.slice_mut(s![start..end]).assign(&cache.values);
        }
        Ok(out)
    }

    /// Values `(B)` and input gradients `(B, n)` at every row of `points`.
    pub fn value_and_input_grad(
        &self,
        points: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_batch(&points)?;
        Ok(self.value_and_input_grad_unchecked(points))
    }

    pub(crate) fn value_and_input_grad_unchecked(
        &self,
        points: ArrayView2<f64>,
    ) -> (Array1<f64>, Array2<f64>) {
        let b = points.nrows();
        let mut values = Array1::zeros(b);
        let mut grads = Array2::zeros((b, self.input_dim));
        for start in (0..b).step_by(CHUNK) {
            let end = (start + CHUNK).min(b);
            let cache = ValueCache::forward(self, points.slice(s![start..end, ..]));
            values.slice_mut(s![start..end]).assign(&cache.values);
            let g = cache.input_grad(self);
            grads.slice_mut(s![start..end, ..]).assign(&g.t());
        }
        (values, grads)
    }
}

fn layer_shape(input_dim: usize, width: usize, depth: usize, l: usize) -> (usize, usize) {
    let rows = if l + 1 == depth { 1 } else { width };
    let cols = if l == 0 { input_dim } else { width };
    (rows, cols)
}

/// Forward activations for value-only evaluation. `acts[0]` is the input
/// (column per point), `acts[l]` the output of hidden layer `l`.
pub(crate) struct ValueCache {
    acts: Vec<Array2<f64>>,
    pub(crate) values: Array1<f64>,
}

impl ValueCache {
    pub(crate) fn forward(params: &MlpParams, points: ArrayView2<f64>) -> Self {
        let depth = params.depth();
        let mut acts = Vec::with_capacity(depth);
        acts.push(points.t().to_owned());
        for l in 0..depth - 1 {
            let w = &params.weights[l];
            let mut z = Array2::zeros((w.nrows(), points.nrows()));
            general_mat_mul(1.0, w, &acts[l], 0.0, &mut z);
            Zip::from(z.rows_mut())
                .and(&params.biases[l])
                .for_each(|mut row, &bias| row.mapv_inplace(|v| sigmoid(v + bias)));
            acts.push(z);
        }
        let mut values = params.weights[depth - 1].dot(&acts[depth - 1]).row(0).to_owned();
        values += params.biases[depth - 1][0];
        Self { acts, values }
    }

    /// Input gradients as `(n, B)`.
    pub(crate) fn input_grad(&self, params: &MlpParams) -> Array2<f64> {
        let depth = params.depth();
        let b = self.values.len();
        let out_row = params.weights[depth - 1].row(0);
        let mut adj = Array2::zeros((params.width, b));
        for (mut col, _) in adj.columns_mut().into_iter().zip(0..b) {
            col.assign(&out_row);
        }
        for l in (0..depth - 1).rev() {
            Zip::from(&mut adj)
                .and(&self.acts[l + 1])
                .for_each(|a, &s| *a *= s * (1.0 - s));
            let w = &params.weights[l];
            let mut prev = Array2::zeros((w.ncols(), b));
            general_mat_mul(1.0, &w.t(), &adj, 0.0, &mut prev);
            adj = prev;
        }
        adj
    }

    /// Accumulates `Σ_b seed_b ∂v(x_b)/∂θ` into `grad`.
    pub(crate) fn backward(&self, params: &MlpParams, seeds: &Array1<f64>, grad: &mut MlpParams) {
        let depth = params.depth();
        let top = depth - 1;
        // output layer
        {
            let gw = &mut grad.weights[top];
            let contrib = self.acts[top].dot(seeds);
            gw.row_mut(0).scaled_add(1.0, &contrib);
            grad.biases[top][0] += seeds.sum();
        }
        let out_row = params.weights[top].row(0);
        let mut adj = Array2::zeros((params.width, seeds.len()));
        Zip::from(adj.rows_mut())
            .and(&out_row)
            .for_each(|mut row, &w| row.assign(&(seeds * w)));
        for l in (0..top).rev() {
            Zip::from(&mut adj)
                .and(&self.acts[l + 1])
                .for_each(|a, &s| *a *= s * (1.0 - s));
            general_mat_mul(1.0, &adj, &self.acts[l].t(), 1.0, &mut grad.weights[l]);
            grad.biases[l] += &adj.sum_axis(Axis(1));
            if l > 0 {
                let w = &params.weights[l];
                let mut prev = Array2::zeros((w.ncols(), seeds.len()));
                general_mat_mul(1.0, &w.t(), &adj, 0.0, &mut prev);
                adj = prev;
            }
        }
    }
}

/// Forward pass carrying a tangent direction per point.
///
/// `acts[l]` has shape `(width, 2B)`: columns `0..B` hold the activations,
/// columns `B..2B` their tangents. `pre_tangent[l]` keeps the pre-activation
/// tangents `ż` needed for the second-order term of the reverse sweep.
pub(crate) struct DualCache {
    batch: usize,
    acts: Vec<Array2<f64>>,
    pre_tangent: Vec<Array2<f64>>,
    pub(crate) values: Array1<f64>,
    /// `∇v_θ(x_b)·t_b`.
    pub(crate) directional: Array1<f64>,
}

impl DualCache {
    pub(crate) fn forward(
        params: &MlpParams,
        points: ArrayView2<f64>,
        tangents: ArrayView2<f64>,
    ) -> Self {
        let b = points.nrows();
        let depth = params.depth();
        let mut input = Array2::zeros((params.input_dim, 2 * b));
        input.slice_mut(s![.., ..b]).assign(&points.t());
        input.slice_mut(s![.., b..]).assign(&tangents.t());
        let mut acts = Vec::with_capacity(depth);
        let mut pre_tangent = Vec::with_capacity(depth - 1);
        acts.push(input);
        for l in 0..depth - 1 {
            let w = &params.weights[l];
            let mut z = Array2::zeros((w.nrows(), 2 * b));
            general_mat_mul(1.0, w, &acts[l], 0.0, &mut z);
            let (mut primal, mut tangent) = z.view_mut().split_at(Axis(1), b);
            Zip::from(primal.rows_mut())
                .and(&params.biases[l])
                .for_each(|mut row, &bias| row.mapv_inplace(|v| sigmoid(v + bias)));
            pre_tangent.push(tangent.to_owned());
            Zip::from(&mut tangent)
                .and(&primal)
                .for_each(|t, &s| *t *= s * (1.0 - s));
            acts.push(z);
        }
        let out = params.weights[depth - 1].dot(&acts[depth - 1]);
        let mut values = out.slice(s![0, ..b]).to_owned();
        values += params.biases[depth - 1][0];
        let directional = out.slice(s![0, b..]).to_owned();
        Self {
            batch: b,
            acts,
            pre_tangent,
            values,
            directional,
        }
    }

    /// Accumulates `Σ_b [v̄_b ∂v_b/∂θ + D̄_b ∂D_b/∂θ]` into `grad`.
    pub(crate) fn backward(
        &self,
        params: &MlpParams,
        value_seeds: &Array1<f64>,
        dir_seeds: &Array1<f64>,
        grad: &mut MlpParams,
    ) {
        let b = self.batch;
        let depth = params.depth();
        let top = depth - 1;
        let mut seeds = Array1::zeros(2 * b);
        seeds.slice_mut(s![..b]).assign(value_seeds);
        seeds.slice_mut(s![b..]).assign(dir_seeds);
        {
            let contrib = self.acts[top].dot(&seeds);
            grad.weights[top].row_mut(0).scaled_add(1.0, &contrib);
            grad.biases[top][0] += value_seeds.sum();
        }
        let out_row = params.weights[top].row(0);
        let mut adj = Array2::zeros((params.width, 2 * b));
        Zip::from(adj.rows_mut())
            .and(&out_row)
            .for_each(|mut row, &w| row.assign(&(&seeds * w)));
        for l in (0..top).rev() {
            let act = &self.acts[l + 1];
            let s_act = act.slice(s![.., ..b]);
            let zdot = &self.pre_tangent[l];
            {
                let (mut a_primal, mut a_tangent) = adj.view_mut().split_at(Axis(1), b);
                // z̄ = h̄ σ' + ḣ̄ ż σ'' ;  ż̄ = ḣ̄ σ'
                Zip::from(&mut a_primal)
                    .and(&mut a_tangent)
                    .and(&s_act)
                    .and(zdot)
                    .for_each(|ap, at, &s, &zd| {
                        let d1 = s * (1.0 - s);
                        let d2 = d1 * (1.0 - 2.0 * s);
                        *ap = *ap * d1 + *at * zd * d2;
                        *at *= d1;
                    });
            }
            general_mat_mul(1.0, &adj, &self.acts[l].t(), 1.0, &mut grad.weights[l]);
            grad.biases[l] += &adj.slice(s![.., ..b]).sum_axis(Axis(1));
            if l > 0 {
                let w = &params.weights[l];
                let mut prev = Array2::zeros((w.ncols(), 2 * b));
                general_mat_mul(1.0, &w.t(), &adj, 0.0, &mut prev);
                adj = prev;
            }
        }
    }
}

/// Splits `0..len` into consecutive ranges of at most [`CHUNK`] points.
pub(crate) fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    (0..len)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(len))
        .collect()
}

/// Maps `work` over `items` in parallel, returning results in item order.
pub(crate) fn par_map_ordered<T, U, F>(items: &[T], work: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    items.par_iter().map(&work).collect()
}

/// Exact gradient of the total empirical loss with respect to every weight
/// and bias.
pub fn loss_gradient(params: &MlpParams, batch: &crate::losses::LossBatch) -> Result<MlpParams> {
    Ok(crate::losses::loss_and_gradient(params, batch)?.1)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: MlpParams,
    second: MlpParams,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(params: &MlpParams, lr: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of `params` along `grad`. A non-finite gradient leaves
    /// both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut MlpParams, grad: &MlpParams) -> Result<()> {
        if grad.weights.len() != params.weights.len()
            || grad
                .weights
                .iter()
                .zip(&params.weights)
                .any(|(g, p)| g.dim() != p.dim())
        {
            return arg_err("gradient shape does not match parameters");
        }
        if let Some(l) = grad.first_non_finite_layer() {
            return Err(ZubovError::Numeric(format!(
                "non-finite gradient in layer {}",
                l + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..params.depth() {
            Zip::from(&mut params.weights[l])
                .and(&grad.weights[l])
                .and(&mut self.first.weights[l])
                .and(&mut self.second.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            Zip::from(&mut params.biases[l])
                .and(&grad.biases[l])
                .and(&mut self.first.biases[l])
                .and(&mut self.second.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
