//! Empirical loss `boundary + λ_r·residual + λ_d·data` and its gradient.
//!
//! Every mean is taken over per-point terms sorted by value and summed with a
//! pairwise tree, so a loss value is bitwise independent of point order and
//! of how the work was split across threads.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::dynamics::PerturbedSystem;
use crate::error::{arg_err, Result};
use crate::net::{chunk_ranges, par_map_ordered, DualCache, MlpParams, ValueCache};

/// Weights of the three loss terms and the transform steepness α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return arg_err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_d >= 0.0) {
            return arg_err("loss weights must be nonnegative");
        }
        Ok(())
    }
}

/// Loss value broken down by term. `total` already includes the λ weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub boundary: f64,
    pub residual: f64,
    pub data: f64,
}

/// Everything one evaluation of the empirical loss needs. Quantities that do
/// not depend on the network (`f(xᵢ, δ*ᵢ)`, `g(xᵢ, δ*ᵢ)`) are computed once
/// at construction.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub(crate) boundary: Array2<f64>,
    pub(crate) residual: Array2<f64>,
    pub(crate) delta_star: Array2<f64>,
    pub(crate) flow: Array2<f64>,
    pub(crate) cost: Array1<f64>,
    pub(crate) anchors: Array2<f64>,
    pub(crate) v_hat: Array1<f64>,
    pub(crate) weights: LossWeights,
}

impl LossBatch {
    /// Point sets hold one state per row. Individual sets may be empty (the
    /// corresponding mean is then zero) but not all three.
    pub fn new(
        system: &PerturbedSystem,
        boundary: Array2<f64>,
        residual: Array2<f64>,
        delta_star: Array2<f64>,
        anchors: Array2<f64>,
        v_hat: Array1<f64>,
        weights: LossWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let n = system.state_dim();
        let m = system.dist_dim();
        for (name, pts) in [
            ("boundary", &boundary),
            ("residual", &residual),
            ("anchor", &anchors),
        ] {
            if pts.ncols() != n && pts.nrows() > 0 {
                return arg_err(format!(
                    "{name} points have {} columns, system state dimension is {n}",
                    pts.ncols()
                ));
            }
        }
        if boundary.nrows() + residual.nrows() + anchors.nrows() == 0 {
            return arg_err("empty loss batch");
        }
        if delta_star.nrows() != residual.nrows() || (delta_star.nrows() > 0 && delta_star.ncols() != m) {
            return arg_err(format!(
                "{} residual points but δ* has shape {:?}",
                residual.nrows(),
                delta_star.dim()
            ));
        }
        if v_hat.len() != anchors.nrows() {
            return arg_err(format!(
                "{} anchor points but {} anchor values",
                anchors.nrows(),
                v_hat.len()
            ));
        }
        check_anchor_values(v_hat.iter().copied())?;
        let mut flow = Array2::zeros((residual.nrows(), n));
        let mut cost = Array1::zeros(residual.nrows());
        for i in 0..residual.nrows() {
            let x = residual.row(i);
            let x = x.as_slice().expect("row-major points");
            let d = delta_star.row(i).to_vec();
            if !system.disturbance().contains(&d) {
                return arg_err(format!("δ* = {d:?} at residual point {i} is outside the box"));
            }
            let mut f = vec![0.0; n];
            system.rhs_into(x, &d, &mut f);
            flow.row_mut(i).assign(&Array1::from(f));
            cost[i] = system.cost(x, &d);
        }
        Ok(Self {
            boundary: boundary.as_standard_layout().into_owned(),
            residual,
            delta_star,
            flow,
            cost,
            anchors,
            v_hat,
            weights,
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn boundary_points(&self) -> ArrayView2<'_, f64> {
        self.boundary.view()
    }

    pub fn residual_points(&self) -> ArrayView2<'_, f64> {
        self.residual.view()
    }

    pub fn delta_star(&self) -> ArrayView2<'_, f64> {
        self.delta_star.view()
    }

    pub fn anchor_points(&self) -> ArrayView2<'_, f64> {
        self.anchors.view()
    }

    pub fn anchor_values(&self) -> &Array1<f64> {
        &self.v_hat
    }
}

fn check_anchor_values(values: impl Iterator<Item = f64>) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return arg_err(format!("anchor value {v} at index {i} is outside [0, 1]"));
        }
    }
    Ok(())
}

/// Sum with a balanced pairwise tree over the slice in its given order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean that is bitwise invariant under permutation of `terms`.
pub fn ordered_mean(mut terms: Vec<f64>) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.sort_by(f64::total_cmp);
    pairwise_sum(&terms) / terms.len() as f64
}

fn origin_value(params: &MlpParams) -> f64 {
    params
        .forward(&vec![0.0; params.input_dim()])
        .expect("origin has the network's input dimension")
}

/// `v_θ(0)² + mean (v_θ(xᵢ) − 1)²` over boundary samples.
pub fn boundary_loss(params: &MlpParams, points: ArrayView2<f64>) -> Result<f64> {
    if points.nrows() == 0 {
        return arg_err("boundary loss needs at least one point");
    }
    let v = params.forward_batch(points)?;
    let v0 = origin_value(params);
    Ok(v0 * v0 + ordered_mean(v.iter().map(|v| (v - 1.0).powi(2)).collect()))
}

/// Mean squared Hamiltonian residual `∇v·f(x, δ*) + α(1 − v)g(x, δ*)`.
pub fn residual_loss(
    params: &MlpParams,
    points: ArrayView2<f64>,
    delta_star: ArrayView2<f64>,
    alpha: f64,
    system: &PerturbedSystem,
) -> Result<f64> {
    if points.nrows() != delta_star.nrows() {
        return arg_err(format!(
            "{} residual points but {} disturbances",
            points.nrows(),
            delta_star.nrows()
        ));
    }
    if points.nrows() == 0 {
        return Ok(0.0);
    }
    let batch = LossBatch::new(
        system,
        Array2::zeros((0, system.state_dim())),
        points.to_owned(),
        delta_star.to_owned(),
        Array2::zeros((0, system.state_dim())),
        Array1::zeros(0),
        LossWeights {
            alpha,
            lambda_r: 1.0,
            lambda_d: 0.0,
        },
    )?;
    Ok(evaluate(params, &batch, false)?.0.residual)
}

/// Mean squared deviation from the anchor values.
pub fn data_loss(params: &MlpParams, points: ArrayView2<f64>, v_hat: &[f64]) -> Result<f64> {
    if points.nrows() != v_hat.len() {
        return arg_err(format!(
            "{} anchor points but {} anchor values",
            points.nrows(),
            v_hat.len()
        ));
    }
    check_anchor_values(v_hat.iter().copied())?;
    let v = params.forward_batch(points)?;
    Ok(ordered_mean(
        v.iter().zip(v_hat).map(|(a, b)| (a - b).powi(2)).collect(),
    ))
}

pub fn total_loss(params: &MlpParams, batch: &LossBatch) -> Result<LossTerms> {
    Ok(evaluate(params, batch, false)?.0)
}

/// Loss terms and the exact parameter gradient of `total`.
pub fn loss_and_gradient(params: &MlpParams, batch: &LossBatch) -> Result<(LossTerms, MlpParams)> {
    let (terms, grad) = evaluate(params, batch, true)?;
    Ok((terms, grad.expect("gradient requested")))
}

#[derive(Clone, Copy)]
enum Part {
    Boundary,
    Residual,
    Data,
}

struct ChunkOut {
    part: Part,
    terms: Vec<f64>,
    grad: Option<MlpParams>,
}

fn evaluate(
    params: &MlpParams,
    batch: &LossBatch,
    with_grad: bool,
) -> Result<(LossTerms, Option<MlpParams>)> {
    let n = params.input_dim();
    for pts in [&batch.boundary, &batch.residual, &batch.anchors] {
        if pts.nrows() > 0 && pts.ncols() != n {
            return arg_err(format!(
                "batch points have dimension {}, network expects {n}",
                pts.ncols()
            ));
        }
    }
    let LossWeights {
        alpha,
        lambda_r,
        lambda_d,
    } = batch.weights;

    // (part, global row range) work items; chunk boundaries are fixed so the
    // reduction order never depends on scheduling.
    let mut items: Vec<(Part, std::ops::Range<usize>)> = Vec::new();
    for (part, len) in [
        (Part::Boundary, batch.boundary.nrows()),
        (Part::Residual, batch.residual.nrows()),
        (Part::Data, batch.anchors.nrows()),
    ] {
        items.extend(chunk_ranges(len).into_iter().map(|r| (part, r)));
    }

    let mb = batch.boundary.nrows().max(1) as f64;
    let mr = batch.residual.nrows().max(1) as f64;
    let md = batch.anchors.nrows().max(1) as f64;

    let outs: Vec<ChunkOut> = par_map_ordered(&items, |(part, rows)| {
        let (part, rows) = (*part, rows.clone());
        let mut grad = with_grad.then(|| params.zeros_like());
        let terms = match part {
            Part::Boundary => {
                let pts = batch.boundary.slice(s![rows, ..]);
                let cache = ValueCache::forward(params, pts);
                if let Some(g) = grad.as_mut() {
                    let seeds = cache.values.mapv(|v| 2.0 * (v - 1.0) / mb);
                    cache.backward(params, &seeds, g);
                }
                cache.values.iter().map(|v| (v - 1.0).powi(2)).collect()
            }
            Part::Data => {
                let pts = batch.anchors.slice(s![rows.clone(), ..]);
                let target = batch.v_hat.slice(s![rows]);
                let cache = ValueCache::forward(params, pts);
                let diff = &cache.values - &target;
                if let Some(g) = grad.as_mut() {
                    let seeds = diff.mapv(|d| 2.0 * lambda_d * d / md);
                    cache.backward(params, &seeds, g);
                }
                diff.iter().map(|d| d * d).collect()
            }
            Part::Residual => {
                let pts = batch.residual.slice(s![rows.clone(), ..]);
                let flow = batch.flow.slice(s![rows.clone(), ..]);
                let cost = batch.cost.slice(s![rows]);
                let cache = DualCache::forward(params, pts, flow);
                let res: Array1<f64> = ndarray::Zip::from(&cache.directional)
                    .and(&cache.values)
                    .and(&cost)
                    .map_collect(|&d, &v, &c| d + alpha * (1.0 - v) * c);
                if let Some(g) = grad.as_mut() {
                    let dir_seeds = res.mapv(|r| 2.0 * lambda_r * r / mr);
                    let value_seeds = ndarray::Zip::from(&dir_seeds)
                        .and(&cost)
                        .map_collect(|&s, &c| -alpha * c * s);
                    cache.backward(params, &value_seeds, &dir_seeds, g);
                }
                res.iter().map(|r| r * r).collect()
            }
        };
        ChunkOut { part, terms, grad }
    });

    let mut boundary_terms = Vec::with_capacity(batch.boundary.nrows());
    let mut residual_terms = Vec::with_capacity(batch.residual.nrows());
    let mut data_terms = Vec::with_capacity(batch.anchors.nrows());
    let mut grad = with_grad.then(|| params.zeros_like());
    for out in outs {
        match out.part {
            Part::Boundary => boundary_terms.extend(out.terms),
            Part::Residual => residual_terms.extend(out.terms),
            Part::Data => data_terms.extend(out.terms),
        }
        if let (Some(g), Some(c)) = (grad.as_mut(), out.grad.as_ref()) {
            g.add_assign(c);
        }
    }

    let origin = Array2::zeros((1, n));
    let origin_cache = ValueCache::forward(params, origin.view());
    let v0 = origin_cache.values[0];
    if let Some(g) = grad.as_mut() {
        origin_cache.backward(params, &Array1::from(vec![2.0 * v0]), g);
    }

    let boundary = v0 * v0 + ordered_mean(boundary_terms);
    let residual = ordered_mean(residual_terms);
    let data = ordered_mean(data_terms);
    let terms = LossTerms {
        total: boundary + lambda_r * residual + lambda_d * data,
        boundary,
        residual,
        data,
    };
    Ok((terms, grad))
}
