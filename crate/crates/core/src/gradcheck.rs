//! Central-difference checks of the analytic gradients.
//!
//! The reference derivatives here only ever call [`MlpParams::forward`] and
//! [`total_loss`]; they never touch the reverse sweeps they are checking.

use ndarray::{Array1, Array2};

use crate::dynamics::{make_inverted_pendulum, make_product_system, make_van_der_pol, PerturbedSystem};
use crate::error::Result;
use crate::losses::{loss_and_gradient, total_loss, LossBatch, LossWeights};
use crate::net::MlpParams;
use crate::rng::Rng;

pub const INPUT_STEP: f64 = 1e-5;
pub const PARAM_STEP: f64 = 1e-6;
pub const INPUT_THRESHOLD: f64 = 1e-5;
pub const PARAM_THRESHOLD: f64 = 1e-4;

/// Entries smaller than this are compared in absolute rather than relative
/// terms; central differences cannot resolve relative error below it.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / analytic.abs().max(reference.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| relative_error(*a, *r))
        .fold(0.0, f64::max)
}

/// `∂v/∂x` by central differences.
pub fn input_grad_fd(params: &MlpParams, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = params.forward(&xp)?;
        xp[i] = x[i] - h;
        let fm = params.forward(&xp)?;
        xp[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Gradient of the total loss with respect to the flattened parameters.
pub fn loss_grad_fd(params: &MlpParams, batch: &LossBatch, h: f64) -> Result<Vec<f64>> {
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat(&flat)?;
        let lp = total_loss(&probe, batch)?.total;
        flat[i] = base[i] - h;
        probe.set_flat(&flat)?;
        let lm = total_loss(&probe, batch)?.total;
        flat[i] = base[i];
        out.push((lp - lm) / (2.0 * h));
    }
    Ok(out)
}

fn random_net(rng: &mut Rng, n: usize) -> Result<MlpParams> {
    let width = 2 + (rng.next_u64() % 6) as usize;
    let depth = 2 + (rng.next_u64() % 3) as usize;
    let mut p = MlpParams::init(rng.next_u64(), n, width, depth)?;
    // nonzero biases so every bias path is exercised
    let mut flat = p.to_flat();
    for v in flat.iter_mut() {
        if *v == 0.0 {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    p.set_flat(&flat)?;
    Ok(p)
}

fn random_points(rng: &mut Rng, system: &PerturbedSystem, count: usize) -> Array2<f64> {
    let d = system.domain();
    Array2::from_shape_fn((count, system.state_dim()), |(_, j)| {
        rng.uniform(d.lower()[j], d.upper()[j])
    })
}

/// Worst relative error of the input gradient over `cases` random
/// networks and points.
pub fn input_gradient_suite(seed: u64, cases: usize) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = 1 + (rng.next_u64() % 4) as usize;
        let p = random_net(&mut rng, n)?;
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let analytic = p.forward_with_input_grad(&x)?.input_grad;
        let reference = input_grad_fd(&p, &x, INPUT_STEP)?;
        worst = worst.max(max_relative_error(&analytic, &reference));
    }
    Ok(worst)
}

/// A random batch on `system` with bang-bang δ* and anchor values in [0, 1].
pub fn random_batch(
    rng: &mut Rng,
    system: &PerturbedSystem,
    sizes: (usize, usize, usize),
    weights: LossWeights,
) -> Result<LossBatch> {
    let (mb, mr, md) = sizes;
    let boundary = random_points(rng, system, mb);
    let residual = random_points(rng, system, mr);
    let bx = system.disturbance();
    let delta = Array2::from_shape_fn((mr, system.dist_dim()), |(_, j)| {
        if rng.next_u64() & 1 == 1 {
            bx.upper()[j]
        } else {
            bx.lower()[j]
        }
    });
    let anchors = random_points(rng, system, md);
    let v_hat = Array1::from_shape_simple_fn(md, || rng.unit());
    LossBatch::new(system, boundary, residual, delta, anchors, v_hat, weights)
}

/// Worst relative error of the full loss gradient over `cases` random small
/// configurations, always with `λ_r > 0` so the second-order residual path
/// is exercised.
pub fn parameter_gradient_suite(seed: u64, cases: usize) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let systems = [
        make_van_der_pol(),
        make_inverted_pendulum(),
        make_product_system(2)?,
        make_product_system(3)?,
    ];
    let mut worst = 0.0f64;
    for case in 0..cases {
        let system = &systems[case % systems.len()];
        let p = random_net(&mut rng, system.state_dim())?;
        let weights = LossWeights {
            alpha: 0.5,
            lambda_r: rng.uniform(0.5, 2.0),
            lambda_d: if case % 3 == 0 { 0.0 } else { rng.uniform(1.0, 10.0) },
        };
        let sizes = (
            1 + (rng.next_u64() % 4) as usize,
            1 + (rng.next_u64() % 5) as usize,
            1 + (rng.next_u64() % 4) as usize,
        );
        let batch = random_batch(&mut rng, system, sizes, weights)?;
        let analytic = loss_and_gradient(&p, &batch)?.1.to_flat();
        let reference = loss_grad_fd(&p, &batch, PARAM_STEP)?;
        worst = worst.max(max_relative_error(&analytic, &reference));
    }
    Ok(worst)
}
