//! Policy improvement: worst-case disturbances from the current network and
//! rollout estimates of the value function used as anchor labels.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::dynamics::PerturbedSystem;
use crate::error::{arg_err, Result, ZubovError};
use crate::net::{chunk_ranges, par_map_ordered, MlpParams};

/// `1 − e^{−αV}`; `V = +∞` maps to exactly 1.
pub fn kruzkov_transform(value: f64, alpha: f64) -> Result<f64> {
    if value.is_nan() || value < 0.0 {
        return arg_err(format!("maximal Lyapunov value must be ≥ 0, got {value}"));
    }
    if !(alpha > 0.0) {
        return arg_err(format!("alpha must be positive, got {alpha}"));
    }
    if value.is_infinite() {
        return Ok(1.0);
    }
    Ok(-(-alpha * value).exp_m1())
}

/// `∇v·f(x, δ) + α(1 − v)g(x, δ)`.
pub fn hamiltonian(
    system: &PerturbedSystem,
    x: &[f64],
    value: f64,
    grad: &[f64],
    delta: &[f64],
    alpha: f64,
) -> f64 {
    let mut f = vec![0.0; x.len()];
    system.rhs_into(x, delta, &mut f);
    let lie: f64 = grad.iter().zip(&f).map(|(g, f)| g * f).sum();
    lie + alpha * (1.0 - value) * system.cost(x, delta)
}

/// Maximizer of the Hamiltonian over the disturbance box given the value and
/// input gradient at `x`, written into `out`.
///
/// With a δ-independent cost the objective is affine in δ with coefficients
/// `cⱼ = ∇v·fⱼ(x)`, so the maximizer is the vertex picking `upperⱼ` when
/// `cⱼ ≥ 0` and `lowerⱼ` otherwise. Costs that use δ fall back to comparing
/// all box vertices.
pub fn bang_bang(
    system: &PerturbedSystem,
    x: &[f64],
    value: f64,
    grad: &[f64],
    alpha: f64,
    out: &mut [f64],
) {
    let bx = system.disturbance();
    if system.cost_fn().uses_disturbance() {
        let mut best = f64::NEG_INFINITY;
        for vertex in bx.vertices() {
            let h = hamiltonian(system, x, value, grad, &vertex, alpha);
            if h > best {
                best = h;
                out.copy_from_slice(&vertex);
            }
        }
        return;
    }
    let mut channel = vec![0.0; x.len()];
    for j in 0..bx.dim() {
        system.channel_into(j, x, &mut channel);
        let c: f64 = grad.iter().zip(&channel).map(|(g, f)| g * f).sum();
        out[j] = if c >= 0.0 { bx.upper()[j] } else { bx.lower()[j] };
    }
}

/// Worst-case disturbance at a single state under the current network.
pub fn optimal_disturbance(
    params: &MlpParams,
    system: &PerturbedSystem,
    x: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ZubovError::Numeric(format!("non-finite state {x:?}")));
    }
    let d = params.forward_with_input_grad(x)?;
    if !d.value.is_finite() || d.input_grad.iter().any(|g| !g.is_finite()) {
        return Err(ZubovError::Numeric(format!("non-finite network gradient at {x:?}")));
    }
    let mut out = vec![0.0; system.dist_dim()];
    bang_bang(system, x, d.value, &d.input_grad, alpha, &mut out);
    Ok(out)
}

/// States paired with their worst-case disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceAssignment {
    pub points: Array2<f64>,
    pub delta_star: Array2<f64>,
}

/// Worst-case disturbance at every row of `points`.
pub fn assign_disturbances(
    params: &MlpParams,
    system: &PerturbedSystem,
    points: ArrayView2<f64>,
    alpha: f64,
) -> Result<DisturbanceAssignment> {
    let (values, grads) = params.value_and_input_grad(points)?;
    if values.iter().chain(grads.iter()).any(|v| !v.is_finite()) {
        return Err(ZubovError::Numeric(
            "non-finite network output while computing disturbances".into(),
        ));
    }
    let mut delta_star = Array2::zeros((points.nrows(), system.dist_dim()));
    for i in 0..points.nrows() {
        let x = points.row(i).to_vec();
        let g = grads.row(i).to_vec();
        let mut out = vec![0.0; system.dist_dim()];
        bang_bang(system, &x, values[i], &g, alpha, &mut out);
        delta_star.row_mut(i).assign(&ArrayView1::from(&out));
    }
    Ok(DisturbanceAssignment {
        points: points.to_owned(),
        delta_star,
    })
}

/// Horizon and divergence guard of the rollout. `None` guards resolve to
/// `2 × max radius of Ω` and `20/α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub k_steps: usize,
    pub dt: f64,
    pub r_max: Option<f64>,
    pub v_cap: Option<f64>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            k_steps: 500,
            dt: 0.02,
            r_max: None,
            v_cap: None,
        }
    }
}

/// Rollout settings with every guard made explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSettings {
    pub k_steps: usize,
    pub dt: f64,
    pub r_max: f64,
    pub v_cap: f64,
    pub alpha: f64,
}

impl RolloutConfig {
    pub fn resolve(&self, domain_radius: f64, alpha: f64) -> Result<RolloutSettings> {
        let settings = RolloutSettings {
            k_steps: self.k_steps,
            dt: self.dt,
            r_max: self.r_max.unwrap_or(2.0 * domain_radius),
            v_cap: self.v_cap.unwrap_or(20.0 / alpha),
            alpha,
        };
        settings.validate()?;
        Ok(settings)
    }
}

impl RolloutSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k_steps < 1 {
            return arg_err("rollout needs k_steps ≥ 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return arg_err(format!("rollout dt must be positive, got {}", self.dt));
        }
        if !(self.r_max > 0.0 && self.v_cap > 0.0 && self.alpha > 0.0) {
            return arg_err("rollout guards and alpha must be positive");
        }
        Ok(())
    }
}

/// Euler trajectory with the disturbance applied at each step.
/// `deltas[k]` drives the step from `states[k]` to `states[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub states: Vec<Vec<f64>>,
    pub deltas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    /// Riemann sum `Σ_{k=0}^{K} ‖x_k‖² Δt`, or the cap when diverged.
    pub value: f64,
    pub diverged: bool,
    pub trace: RolloutTrace,
}

fn escaped(x: &[f64], r_max: f64) -> bool {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    !r2.is_finite() || r2 > r_max * r_max
}

/// Single rollout from `x0`, recomputing the worst-case disturbance from the
/// (frozen) network at every step.
pub fn rollout_value(
    params: &MlpParams,
    system: &PerturbedSystem,
    x0: &[f64],
    settings: &RolloutSettings,
) -> Result<RolloutOutcome> {
    settings.validate()?;
    if x0.len() != system.state_dim() {
        return arg_err(format!(
            "initial state has length {}, system expects {}",
            x0.len(),
            system.state_dim()
        ));
    }
    let n = system.state_dim();
    let mut trace = RolloutTrace {
        states: vec![x0.to_vec()],
        deltas: Vec::new(),
    };
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    let mut sum = 0.0;
    for k in 0..=settings.k_steps {
        if escaped(&x, settings.r_max) {
            return Ok(RolloutOutcome {
                value: settings.v_cap,
                diverged: true,
                trace,
            });
        }
        sum += x.iter().map(|v| v * v).sum::<f64>() * settings.dt;
        if k == settings.k_steps {
            break;
        }
        let d = match optimal_disturbance(params, system, &x, settings.alpha) {
            Ok(d) => d,
            Err(ZubovError::Numeric(_)) => {
                return Ok(RolloutOutcome {
                    value: settings.v_cap,
                    diverged: true,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        system.rhs_into(&x, &d, &mut f);
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi += fi * settings.dt;
        }
        trace.deltas.push(d);
        trace.states.push(x.clone());
    }
    Ok(RolloutOutcome {
        value: sum,
        diverged: false,
        trace,
    })
}

/// Rollout estimates at a set of states.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub points: Array2<f64>,
    /// Transformed values in `[0, 1]`; exactly 1 for diverged or capped rollouts.
    pub v_hat: Array1<f64>,
    /// Riemann sums, capped at `v_cap`.
    pub value: Array1<f64>,
    pub diverged: Vec<bool>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.v_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_hat.is_empty()
    }

    pub fn mean_v_hat(&self) -> f64 {
        self.v_hat.mean().unwrap_or(f64::NAN)
    }

    pub fn diverged_fraction(&self) -> f64 {
        if self.diverged.is_empty() {
            return f64::NAN;
        }
        self.diverged.iter().filter(|d| **d).count() as f64 / self.diverged.len() as f64
    }
}

/// Batched rollout of every row of `points`; chunks of trajectories advance
/// together so each step is one batched network evaluation.
pub fn build_anchor_set(
    params: &MlpParams,
    system: &PerturbedSystem,
    points: ArrayView2<f64>,
    settings: &RolloutSettings,
) -> Result<AnchorSet> {
    settings.validate()?;
    if points.ncols() != system.state_dim() || points.ncols() != params.input_dim() {
        return arg_err("anchor points do not match the system dimension");
    }
    let ranges = chunk_ranges(points.nrows());
    let parts: Vec<(Vec<f64>, Vec<bool>)> = par_map_ordered(&ranges, |r| {
        rollout_chunk(params, system, points.slice(s![r.clone(), ..]), settings)
    });
    let mut value = Vec::with_capacity(points.nrows());
    let mut diverged = Vec::with_capacity(points.nrows());
    for (v, d) in parts {
        value.extend(v);
        diverged.extend(d);
    }
    let mut v_hat = Vec::with_capacity(value.len());
    for (v, d) in value.iter_mut().zip(&diverged) {
        if *d || *v >= settings.v_cap {
            *v = v.min(settings.v_cap);
            v_hat.push(1.0);
        } else {
            v_hat.push(kruzkov_transform(*v, settings.alpha)?);
        }
    }
    Ok(AnchorSet {
        points: points.to_owned(),
        v_hat: Array1::from(v_hat),
        value: Array1::from(value),
        diverged,
    })
}

fn rollout_chunk(
    params: &MlpParams,
    system: &PerturbedSystem,
    start: ArrayView2<f64>,
    st: &RolloutSettings,
) -> (Vec<f64>, Vec<bool>) {
    let n = system.state_dim();
    let m = system.dist_dim();
    let count = start.nrows();
    let mut sums = vec![0.0; count];
    let mut diverged = vec![false; count];
    let mut states = start.to_owned();
    let mut active: Vec<usize> = (0..count).collect();
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; m];
    for k in 0..=st.k_steps {
        active.retain(|&i| {
            let x = states.row(i);
            let x = x.as_slice().expect("row-major");
            if escaped(x, st.r_max) {
                diverged[i] = true;
                sums[i] = st.v_cap;
                return false;
            }
            sums[i] += x.iter().map(|v| v * v).sum::<f64>() * st.dt;
            // Once the partial sum reaches the cap the outcome is fixed.
            sums[i] < st.v_cap
        });
        if k == st.k_steps || active.is_empty() {
            break;
        }
        let batch = states.select(ndarray::Axis(0), &active);
        let (values, grads) = params.value_and_input_grad_unchecked(batch.view());
        for (row, &i) in active.iter().enumerate() {
            let g = grads.row(row);
            let g = g.as_slice().expect("row-major");
            let v = values[row];
            let mut x = states.row_mut(i);
            let xs = x.as_slice_mut().expect("row-major");
            if !v.is_finite() || g.iter().any(|g| !g.is_finite()) {
                // treated like divergence on the next check
                xs.fill(f64::NAN);
                continue;
            }
            bang_bang(system, xs, v, g, st.alpha, &mut d);
            system.rhs_into(xs, &d, &mut f);
            for (xi, fi) in xs.iter_mut().zip(&f) {
                *xi += fi * st.dt;
            }
        }
    }
    (sums, diverged)
}
