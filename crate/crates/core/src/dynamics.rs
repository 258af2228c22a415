//! Perturbed ODE systems `ẋ = f(x, δ)` with disturbances in a box, stored
//! together with their affine decomposition `f(x, δ) = f₀(x) + Σⱼ δⱼ fⱼ(x)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{arg_err, Result, ZubovError};

/// Axis-aligned box of admissible disturbance values.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DisturbanceBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return arg_err("disturbance box needs at least one channel");
        }
        if lower.len() != upper.len() {
            return arg_err(format!(
                "disturbance bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            ));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return arg_err(format!("disturbance channel {j}: bounds [{lo}, {hi}] invalid"));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, delta: &[f64]) -> bool {
        delta.len() == self.dim()
            && delta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(d, (lo, hi))| *lo <= *d && *d <= *hi)
    }

    /// All `2^m` corners. Bit `j` of the vertex index selects the upper bound
    /// of channel `j`.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|j| {
                        if mask >> j & 1 == 1 {
                            self.upper[j]
                        } else {
                            self.lower[j]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Compact sampling region Ω; must contain the origin in its interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return arg_err(format!(
                "domain bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            ));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && *lo < 0.0 && 0.0 < *hi) {
                return arg_err(format!(
                    "domain axis {i}: [{lo}, {hi}] must be finite and contain 0 strictly inside"
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-half_width, half_width]^n`.
    pub fn cube(n: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; n], vec![half_width; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Largest Euclidean norm of a point in the box.
    pub fn max_radius(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo.abs().max(hi.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Right-hand side of a disturbance-affine system.
///
/// Implementations must satisfy `rhs = drift + Σⱼ δⱼ·channel(j)` and
/// `rhs(0, δ) = 0`. `rhs` is implemented independently of the decomposition
/// so the two can be checked against each other.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn dist_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], delta: &[f64], out: &mut [f64]);
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn channel(&self, j: usize, x: &[f64], out: &mut [f64]);
}

/// Running cost `g(x, δ) ≥ 0` with `g(0, δ) = 0`.
#[derive(Clone)]
pub enum Cost {
    /// `‖x‖²`, independent of the disturbance.
    SquaredNorm,
    /// Arbitrary cost; the flag tells consumers whether δ enters it.
    Custom {
        eval: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
        uses_disturbance: bool,
    },
}

impl Cost {
    pub fn eval(&self, x: &[f64], delta: &[f64]) -> f64 {
        match self {
            Cost::SquaredNorm => x.iter().map(|v| v * v).sum(),
            Cost::Custom { eval, .. } => eval(x, delta),
        }
    }

    pub fn uses_disturbance(&self) -> bool {
        matches!(
            self,
            Cost::Custom {
                uses_disturbance: true,
                ..
            }
        )
    }
}

impl fmt::Debug for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::SquaredNorm => f.write_str("SquaredNorm"),
            Cost::Custom {
                uses_disturbance, ..
            } => write!(f, "Custom {{ uses_disturbance: {uses_disturbance} }}"),
        }
    }
}

/// A perturbed system together with its disturbance box, running cost and
/// default sampling region.
#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    name: String,
    dynamics: Arc<dyn Dynamics>,
    disturbance: DisturbanceBox,
    domain: Domain,
    cost: Cost,
}

impl PerturbedSystem {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics>,
        disturbance: DisturbanceBox,
        domain: Domain,
        cost: Cost,
    ) -> Result<Self> {
        if disturbance.dim() != dynamics.dist_dim() {
            return arg_err(format!(
                "dynamics expect {} disturbance channels, box has {}",
                dynamics.dist_dim(),
                disturbance.dim()
            ));
        }
        if domain.dim() != dynamics.state_dim() {
            return arg_err(format!(
                "dynamics have state dimension {}, domain has {}",
                dynamics.state_dim(),
                domain.dim()
            ));
        }
        Ok(Self {
            name: name.into(),
            dynamics,
            disturbance,
            domain,
            cost,
        })
    }

    /// Looks up a benchmark by its CLI name: `vdp`, `pendulum`,
    /// `product<n>` or `linear<n>`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "vdp" => Ok(make_van_der_pol()),
            "pendulum" => Ok(make_inverted_pendulum()),
            _ => {
                if let Some(n) = name.strip_prefix("product") {
                    make_product_system(parse_dim(name, n)?)
                } else if let Some(n) = name.strip_prefix("linear") {
                    make_linear_decay(parse_dim(name, n)?)
                } else {
                    arg_err(format!("unknown system `{name}`"))
                }
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn dist_dim(&self) -> usize {
        self.disturbance.dim()
    }

    pub fn disturbance(&self) -> &DisturbanceBox {
        &self.disturbance
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn cost_fn(&self) -> &Cost {
        &self.cost
    }

    /// Same system with a different default sampling region.
    pub fn with_domain(mut self, domain: Domain) -> Result<Self> {
        if domain.dim() != self.state_dim() {
            return arg_err(format!(
                "domain dimension {} does not match state dimension {}",
                domain.dim(),
                self.state_dim()
            ));
        }
        self.domain = domain;
        Ok(self)
    }

    /// Checked evaluation of `f(x, δ)`.
    pub fn rhs(&self, x: &[f64], delta: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, delta)?;
        let mut out = vec![0.0; self.state_dim()];
        self.rhs_into(x, delta, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ZubovError::Numeric(format!(
                "{}: non-finite derivative at x = {x:?}, δ = {delta:?}",
                self.name
            )));
        }
        Ok(out)
    }

    /// Unchecked evaluation for hot loops; dimensions are the caller's job.
    #[inline]
    pub fn rhs_into(&self, x: &[f64], delta: &[f64], out: &mut [f64]) {
        self.dynamics.rhs(x, delta, out);
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.dynamics.drift(x, &mut out);
        out
    }

    pub fn channels(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.dist_dim())
            .map(|j| {
                let mut out = vec![0.0; self.state_dim()];
                self.dynamics.channel(j, x, &mut out);
                out
            })
            .collect()
    }

    #[inline]
    pub fn channel_into(&self, j: usize, x: &[f64], out: &mut [f64]) {
        self.dynamics.channel(j, x, out);
    }

    #[inline]
    pub fn cost(&self, x: &[f64], delta: &[f64]) -> f64 {
        self.cost.eval(x, delta)
    }

    fn check_dims(&self, x: &[f64], delta: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return arg_err(format!(
                "state has length {}, system `{}` expects {}",
                x.len(),
                self.name,
                self.state_dim()
            ));
        }
        if delta.len() != self.dist_dim() {
            return arg_err(format!(
                "disturbance has length {}, system `{}` expects {}",
                delta.len(),
                self.name,
                self.dist_dim()
            ));
        }
        Ok(())
    }
}

fn parse_dim(name: &str, digits: &str) -> Result<usize> {
    digits
        .parse::<usize>()
        .map_err(|_| ZubovError::Argument(format!("bad dimension in system name `{name}`")))
}

/// Van der Pol in reverse time with multiplicative disturbances:
/// `ẋ₁ = −x₂ + δ₁x₁`, `ẋ₂ = x₁ − (1 − x₁²)x₂ + δ₂x₂`.
#[derive(Debug, Clone, Copy)]
pub struct VanDerPol;

impl Dynamics for VanDerPol {
    fn state_dim(&self) -> usize {
        2
    }
    fn dist_dim(&self) -> usize {
        2
    }
    fn rhs(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        out[0] = -x[1] + d[0] * x[0];
        out[1] = x[0] - (1.0 - x[0] * x[0]) * x[1] + d[1] * x[1];
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[1];
        out[1] = x[0] - (1.0 - x[0] * x[0]) * x[1];
    }
    fn channel(&self, j: usize, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[j] = x[j];
    }
}

pub fn make_van_der_pol() -> PerturbedSystem {
    PerturbedSystem::new(
        "vdp",
        Arc::new(VanDerPol),
        DisturbanceBox::new(vec![-0.3, -0.1], vec![0.3, 0.1]).expect("static box"),
        Domain::cube(2, 3.0).expect("static domain"),
        Cost::SquaredNorm,
    )
    .expect("static system")
}

/// Pendulum closed under `u = −10.2x₁ − 0.5x₂ + δ₁x₁ + δ₂x₂`.
///
/// The first equation is `ẋ₁ = −x₂` exactly as published; with this sign the
/// linearization at the origin is a saddle.
#[derive(Debug, Clone, Copy)]
pub struct InvertedPendulum {
    pub gravity: f64,
    pub length: f64,
    pub damping: f64,
    pub mass: f64,
}

impl Default for InvertedPendulum {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            length: 1.0,
            damping: 0.1,
            mass: 1.0,
        }
    }
}

impl InvertedPendulum {
    const K1: f64 = 10.2;
    const K2: f64 = 0.5;

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }
}

impl Dynamics for InvertedPendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn dist_dim(&self) -> usize {
        2
    }
    fn rhs(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        let u = -Self::K1 * x[0] - Self::K2 * x[1] + d[0] * x[0] + d[1] * x[1];
        let ml2 = self.inertia();
        out[0] = -x[1];
        out[1] = self.gravity / self.length * x[0].sin() - self.damping / ml2 * x[1] + u / ml2;
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let ml2 = self.inertia();
        out[0] = -x[1];
        out[1] = self.gravity / self.length * x[0].sin() - self.damping / ml2 * x[1]
            + (-Self::K1 * x[0] - Self::K2 * x[1]) / ml2;
    }
    fn channel(&self, j: usize, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = x[j] / self.inertia();
    }
}

pub fn make_inverted_pendulum() -> PerturbedSystem {
    let pi = std::f64::consts::PI;
    PerturbedSystem::new(
        "pendulum",
        Arc::new(InvertedPendulum::default()),
        DisturbanceBox::new(vec![-0.3, -0.2], vec![0.3, 0.2]).expect("static box"),
        Domain::cube(2, pi).expect("static domain"),
        Cost::SquaredNorm,
    )
    .expect("static system")
}

/// `ẋᵢ = −xᵢ + δxᵢ²` with one shared scalar disturbance `δ ∈ [−1, 1]`.
/// The robust region of attraction is exactly `[−1, 1]ⁿ`.
#[derive(Debug, Clone, Copy)]
pub struct ProductSystem {
    pub dim: usize,
}

impl Dynamics for ProductSystem {
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn dist_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -xi + d[0] * xi * xi;
        }
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -xi;
        }
    }
    fn channel(&self, _j: usize, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = xi * xi;
        }
    }
}

pub fn make_product_system(n: usize) -> Result<PerturbedSystem> {
    if n == 0 {
        return arg_err("product system needs n ≥ 1");
    }
    PerturbedSystem::new(
        format!("product{n}"),
        Arc::new(ProductSystem { dim: n }),
        DisturbanceBox::new(vec![-1.0], vec![1.0])?,
        Domain::cube(n, 1.5)?,
        Cost::SquaredNorm,
    )
}

/// `ẋ = −x` with an inert disturbance channel (box `[0, 0]`). Its maximal
/// Lyapunov function for `g = ‖x‖²` is `‖x‖²/2`, which makes it the
/// closed-form reference for the grid solver.
#[derive(Debug, Clone, Copy)]
pub struct LinearDecay {
    pub dim: usize,
}

impl Dynamics for LinearDecay {
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn dist_dim(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], _d: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -xi;
        }
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.rhs(x, &[0.0], out);
    }
    fn channel(&self, _j: usize, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

pub fn make_linear_decay(n: usize) -> Result<PerturbedSystem> {
    if n == 0 {
        return arg_err("linear system needs n ≥ 1");
    }
    PerturbedSystem::new(
        format!("linear{n}"),
        Arc::new(LinearDecay { dim: n }),
        DisturbanceBox::new(vec![0.0], vec![0.0])?,
        Domain::cube(n, 2.0)?,
        Cost::SquaredNorm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn benchmarks() -> Vec<PerturbedSystem> {
        vec![
            make_van_der_pol(),
            make_inverted_pendulum(),
            make_product_system(10).unwrap(),
            make_product_system(1).unwrap(),
        ]
    }

    fn random_in(rng: &mut Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
        lo.iter().zip(hi).map(|(l, h)| rng.uniform(*l, *h)).collect()
    }

    #[test]
    fn van_der_pol_values() {
        let s = make_van_der_pol();
        assert_eq!(s.rhs(&[0.0, 0.0], &[0.3, 0.1]).unwrap(), vec![0.0, 0.0]);
        let f = s.rhs(&[1.0, 0.0], &[0.3, 0.1]).unwrap();
        assert!((f[0] - 0.3).abs() < 1e-15 && (f[1] - 1.0).abs() < 1e-15);
        assert_eq!(s.disturbance().lower(), &[-0.3, -0.1]);
        assert_eq!(s.disturbance().upper(), &[0.3, 0.1]);
        assert_eq!(s.drift(&[1.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(s.channels(&[2.0, 3.0]), vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
    }

    #[test]
    fn pendulum_values() {
        let s = make_inverted_pendulum();
        assert_eq!(s.rhs(&[0.0, 0.0], &[-0.3, 0.2]).unwrap(), vec![0.0, 0.0]);
        let d = s.drift(&[1.0, 0.0]);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - (9.81 * 1f64.sin() - 10.2)).abs() < 1e-12);
        assert_eq!(s.disturbance().lower(), &[-0.3, -0.2]);
        assert_eq!(s.disturbance().upper(), &[0.3, 0.2]);
        let pi = std::f64::consts::PI;
        assert_eq!(s.domain().upper(), &[pi, pi]);
    }

    #[test]
    fn product_values() {
        let s10 = make_product_system(10).unwrap();
        assert_eq!(s10.domain().lower(), &[-1.5; 10]);
        assert_eq!(s10.domain().upper(), &[1.5; 10]);
        let f = s10.rhs(&[0.5; 10], &[1.0]).unwrap();
        assert!(f.iter().all(|v| (*v + 0.25).abs() < 1e-15));
        let s1 = make_product_system(1).unwrap();
        assert_eq!(s1.rhs(&[0.5], &[1.0]).unwrap(), vec![-0.25]);
        let s2 = make_product_system(2).unwrap();
        assert_eq!(s2.rhs(&[1.0, 1.0], &[1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(make_product_system(0).is_err());
    }

    #[test]
    fn names_resolve() {
        assert_eq!(PerturbedSystem::from_name("vdp").unwrap().state_dim(), 2);
        assert_eq!(PerturbedSystem::from_name("product6").unwrap().state_dim(), 6);
        assert_eq!(PerturbedSystem::from_name("linear2").unwrap().name(), "linear2");
        assert!(PerturbedSystem::from_name("product").is_err());
        assert!(PerturbedSystem::from_name("lorenz").is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let s = make_van_der_pol();
        assert!(matches!(
            s.rhs(&[1.0], &[0.0, 0.0]),
            Err(ZubovError::Argument(_))
        ));
        assert!(matches!(
            s.rhs(&[1.0, 0.0], &[0.0]),
            Err(ZubovError::Argument(_))
        ));
    }

    #[test]
    fn non_finite_output_is_a_numeric_error() {
        let s = make_van_der_pol();
        assert!(matches!(
            s.rhs(&[f64::INFINITY, 1.0], &[0.0, 0.0]),
            Err(ZubovError::Numeric(_))
        ));
    }

    #[test]
    fn equilibrium_at_origin_for_every_disturbance() {
        let mut rng = Rng::new(11);
        for s in benchmarks() {
            let zero = vec![0.0; s.state_dim()];
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let d = random_in(&mut rng, s.disturbance().lower(), s.disturbance().upper());
                let f = s.rhs(&zero, &d).unwrap();
                worst = worst.max(f.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            assert_eq!(worst, 0.0, "{}", s.name());
        }
    }

    #[test]
    fn affine_decomposition_is_consistent() {
        let mut rng = Rng::new(12);
        for s in benchmarks() {
            for _ in 0..1000 {
                let x = random_in(&mut rng, s.domain().lower(), s.domain().upper());
                let d = random_in(&mut rng, s.disturbance().lower(), s.disturbance().upper());
                let f = s.rhs(&x, &d).unwrap();
                let mut g = s.drift(&x);
                for (dj, ch) in d.iter().zip(s.channels(&x)) {
                    for (gi, ci) in g.iter_mut().zip(ch) {
                        *gi += dj * ci;
                    }
                }
                for (a, b) in f.iter().zip(&g) {
                    assert!((a - b).abs() <= 1e-12, "{}: {a} vs {b}", s.name());
                }
            }
        }
    }

    #[test]
    fn cost_is_positive_away_from_origin() {
        let mut rng = Rng::new(13);
        for s in benchmarks() {
            let n = s.state_dim();
            let d = s.disturbance().upper().to_vec();
            assert_eq!(s.cost(&vec![0.0; n], &d), 0.0);
            for _ in 0..100 {
                let x = random_in(&mut rng, s.domain().lower(), s.domain().upper());
                assert!(s.cost(&x, &d) > 0.0);
            }
        }
    }

    #[test]
    fn box_validation() {
        assert!(DisturbanceBox::new(vec![], vec![]).is_err());
        assert!(DisturbanceBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(DisturbanceBox::new(vec![0.0], vec![0.0]).is_ok());
        assert!(Domain::new(vec![0.0], vec![1.0]).is_err());
        let b = DisturbanceBox::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.vertices().len(), 4);
        assert_eq!(b.vertices()[3], vec![1.0, 2.0]);
    }
}
