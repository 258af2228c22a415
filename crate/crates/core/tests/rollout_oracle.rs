use ndarray::{array, Array2};

use zubov::dynamics::make_product_system;
use zubov::net::MlpParams;
use zubov::rollout::{build_anchor_set, hamiltonian, rollout_value, RolloutConfig};

/// 1-d network with v′(x) > 0 for x > 0 and v′(x) < 0 for x < 0.
fn bowl() -> MlpParams {
    MlpParams::from_layers(
        vec![array![[4.0], [-4.0]], array![[1.0, 1.0]]],
        vec![array![-2.0, -2.0], array![0.0]],
    )
    .unwrap()
}

/// `∫₀^T x² dt` along `ẋ = −x + δx²`, Euler with a tiny step.
fn dense_integral(x0: f64, delta: f64) -> f64 {
    let (dt, steps) = (1e-4, 400_000);
    let mut x = x0;
    let mut v = 0.0;
    for _ in 0..steps {
        v += x * x * dt;
        x += (-x + delta * x * x) * dt;
    }
    v
}

#[test]
fn product_rollout_matches_dense_integration() {
    let sys = make_product_system(1).unwrap();
    let settings = RolloutConfig::default().resolve(1.5, 0.5).unwrap();
    let out = rollout_value(&bowl(), &sys, &[0.5], &settings).unwrap();
    assert!(!out.diverged);
    assert!(out.trace.deltas.iter().all(|d| d[0] == 1.0));
    let oracle = dense_integral(0.5, 1.0);
    let rel = (out.value - oracle).abs() / oracle;
    assert!(rel <= 0.02, "rollout {} vs oracle {oracle} ({rel})", out.value);
}

#[test]
fn anchor_values_grow_away_from_origin() {
    let sys = make_product_system(1).unwrap();
    let settings = RolloutConfig::default().resolve(1.5, 0.5).unwrap();
    let pts = Array2::from_shape_vec((4, 1), vec![0.2, 0.6, 1.2, 0.0]).unwrap();
    let set = build_anchor_set(&bowl(), &sys, pts.view(), &settings).unwrap();
    assert_eq!(set.len(), 4);
    let v = &set.v_hat;
    assert!(v[0] <= v[1] && v[1] <= v[2]);
    assert_eq!(v[2], 1.0);
    assert!(set.diverged[2]);
    assert_eq!(v[3], 0.0);
}

/// The transformed worst-case value makes the Hamiltonian vanish. V comes
/// from dense integration under the worst case (δ = 1 for x > 0, δ = −1 for
/// x < 0) and ∇v from central differences of it.
#[test]
fn exact_value_solves_the_equation() {
    let sys = make_product_system(1).unwrap();
    let alpha = 0.5;
    let v_of = |x: f64| {
        let delta = if x >= 0.0 { 1.0 } else { -1.0 };
        1.0 - (-alpha * dense_integral(x, delta)).exp()
    };
    let h = 1e-3;
    for k in 1..=8 {
        for x in [0.1 * k as f64, -0.1 * k as f64] {
            let v = v_of(x);
            let grad = (v_of(x + h) - v_of(x - h)) / (2.0 * h);
            let delta = if x > 0.0 { 1.0 } else { -1.0 };
            let r = hamiltonian(&sys, &[x], v, &[grad], &[delta], alpha);
            assert!(r.abs() <= 1e-3, "residual {r} at {x}");
        }
    }
}
