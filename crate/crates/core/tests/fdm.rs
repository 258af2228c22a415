use zubov::contour::extract_contour;
use zubov::dynamics::PerturbedSystem;
use zubov::fdm::{solve_fdm, FdmConfig};
use zubov::grid::ValueGrid;

fn solve(name: &str, cfg: FdmConfig) -> ValueGrid {
    let sys = PerturbedSystem::from_name(name).unwrap();
    solve_fdm(&sys, &cfg).unwrap().grid
}

#[test]
fn sweeps_are_monotone_nodewise() {
    let cfg = |k| FdmConfig {
        resolution: 61,
        max_sweeps: k,
        ..FdmConfig::default()
    };
    let mut prev = solve("vdp", cfg(1));
    for k in [2, 5, 20, 80] {
        let next = solve("vdp", cfg(k));
        for (a, b) in prev.values.iter().zip(&next.values) {
            assert!(b >= a, "value decreased from {a} to {b}");
        }
        prev = next;
    }
    let out = solve_fdm(&PerturbedSystem::from_name("vdp").unwrap(), &cfg(5000)).unwrap();
    assert!(out.grid.meta.converged);
    assert!(out.sweep_changes.iter().all(|c| (0.0..=1.0).contains(c)));
    assert_eq!(out.grid.meta.clamped, 0);
}

/// For the benchmarks each disturbance moves the foot along one axis (or
/// along x ⊙ x for the product system). Where all candidate feet share a
/// cell the update is bilinear in δ, so a dense δ grid cannot beat the
/// vertices.
#[test]
fn vertex_maximum_matches_dense_disturbance_grid() {
    let sys = PerturbedSystem::from_name("vdp").unwrap();
    let grid = solve("vdp", FdmConfig {
        resolution: 81,
        ..FdmConfig::default()
    });
    let alpha = 0.5;
    let dx = grid.axes[0].spacing();
    let bx = sys.disturbance();
    let mut rng = zubov::rng::Rng::new(1);
    let mut checked = 0;
    while checked < 200 {
        let i = 1 + (rng.next_u64() % 79) as usize;
        let j = 1 + (rng.next_u64() % 79) as usize;
        let x = grid.node(i, j);
        let speed = sys
            .disturbance()
            .vertices()
            .iter()
            .map(|v| {
                let f = sys.rhs(&x, v).unwrap();
                f[0].hypot(f[1])
            })
            .fold(0.0, f64::max);
        let h = (0.5 * dx / speed).min(0.05);
        let update = |d: &[f64]| {
            let f = sys.rhs(&x, d).unwrap();
            let foot = [x[0] + h * f[0], x[1] + h * f[1]];
            1.0 - (-alpha * sys.cost(&x, d) * h).exp() * (1.0 - grid.interpolate(foot))
        };
        let cell_of = |d: &[f64]| {
            let f = sys.rhs(&x, d).unwrap();
            let foot = [x[0] + h * f[0], x[1] + h * f[1]];
            (
                ((foot[0] - grid.axes[0].lo) / dx).floor() as i64,
                ((foot[1] - grid.axes[1].lo) / dx).floor() as i64,
            )
        };
        let verts = bx.vertices();
        let c0 = cell_of(&verts[0]);
        if verts.iter().any(|v| cell_of(v) != c0) {
            continue;
        }
        checked += 1;
        let at_vertices = verts.iter().map(|v| update(v)).fold(f64::NEG_INFINITY, f64::max);
        let mut dense = f64::NEG_INFINITY;
        for a in 0..=20 {
            for b in 0..=20 {
                let d = [
                    bx.lower()[0] + (bx.upper()[0] - bx.lower()[0]) * a as f64 / 20.0,
                    bx.lower()[1] + (bx.upper()[1] - bx.lower()[1]) * b as f64 / 20.0,
                ];
                dense = dense.max(update(&d));
            }
        }
        assert!(dense <= at_vertices + 1e-10, "{dense} > {at_vertices}");
    }
}

#[test]
fn product_level_set_is_the_unit_square() {
    let g = solve("product2", FdmConfig::default());
    let c = extract_contour(&g, 0.9).unwrap();
    assert_eq!(c.polylines.len(), 1);
    assert!(c.polylines[0].closed);
    for p in c.points() {
        let d = if p[0].abs() <= 1.0 && p[1].abs() <= 1.0 {
            (1.0 - p[0].abs()).min(1.0 - p[1].abs())
        } else {
            (p[0].abs() - 1.0).max(0.0).hypot((p[1].abs() - 1.0).max(0.0))
        };
        assert!(d <= 0.1, "{p:?} is {d} from the square");
    }
}

#[test]
fn van_der_pol_level_set_encloses_origin() {
    let g = solve("vdp", FdmConfig::default());
    assert_eq!(g.value(100, 100), 0.0);
    assert!(g.values.iter().all(|v| (0.0..=1.0).contains(v)));
    let c = extract_contour(&g, 0.9).unwrap();
    let closed: Vec<_> = c.polylines.iter().filter(|p| p.closed).collect();
    assert_eq!(closed.len(), 1);
    // Contained strictly inside Ω and surrounding the origin (winding test).
    let pts = &closed[0].points;
    assert!(pts.iter().all(|p| p[0].abs() < 3.0 && p[1].abs() < 3.0));
    let mut winding = 0.0;
    for k in 0..pts.len() {
        let (a, b) = (pts[k], pts[(k + 1) % pts.len()]);
        let mut d = b[1].atan2(b[0]) - a[1].atan2(a[0]);
        if d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        winding += d;
    }
    assert!((winding.abs() - 2.0 * std::f64::consts::PI).abs() < 1e-6);
}
