//! Seeded uniform sampling of the domain interior and boundary.

use ndarray::Array2;

use crate::dynamics::Domain;
use crate::error::{arg_err, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Interior,
    Boundary,
    Anchor,
}

/// Sampled states, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub kind: SampleKind,
    pub points: Array2<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

/// `count` i.i.d. points uniform in the open box.
pub fn sample_interior(domain: &Domain, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return arg_err("interior sample count must be ≥ 1");
    }
    let mut rng = Rng::new(seed);
    let (lo, hi) = (domain.lower(), domain.upper());
    let points = Array2::from_shape_fn((count, domain.dim()), |(_, j)| {
        rng.open_uniform(lo[j], hi[j])
    });
    Ok(SampleSet {
        kind: SampleKind::Interior,
        points,
    })
}

/// Interior sample tagged as anchor points.
pub fn sample_anchors(domain: &Domain, count: usize, seed: u64) -> Result<SampleSet> {
    let mut s = sample_interior(domain, count, seed)?;
    s.kind = SampleKind::Anchor;
    Ok(s)
}

/// `count` points uniform on the box surface. Face `2i` is `xᵢ = lowerᵢ`,
/// face `2i + 1` is `xᵢ = upperᵢ`; each is chosen with probability
/// proportional to its `(n−1)`-dimensional area. In one dimension the two
/// faces are points and are equally likely.
pub fn sample_boundary(domain: &Domain, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return arg_err("boundary sample count must be ≥ 1");
    }
    let n = domain.dim();
    let (lo, hi) = (domain.lower(), domain.upper());
    let sides: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
    let mut cumulative = Vec::with_capacity(2 * n);
    let mut acc = 0.0;
    for i in 0..n {
        let area: f64 = (0..n).filter(|&j| j != i).map(|j| sides[j]).product();
        for _ in 0..2 {
            acc += area;
            cumulative.push(acc);
        }
    }
    let mut rng = Rng::new(seed);
    let mut points = Array2::zeros((count, n));
    for mut row in points.rows_mut() {
        let u = rng.unit() * acc;
        let face = cumulative.partition_point(|&c| c <= u).min(2 * n - 1);
        let axis = face / 2;
        for j in 0..n {
            row[j] = if j == axis {
                if face % 2 == 0 {
                    lo[j]
                } else {
                    hi[j]
                }
            } else {
                rng.uniform(lo[j], hi[j])
            };
        }
    }
    Ok(SampleSet {
        kind: SampleKind::Boundary,
        points,
    })
}
