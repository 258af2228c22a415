//! Regular 2-D grids of scalar values, possibly a slice through a
//! higher-dimensional state space.
//!
//! Node `(i, j)` sits at `(axis0.coord(i), axis1.coord(j))` and its value is
//! stored at `values[i * axis1.res + j]` (row-major, axis 0 slowest).

use ndarray::Array2;

use crate::dynamics::Domain;
use crate::error::{arg_err, Result};
use crate::net::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    /// State coordinate this axis spans.
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub res: usize,
}

impl GridAxis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.res - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.res {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }
}

/// Which two state coordinates a grid spans and where the others are pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    pub axes: (usize, usize),
    /// Full state vector supplying the pinned coordinates; entries on the
    /// two grid axes are ignored.
    pub base: Vec<f64>,
}

impl SliceSpec {
    /// The `(x₀, x₁)` plane of a 2-D system.
    pub fn plane() -> Self {
        Self {
            axes: (0, 1),
            base: vec![0.0, 0.0],
        }
    }

    /// Coordinates `a` and `b` free, every other coordinate zero.
    pub fn through_origin(n: usize, a: usize, b: usize) -> Self {
        Self {
            axes: (a, b),
            base: vec![0.0; n],
        }
    }
}

/// Provenance attached to a grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridMeta {
    pub source: String,
    pub system: String,
    pub alpha: Option<f64>,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub axes: [GridAxis; 2],
    pub base: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: GridMeta,
}

impl ValueGrid {
    pub fn new(axes: [GridAxis; 2], base: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        for a in &axes {
            if a.res < 2 {
                return arg_err(format!("grid resolution {} < 2", a.res));
            }
            if !(a.lo < a.hi) {
                return arg_err(format!("grid axis [{}, {}] is empty", a.lo, a.hi));
            }
        }
        if values.len() != axes[0].res * axes[1].res {
            return arg_err(format!(
                "{} values for a {}×{} grid",
                values.len(),
                axes[0].res,
                axes[1].res
            ));
        }
        Ok(Self {
            axes,
            base,
            values,
            meta: GridMeta::default(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axes[0].res, self.axes[1].res)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.axes[1].res + j
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.index(i, j)]
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.axes[0].coord(i), self.axes[1].coord(j)]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| self.axes[k].lo <= p[k] && p[k] <= self.axes[k].hi)
    }

    /// Node closest to the point `p` (grid coordinates).
    pub fn nearest_node(&self, p: [f64; 2]) -> (usize, usize) {
        let idx = |k: usize| {
            let a = &self.axes[k];
            (((p[k] - a.lo) / a.spacing()).round().max(0.0) as usize).min(a.res - 1)
        };
        (idx(0), idx(1))
    }

    /// Bilinear interpolation inside the grid, exactly 1 outside.
    pub fn interpolate(&self, p: [f64; 2]) -> f64 {
        if !self.contains(p) {
            return 1.0;
        }
        let (i, ti) = cell(&self.axes[0], p[0]);
        let (j, tj) = cell(&self.axes[1], p[1]);
        let v00 = self.value(i, j);
        let v10 = self.value(i + 1, j);
        let v01 = self.value(i, j + 1);
        let v11 = self.value(i + 1, j + 1);
        (1.0 - ti) * ((1.0 - tj) * v00 + tj * v01) + ti * ((1.0 - tj) * v10 + tj * v11)
    }

    /// `(res0, res1)` array view of the values.
    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec(self.shape(), self.values.clone()).expect("consistent shape")
    }

    pub fn same_geometry(&self, other: &ValueGrid) -> bool {
        self.axes == other.axes
    }

    /// `self − other` on identical geometry.
    pub fn difference(&self, other: &ValueGrid) -> Result<ValueGrid> {
        if !self.same_geometry(other) {
            return arg_err("grids have different geometry");
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let mut g = ValueGrid::new(self.axes, self.base.clone(), values)?;
        g.meta.source = "diff".into();
        g.meta.system = self.meta.system.clone();
        Ok(g)
    }

    /// Sup-norm and mean of the absolute values.
    pub fn abs_stats(&self) -> (f64, f64) {
        let sup = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64;
        (sup, mean)
    }
}

/// Lower cell index and fractional offset of coordinate `x` on `axis`.
#[inline]
pub(crate) fn cell(axis: &GridAxis, x: f64) -> (usize, f64) {
    let s = (x - axis.lo) / axis.spacing();
    let i = (s.floor().max(0.0) as usize).min(axis.res - 2);
    (i, (s - i as f64).clamp(0.0, 1.0))
}

/// Dense evaluation of `v_θ` on a `res × res` grid over the slice of
/// `domain`, with values clamped to `[0, 1]` for reporting.
pub fn evaluate_on_grid(
    params: &MlpParams,
    domain: &Domain,
    res: usize,
    slice: &SliceSpec,
) -> Result<ValueGrid> {
    let n = params.input_dim();
    if res < 2 {
        return arg_err(format!("grid resolution {res} < 2"));
    }
    if domain.dim() != n || slice.base.len() != n {
        return arg_err("slice, domain and network dimensions differ");
    }
    let (a, b) = slice.axes;
    if a >= n || b >= n || a == b {
        return arg_err(format!("invalid slice axes ({a}, {b}) for dimension {n}"));
    }
    let axes = [
        GridAxis {
            dim: a,
            lo: domain.lower()[a],
            hi: domain.upper()[a],
            res,
        },
        GridAxis {
            dim: b,
            lo: domain.lower()[b],
            hi: domain.upper()[b],
            res,
        },
    ];
    let mut points = Array2::zeros((res * res, n));
    for i in 0..res {
        for j in 0..res {
            let mut row = points.row_mut(i * res + j);
            row.assign(&ndarray::ArrayView1::from(&slice.base));
            row[a] = axes[0].coord(i);
            row[b] = axes[1].coord(j);
        }
    }
    let values = params
        .forward_batch(points.view())?
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let mut grid = ValueGrid::new(axes, slice.base.clone(), values)?;
    grid.meta.source = "network".into();
    Ok(grid)
}
