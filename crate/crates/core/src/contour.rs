//! Level-set extraction by marching squares.

use std::collections::HashMap;

use crate::error::{arg_err, Result};
use crate::grid::ValueGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    /// Closed loops do not repeat their first point.
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub level: f64,
    pub polylines: Vec<Polyline>,
}

impl Contour {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.polylines.iter().flat_map(|p| p.points.iter())
    }

    /// Line segments making up all polylines, closing edges included.
    pub fn segments(&self) -> Vec<([f64; 2], [f64; 2])> {
        let mut out = Vec::new();
        for p in &self.polylines {
            for w in p.points.windows(2) {
                out.push((w[0], w[1]));
            }
            if p.closed && p.points.len() > 2 {
                out.push((p.points[p.points.len() - 1], p.points[0]));
            }
        }
        out
    }

    /// Euclidean distance from `q` to the nearest contour segment.
    pub fn distance_to(&self, q: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, b) in self.segments() {
            best = best.min(point_segment_distance(q, a, b));
        }
        if best.is_infinite() {
            // Single-point polylines.
            for p in self.points() {
                best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
            }
        }
        best
    }
}

pub fn point_segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a[0] + t * dx - q[0]).hypot(a[1] + t * dy - q[1])
}

/// Grid edge identifier: `(orientation, i, j)` with orientation 0 for the
/// edge from node `(i, j)` to `(i+1, j)` and 1 for `(i, j)` to `(i, j+1)`.
type EdgeKey = (u8, usize, usize);

/// Polylines approximating `{v = level}`.
///
/// Nodes with `v < level` count as inside. Crossings are placed by linear
/// interpolation along cell edges; saddle cells are split according to
/// whether the mean of the four corners is inside.
pub fn extract_contour(grid: &ValueGrid, level: f64) -> Result<Contour> {
    if !(level > 0.0 && level < 1.0) {
        return arg_err(format!("contour level must lie in (0, 1), got {level}"));
    }
    let (r0, r1) = grid.shape();
    let inside = |i: usize, j: usize| grid.value(i, j) < level;

    let mut crossing: HashMap<EdgeKey, [f64; 2]> = HashMap::new();
    let mut edge_point = |key: EdgeKey| -> EdgeKey {
        crossing.entry(key).or_insert_with(|| {
            let (o, i, j) = key;
            let (i2, j2) = if o == 0 { (i + 1, j) } else { (i, j + 1) };
            let (va, vb) = (grid.value(i, j), grid.value(i2, j2));
            let t = (level - va) / (vb - va);
            let (pa, pb) = (grid.node(i, j), grid.node(i2, j2));
            [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
        });
        key
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..r0 - 1 {
        for j in 0..r1 - 1 {
            // Corners counter-clockwise; edge k joins corner k and k+1.
            let c = [
                inside(i, j),
                inside(i + 1, j),
                inside(i + 1, j + 1),
                inside(i, j + 1),
            ];
            let edges: [EdgeKey; 4] = [(0, i, j), (1, i + 1, j), (0, i, j + 1), (1, i, j)];
            let crossed: Vec<usize> = (0..4).filter(|&k| c[k] != c[(k + 1) % 4]).collect();
            match crossed.len() {
                0 => {}
                2 => segments.push((edge_point(edges[crossed[0]]), edge_point(edges[crossed[1]]))),
                4 => {
                    let mean = (grid.value(i, j)
                        + grid.value(i + 1, j)
                        + grid.value(i + 1, j + 1)
                        + grid.value(i, j + 1))
                        / 4.0;
                    let e: Vec<EdgeKey> = edges.iter().map(|&k| edge_point(k)).collect();
                    if (mean < level) == c[0] {
                        // Corners 0 and 2 connect through the centre: cut off 1 and 3.
                        segments.push((e[0], e[1]));
                        segments.push((e[2], e[3]));
                    } else {
                        segments.push((e[3], e[0]));
                        segments.push((e[1], e[2]));
                    }
                }
                _ => unreachable!("a cell boundary crosses a level an even number of times"),
            }
        }
    }

    let polylines = link(&segments)
        .into_iter()
        .map(|(keys, closed)| Polyline {
            points: keys.iter().map(|k| crossing[k]).collect(),
            closed,
        })
        .collect();
    Ok(Contour { level, polylines })
}

/// Chains segments that share an edge crossing. Open chains start from
/// crossings used once (the grid border); what is left forms loops.
fn link(segments: &[(EdgeKey, EdgeKey)]) -> Vec<(Vec<EdgeKey>, bool)> {
    let mut incident: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        incident.entry(*a).or_default().push(s);
        incident.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();

    let walk = |start_seg: usize, start_key: EdgeKey, used: &mut [bool]| {
        let mut keys = vec![start_key];
        let mut seg = start_seg;
        let mut at = start_key;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            if next == start_key {
                return (keys, true);
            }
            keys.push(next);
            at = next;
            match incident[&next].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => return (keys, false),
            }
        }
    };

    for (s, (a, b)) in segments.iter().enumerate() {
        if used[s] {
            continue;
        }
        for key in [a, b] {
            if incident[key].len() == 1 {
                out.push(walk(s, *key, &mut used));
                break;
            }
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            out.push(walk(s, segments[s].0, &mut used));
        }
    }
    out
}
