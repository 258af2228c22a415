//! Plain-text file formats: checkpoints, grids, contours and histories.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which parses
//! back to the identical `f64`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::contour::Contour;
use crate::error::{Result, ZubovError};
use crate::grid::{GridAxis, GridMeta, ValueGrid};
use crate::net::MlpParams;
use crate::trainer::TrainHistory;

const CKPT_MAGIC: &str = "zubov-ckpt 1";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ZubovError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| ZubovError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ZubovError::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> ZubovError {
    ZubovError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Layout:
/// ```text
/// zubov-ckpt 1
/// dims <n> <w> <L>
/// layer <l> <rows> <cols>
/// <rows lines of weights>
/// <one line of biases>
/// ...
/// ```
pub fn checkpoint_to_string(params: &MlpParams) -> String {
    let mut out = format!(
        "{CKPT_MAGIC}\ndims {} {} {}\n",
        params.input_dim(),
        params.width(),
        params.depth()
    );
    for (l, (w, b)) in params.weights().iter().zip(params.biases()).enumerate() {
        out.push_str(&format!("layer {} {} {}\n", l + 1, w.nrows(), w.ncols()));
        for row in w.rows() {
            out.push_str(&fmt_row(row.iter().copied()));
            out.push('\n');
        }
        out.push_str(&fmt_row(b.iter().copied()));
        out.push('\n');
    }
    out
}

pub fn write_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    write_text(path, &checkpoint_to_string(params))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| parse_err(path, 0, format!("unexpected end of file, expected {what}")))
    };
    let (ln, magic) = next("header")?;
    if magic != CKPT_MAGIC {
        return Err(parse_err(path, ln, format!("expected `{CKPT_MAGIC}`")));
    }
    let (ln, dims) = next("dims")?;
    let d = keyword_ints(path, ln, dims, "dims", 3)?;
    let depth = d[2];
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (ln, head) = next("layer header")?;
        let h = keyword_ints(path, ln, head, "layer", 3)?;
        if h[0] != l {
            return Err(parse_err(path, ln, format!("expected layer {l}, found {}", h[0])));
        }
        let (rows, cols) = (h[1], h[2]);
        let mut w = Array2::zeros((rows, cols));
        for r in 0..rows {
            let (ln, line) = next("weight row")?;
            let vals = floats(path, ln, line, cols)?;
            w.row_mut(r).assign(&Array1::from(vals));
        }
        let (ln, line) = next("bias row")?;
        biases.push(Array1::from(floats(path, ln, line, rows)?));
        weights.push(w);
    }
    if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(parse_err(path, ln, format!("trailing content `{extra}`")));
    }
    let params = MlpParams::from_layers(weights, biases)?;
    if params.input_dim() != d[0] || params.width() != d[1] {
        return Err(parse_err(path, 2, "dims line disagrees with the layer shapes"));
    }
    Ok(params)
}

fn keyword_ints(path: &Path, ln: usize, line: &str, key: &str, count: usize) -> Result<Vec<usize>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(parse_err(path, ln, format!("expected `{key}`")));
    }
    let vals: Vec<usize> = parts
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, ln, format!("bad integer: {e}")))?;
    if vals.len() != count {
        return Err(parse_err(path, ln, format!("`{key}` takes {count} integers")));
    }
    Ok(vals)
}

fn floats(path: &Path, ln: usize, line: &str, count: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, ln, format!("bad number: {e}")))?;
    if vals.len() != count {
        return Err(parse_err(path, ln, format!("expected {count} numbers, found {}", vals.len())));
    }
    Ok(vals)
}

/// One header line then `x0,x1,value` rows in storage order.
pub fn grid_to_string(grid: &ValueGrid) -> String {
    let [a, b] = grid.axes;
    let m = &grid.meta;
    let base: Vec<String> = grid.base.iter().map(|v| format!("{v:.16e}")).collect();
    let mut out = format!(
        "# axis0 {:.16e} {:.16e} {}, axis1 {:.16e} {:.16e} {}, slice {} {} {}, source {}, system {}, alpha {}, sweeps {}, residual {:.6e}, converged {}, clamped {}\n",
        a.lo,
        a.hi,
        a.res,
        b.lo,
        b.hi,
        b.res,
        a.dim,
        b.dim,
        base.join(" "),
        or_dash(&m.source),
        or_dash(&m.system),
        m.alpha.map_or("-".to_string(), |v| format!("{v:.16e}")),
        m.sweeps,
        m.residual,
        m.converged,
        m.clamped
    );
    for i in 0..a.res {
        for j in 0..b.res {
            let p = grid.node(i, j);
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                p[0],
                p[1],
                grid.value(i, j)
            ));
        }
    }
    out
}

fn or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

pub fn export_grid(grid: &ValueGrid, path: &Path) -> Result<()> {
    write_text(path, &grid_to_string(grid))
}

pub fn import_grid(path: &Path) -> Result<ValueGrid> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| parse_err(path, 1, "missing `#` header"))?;
    let mut axes = Vec::new();
    let mut base = Vec::new();
    let mut dims = (0, 1);
    let mut meta = GridMeta::default();
    for field in header.split(',') {
        let mut parts = field.split_whitespace();
        let key = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        let bad = |what: &str| parse_err(path, 1, format!("bad `{key}` field: {what}"));
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(&e.to_string()));
        let one = || rest.first().copied().ok_or_else(|| bad("missing value"));
        match key {
            "axis0" | "axis1" => {
                if rest.len() != 3 {
                    return Err(bad("expected `lo hi res`"));
                }
                axes.push((num(rest[0])?, num(rest[1])?, int(rest[2])?));
            }
            "slice" => {
                if rest.len() < 2 {
                    return Err(bad("expected axis indices"));
                }
                dims = (int(rest[0])?, int(rest[1])?);
                base = rest[2..].iter().map(|s| num(s)).collect::<Result<_>>()?;
            }
            "source" => meta.source = one()?.trim_matches('-').to_string(),
            "system" => meta.system = one()?.trim_matches('-').to_string(),
            "alpha" => {
                let v = one()?;
                meta.alpha = if v == "-" { None } else { Some(num(v)?) };
            }
            "sweeps" => meta.sweeps = int(one()?)?,
            "residual" => meta.residual = num(one()?)?,
            "converged" => meta.converged = one()? == "true",
            "clamped" => meta.clamped = int(one()?)?,
            _ => return Err(bad("unknown field")),
        }
    }
    if axes.len() != 2 {
        return Err(parse_err(path, 1, "header must describe axis0 and axis1"));
    }
    let axes = [
        GridAxis {
            dim: dims.0,
            lo: axes[0].0,
            hi: axes[0].1,
            res: axes[0].2,
        },
        GridAxis {
            dim: dims.1,
            lo: axes[1].0,
            hi: axes[1].1,
            res: axes[1].2,
        },
    ];
    let mut values = Vec::with_capacity(axes[0].res * axes[1].res);
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = floats(path, k + 2, line, 3)?;
        values.push(row[2]);
    }
    let mut grid = ValueGrid::new(axes, base, values).map_err(|e| parse_err(path, 0, e.to_string()))?;
    grid.meta = meta;
    Ok(grid)
}

/// `# level <c>, closed <flags>` then `polyline_id,x0,x1` rows.
pub fn contour_to_string(contour: &Contour) -> String {
    let flags: Vec<&str> = contour
        .polylines
        .iter()
        .map(|p| if p.closed { "1" } else { "0" })
        .collect();
    let mut out = format!(
        "# level {:.16e}, polylines {}, closed {}\npolyline_id,x0,x1\n",
        contour.level,
        contour.polylines.len(),
        flags.join(" ")
    );
    for (id, p) in contour.polylines.iter().enumerate() {
        for q in &p.points {
            out.push_str(&format!("{id},{:.16e},{:.16e}\n", q[0], q[1]));
        }
    }
    out
}

pub fn export_contour(contour: &Contour, path: &Path) -> Result<()> {
    write_text(path, &contour_to_string(contour))
}

pub fn export_history(history: &TrainHistory, path: &Path) -> Result<()> {
    write_text(path, &history.to_csv())
}

/// Per-iteration anchor statistics and phase timings.
pub fn iterations_to_string(history: &TrainHistory) -> String {
    let mut out = String::from(
        "iter,epochs_run,mean_v_hat,diverged_fraction,lr,sampling_s,improvement_s,evaluation_s\n",
    );
    for r in &history.iterations {
        out.push_str(&format!(
            "{},{},{:.6e},{:.6e},{:.6e},{:.3},{:.3},{:.3}\n",
            r.iteration,
            r.epochs_run,
            r.mean_v_hat,
            r.diverged_fraction,
            r.lr,
            r.sampling.as_secs_f64(),
            r.improvement.as_secs_f64(),
            r.evaluation.as_secs_f64()
        ));
    }
    out
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}
