//! `key = value` run configuration with per-benchmark defaults.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dynamics::Domain;
use crate::error::{Result, ZubovError};
use crate::fdm::{FdmConfig, FdmStep};
use crate::grid::SliceSpec;
use crate::trainer::TrainConfig;

/// Every accepted key, in the order they are echoed.
pub const KEYS: &[&str] = &[
    "system",
    "domain",
    "alpha",
    "lambda_r",
    "lambda_d",
    "m_b",
    "m_r",
    "m_d",
    "width",
    "depth",
    "iterations",
    "epochs",
    "lr",
    "seed",
    "k_steps",
    "dt",
    "r_max",
    "v_cap",
    "resample",
    "tol",
    "minibatch",
    "output",
    "threads",
    "resolution",
    "level",
    "slice_axes",
    "slice_values",
    "fdm_step",
    "fdm_tol",
    "fdm_sweeps",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub output: PathBuf,
    pub threads: Option<usize>,
    pub resolution: usize,
    pub level: f64,
    pub slice_axes: (usize, usize),
    /// Pinned coordinates for slices; zeros when absent.
    pub slice_values: Option<Vec<f64>>,
    pub fdm_step: FdmStep,
    pub fdm_tol: f64,
    pub fdm_sweeps: usize,
}

impl RunConfig {
    pub fn for_system(name: &str) -> Result<Self> {
        let fdm = FdmConfig::default();
        Ok(Self {
            train: TrainConfig::for_system(name)?,
            output: PathBuf::from("out"),
            threads: None,
            resolution: 201,
            level: 0.9,
            slice_axes: (0, 1),
            slice_values: None,
            fdm_step: fdm.step,
            fdm_tol: fdm.tol,
            fdm_sweeps: fdm.max_sweeps,
        })
    }

    pub fn slice(&self) -> SliceSpec {
        let n = self.state_dim();
        SliceSpec {
            axes: self.slice_axes,
            base: self.slice_values.clone().unwrap_or_else(|| vec![0.0; n]),
        }
    }

    pub fn fdm(&self) -> FdmConfig {
        FdmConfig {
            resolution: self.resolution,
            alpha: self.train.alpha,
            step: self.fdm_step,
            tol: self.fdm_tol,
            max_sweeps: self.fdm_sweeps,
            domain: self.train.domain.clone(),
        }
    }

    fn state_dim(&self) -> usize {
        self.train
            .build_system()
            .map(|s| s.state_dim())
            .unwrap_or(2)
    }

    /// Fully resolved settings as `key = value` lines; parsing the result
    /// reproduces the same run.
    pub fn to_metadata(&self) -> Result<String> {
        let t = &self.train;
        let sys = t.build_system()?;
        let settings = t.rollout.resolve(sys.domain().max_radius(), t.alpha)?;
        let d = sys.domain();
        let domain: Vec<String> = d
            .lower()
            .iter()
            .zip(d.upper())
            .map(|(lo, hi)| format!("{lo} {hi}"))
            .collect();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let slice = self.slice();
        let mut lines = vec![
            ("system", t.system.clone()),
            ("domain", domain.join(", ")),
            ("alpha", t.alpha.to_string()),
            ("lambda_r", t.lambda_r.to_string()),
            ("lambda_d", t.lambda_d.to_string()),
            ("m_b", t.m_b.to_string()),
            ("m_r", t.m_r.to_string()),
            ("m_d", t.m_d.to_string()),
            ("width", t.width.to_string()),
            ("depth", t.depth.to_string()),
            ("iterations", t.iterations.to_string()),
            ("epochs", t.epochs.to_string()),
            ("lr", t.lr.to_string()),
            ("seed", t.seed.to_string()),
            ("k_steps", settings.k_steps.to_string()),
            ("dt", settings.dt.to_string()),
            ("r_max", settings.r_max.to_string()),
            ("v_cap", settings.v_cap.to_string()),
            ("resample", t.resample.to_string()),
            ("tol", t.tol.to_string()),
            (
                "minibatch",
                t.minibatch.map_or("full".to_string(), |m| m.to_string()),
            ),
            ("output", self.output.display().to_string()),
            (
                "threads",
                self.threads.map_or("auto".to_string(), |n| n.to_string()),
            ),
            ("resolution", self.resolution.to_string()),
            ("level", self.level.to_string()),
            ("slice_axes", format!("{} {}", slice.axes.0, slice.axes.1)),
            ("slice_values", join(&slice.base)),
            (
                "fdm_step",
                match self.fdm_step {
                    FdmStep::Global => "global".to_string(),
                    FdmStep::Fixed(h) => h.to_string(),
                    FdmStep::Local { h_max } => format!("local {h_max}"),
                },
            ),
            ("fdm_tol", self.fdm_tol.to_string()),
            ("fdm_sweeps", self.fdm_sweeps.to_string()),
        ];
        debug_assert_eq!(lines.len(), KEYS.len());
        Ok(lines
            .drain(..)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| ZubovError::io(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}

/// `origin` labels parse errors (usually the file name).
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    let err = |line: usize, msg: String| ZubovError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(ln, format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(err(ln, format!("unknown key `{k}`")));
        }
        if entries.iter().any(|(_, e, _)| e == k) {
            return Err(err(ln, format!("duplicate key `{k}`")));
        }
        entries.push((ln, k.to_string(), v.to_string()));
    }

    let system = entries
        .iter()
        .find(|(_, k, _)| k == "system")
        .map(|(ln, _, v)| (*ln, v.clone()));
    let mut cfg = match &system {
        Some((ln, name)) => RunConfig::for_system(name).map_err(|e| err(*ln, e.to_string()))?,
        None => RunConfig::for_system("vdp")?,
    };

    for (ln, key, value) in &entries {
        apply(&mut cfg, key, value).map_err(|msg| err(*ln, format!("{key}: {msg}")))?;
    }

    // Cross-key checks; blame the most specific key present.
    let line_of = |key: &str| {
        entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map_or(0, |(ln, _, _)| *ln)
    };
    let sys = cfg
        .train
        .build_system()
        .map_err(|e| err(line_of("domain"), e.to_string()))?;
    let n = sys.state_dim();
    let (a, b) = cfg.slice_axes;
    if a >= n || b >= n || a == b {
        return Err(err(
            line_of("slice_axes"),
            format!("slice axes ({a}, {b}) invalid for dimension {n}"),
        ));
    }
    if let Some(v) = &cfg.slice_values {
        if v.len() != n {
            return Err(err(
                line_of("slice_values"),
                format!("{} slice values for dimension {n}", v.len()),
            ));
        }
    }
    cfg.train.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(cfg)
}

fn num(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not finite"))
    }
}

fn int(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive, got {x}"))
    }
}

fn nonneg(v: &str) -> std::result::Result<f64, String> {
    let x = num(v)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("must be ≥ 0, got {x}"))
    }
}

fn at_least(v: &str, min: usize) -> std::result::Result<usize, String> {
    let x = int(v)?;
    if x >= min {
        Ok(x)
    } else {
        Err(format!("must be ≥ {min}, got {x}"))
    }
}

fn floats(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split_whitespace().map(num).collect()
}

fn apply(cfg: &mut RunConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    let t = &mut cfg.train;
    match key {
        "system" => {}
        "domain" => {
            let n = crate::dynamics::PerturbedSystem::from_name(&t.system)
                .map_err(|e| e.to_string())?
                .state_dim();
            let pairs: Vec<Vec<f64>> = v.split(',').map(floats).collect::<std::result::Result<_, _>>()?;
            if pairs.iter().any(|p| p.len() != 2) {
                return Err("expected `lo hi` pairs separated by commas".into());
            }
            let (lower, upper): (Vec<f64>, Vec<f64>) = match pairs.len() {
                1 => (vec![pairs[0][0]; n], vec![pairs[0][1]; n]),
                k if k == n => pairs.iter().map(|p| (p[0], p[1])).unzip(),
                k => return Err(format!("{k} intervals for dimension {n}")),
            };
            t.domain = Some(Domain::new(lower, upper).map_err(|e| e.to_string())?);
        }
        "alpha" => t.alpha = positive(v)?,
        "lambda_r" => t.lambda_r = nonneg(v)?,
        "lambda_d" => t.lambda_d = nonneg(v)?,
        "m_b" => t.m_b = at_least(v, 1)?,
        "m_r" => t.m_r = at_least(v, 1)?,
        "m_d" => t.m_d = at_least(v, 1)?,
        "width" => t.width = at_least(v, 1)?,
        "depth" => t.depth = at_least(v, 2)?,
        "iterations" => t.iterations = at_least(v, 1)?,
        "epochs" => t.epochs = int(v)?,
        "lr" => t.lr = positive(v)?,
        "seed" => t.seed = v.parse().map_err(|_| format!("`{v}` is not a u64 seed"))?,
        "k_steps" => t.rollout.k_steps = at_least(v, 1)?,
        "dt" => t.rollout.dt = positive(v)?,
        "r_max" => t.rollout.r_max = Some(positive(v)?),
        "v_cap" => t.rollout.v_cap = Some(positive(v)?),
        "resample" => {
            t.resample = v
                .parse()
                .map_err(|_| format!("expected true or false, got `{v}`"))?
        }
        "tol" => t.tol = nonneg(v)?,
        "minibatch" => {
            t.minibatch = if v == "full" {
                None
            } else {
                Some(at_least(v, 1)?)
            }
        }
        "output" => {
            if v.is_empty() {
                return Err("empty path".into());
            }
            cfg.output = PathBuf::from(v);
        }
        "threads" => {
            cfg.threads = if v == "auto" {
                None
            } else {
                Some(at_least(v, 1)?)
            }
        }
        "resolution" => cfg.resolution = at_least(v, 2)?,
        "level" => {
            let c = num(v)?;
            if !(c > 0.0 && c < 1.0) {
                return Err(format!("must lie in (0, 1), got {c}"));
            }
            cfg.level = c;
        }
        "slice_axes" => {
            let a: Vec<usize> = v.split_whitespace().map(int).collect::<std::result::Result<_, _>>()?;
            if a.len() != 2 {
                return Err("expected two axis indices".into());
            }
            cfg.slice_axes = (a[0], a[1]);
        }
        "slice_values" => cfg.slice_values = Some(floats(v)?),
        "fdm_step" => {
            let mut parts = v.split_whitespace();
            cfg.fdm_step = match (parts.next(), parts.next()) {
                (Some("global"), None) => FdmStep::Global,
                (Some("local"), None) => FdmStep::default(),
                (Some("local"), Some(h)) => FdmStep::Local { h_max: positive(h)? },
                (Some(h), None) => FdmStep::Fixed(positive(h)?),
                _ => return Err("expected `global`, `local [h_max]` or a step size".into()),
            }
        }
        "fdm_tol" => cfg.fdm_tol = positive(v)?,
        "fdm_sweeps" => cfg.fdm_sweeps = at_least(v, 1)?,
        _ => unreachable!("keys are checked before applying"),
    }
    Ok(())
}
