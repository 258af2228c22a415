//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, RunConfig};
use crate::contour::extract_contour;
use crate::error::{arg_err, Result, ZubovError};
use crate::fdm::solve_fdm;
use crate::gradcheck::{
    input_gradient_suite, parameter_gradient_suite, INPUT_THRESHOLD, PARAM_THRESHOLD,
};
use crate::grid::{evaluate_on_grid, SliceSpec};
use crate::io;
use crate::trainer::{train_with, TrainEvent};

pub const THREADS_ENV: &str = "ZUBOV_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "zubov",
    version,
    about = "Robust region-of-attraction estimation with a Zubov-equation network",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs. Overrides ZUBOV_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a value network; writes checkpoints, history and metadata.
    Train(TrainArgs),
    /// Solve the grid reference problem for a 2-d system.
    Fdm(FdmArgs),
    /// Evaluate a checkpoint on a grid or 2-d slice.
    Eval(EvalArgs),
    /// Extract a level set from a grid file.
    Contour(ContourArgs),
    /// Subtract two grids of identical geometry.
    Diff(DiffArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Benchmark name when no config is given (vdp, pendulum, product<n>, linear<n>).
    #[arg(long)]
    pub system: Option<String>,
}

impl ProblemArgs {
    fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.system) {
            (Some(path), None) => parse_config(path),
            (None, Some(name)) => RunConfig::for_system(name),
            (None, None) => RunConfig::for_system("vdp"),
            (Some(_), Some(_)) => arg_err("give either --config or --system, not both"),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FdmArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Grid CSV to write.
    #[arg(long, default_value = "fdm.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// The two free coordinates of the slice.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub slice_axes: Option<Vec<usize>>,
    /// Full state vector supplying the pinned coordinates.
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub slice_values: Option<Vec<f64>>,
    #[arg(long, default_value = "grid.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value = "contour.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Optional difference grid `a − b`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub input_cases: usize,
    #[arg(long, default_value_t = 20)]
    pub param_cases: usize,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Flag beats environment beats config.
fn thread_count(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => arg_err(format!("{THREADS_ENV} must be a positive integer, got `{v}`")),
        };
    }
    Ok(config)
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => job(),
        Some(0) => arg_err("thread count must be ≥ 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ZubovError::Argument(format!("thread pool: {e}")))?
            .install(job),
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = a.problem.load()?;
            if let Some(o) = a.output {
                cfg.output = o;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            let threads = thread_count(cli.threads, cfg.threads)?;
            with_pool(threads, || run_train(&cfg, threads))
        }
        Command::Fdm(a) => {
            let mut cfg = a.problem.load()?;
            if let Some(r) = a.resolution {
                cfg.resolution = r;
            }
            let threads = thread_count(cli.threads, cfg.threads)?;
            with_pool(threads, || {
                let sys = cfg.train.build_system()?;
                let out = solve_fdm(&sys, &cfg.fdm())?;
                let m = &out.grid.meta;
                if !m.converged {
                    eprintln!(
                        "warning: not converged after {} sweeps (last change {:.3e})",
                        m.sweeps, m.residual
                    );
                }
                if m.clamped > 0 {
                    eprintln!("warning: {} node updates clamped to [0, 1]", m.clamped);
                }
                io::export_grid(&out.grid, &a.output)?;
                println!(
                    "fdm {}: {} sweeps, last change {:.3e}, wrote {}",
                    sys.name(),
                    m.sweeps,
                    m.residual,
                    a.output.display()
                );
                Ok(())
            })
        }
        Command::Eval(a) => {
            let mut cfg = a.problem.load()?;
            if let Some(r) = a.resolution {
                cfg.resolution = r;
            }
            if let Some(ax) = &a.slice_axes {
                cfg.slice_axes = (ax[0], ax[1]);
            }
            if a.slice_values.is_some() {
                cfg.slice_values = a.slice_values.clone();
            }
            let threads = thread_count(cli.threads, cfg.threads)?;
            with_pool(threads, || {
                let params = io::read_checkpoint(&a.checkpoint)?;
                let sys = cfg.train.build_system()?;
                let slice: SliceSpec = cfg.slice();
                let mut grid = evaluate_on_grid(&params, sys.domain(), cfg.resolution, &slice)?;
                grid.meta.system = sys.name().to_string();
                grid.meta.alpha = Some(cfg.train.alpha);
                io::export_grid(&grid, &a.output)?;
                println!("wrote {}", a.output.display());
                Ok(())
            })
        }
        Command::Contour(a) => {
            let grid = io::import_grid(&a.grid)?;
            let contour = extract_contour(&grid, a.level)?;
            io::export_contour(&contour, &a.output)?;
            let closed = contour.polylines.iter().filter(|p| p.closed).count();
            println!(
                "level {}: {} polylines ({} closed), wrote {}",
                a.level,
                contour.polylines.len(),
                closed,
                a.output.display()
            );
            Ok(())
        }
        Command::Diff(a) => {
            let ga = io::import_grid(&a.a)?;
            let gb = io::import_grid(&a.b)?;
            let d = ga.difference(&gb)?;
            let (sup, mean) = d.abs_stats();
            println!("sup |a-b| = {sup:.6e}");
            println!("mean |a-b| = {mean:.6e}");
            if let Some(o) = &a.output {
                io::export_grid(&d, o)?;
            }
            Ok(())
        }
        Command::Gradcheck(a) => {
            let threads = thread_count(cli.threads, None)?;
            with_pool(threads, || {
                let input = input_gradient_suite(a.seed, a.input_cases)?;
                let param = parameter_gradient_suite(a.seed, a.param_cases)?;
                println!(
                    "input gradient: max relative error {input:.3e} over {} cases (threshold {INPUT_THRESHOLD:e})",
                    a.input_cases
                );
                println!(
                    "parameter gradient: max relative error {param:.3e} over {} cases (threshold {PARAM_THRESHOLD:e})",
                    a.param_cases
                );
                if input > INPUT_THRESHOLD || param > PARAM_THRESHOLD {
                    return Err(ZubovError::Numeric("gradient check above threshold".into()));
                }
                Ok(())
            })
        }
    }
}

fn run_train(cfg: &RunConfig, threads: Option<usize>) -> Result<()> {
    let out = &cfg.output;
    let mut meta = cfg.to_metadata()?;
    meta.push_str(&format!(
        "# threads in use: {}\n",
        threads.map_or_else(|| rayon::current_num_threads().to_string(), |n| n.to_string())
    ));
    io::write_file(&out.join("metadata.txt"), &meta)?;

    let mut failure: Option<ZubovError> = None;
    let result = train_with(&cfg.train, |event| match event {
        TrainEvent::IterationDone(r, params) => {
            let path = out.join(format!("checkpoint_{:03}.ckpt", r.iteration));
            if let Err(e) = io::write_checkpoint(params, &path) {
                failure.get_or_insert(e);
            }
            eprintln!(
                "iteration {}: {} epochs, mean anchor value {:.4}, diverged {:.3}",
                r.iteration, r.epochs_run, r.mean_v_hat, r.diverged_fraction
            );
        }
        TrainEvent::Retry { iteration, lr, reason } => {
            eprintln!("warning: iteration {iteration} blew up ({reason}); retrying with lr {lr:e}");
        }
        TrainEvent::Epoch(_) => {}
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (params, history) = match result {
        Ok(v) => v,
        Err(ZubovError::TrainingDiverged {
            iteration,
            epoch,
            reason,
            last_good,
        }) => {
            let path = out.join("last_good.ckpt");
            io::write_checkpoint(&last_good, &path)?;
            return Err(ZubovError::TrainingDiverged {
                iteration,
                epoch,
                reason: format!("{reason}; last good parameters in {}", path.display()),
                last_good,
            });
        }
        Err(e) => return Err(e),
    };
    io::write_checkpoint(&params, &out.join("model.ckpt"))?;
    io::export_history(&history, &out.join("history.csv"))?;
    io::write_file(
        &out.join("iterations.csv"),
        &io::iterations_to_string(&history),
    )?;
    if let (Some(first), Some(last)) = (history.first_total(), history.last_total()) {
        println!("loss {first:.4e} -> {last:.4e}; wrote {}", out.display());
    } else {
        println!("no epochs run; wrote {}", out.display());
    }
    Ok(())
}

/// Used by tests to run the binary logic without spawning a process.
pub fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("zubov").chain(args.iter().copied()))
}
