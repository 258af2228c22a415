//! Policy iteration: alternate Adam epochs on the composite loss (policy
//! evaluation) with recomputing worst-case disturbances and rollout anchors
//! from the frozen network (policy improvement).

use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2};

use crate::dynamics::{Domain, PerturbedSystem};
use crate::error::{arg_err, Result, ZubovError};
use crate::losses::{loss_and_gradient, LossBatch, LossTerms, LossWeights};
use crate::net::{AdamState, MlpParams};
use crate::rng::{derive_seed, stream};
use crate::rollout::{assign_disturbances, build_anchor_set, RolloutConfig};
use crate::sampling::{sample_anchors, sample_boundary, sample_interior};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub system: String,
    /// Overrides the system's default sampling region.
    pub domain: Option<Domain>,
    pub alpha: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub m_b: usize,
    pub m_r: usize,
    pub m_d: usize,
    pub width: usize,
    pub depth: usize,
    pub iterations: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub rollout: RolloutConfig,
    pub resample: bool,
    /// Inner loop stops once the total loss falls below this.
    pub tol: f64,
    /// Points per minibatch for the largest set; `None` means full batch.
    pub minibatch: Option<usize>,
}

impl TrainConfig {
    /// Shipped defaults for a benchmark: the 2-d examples use the smaller
    /// sample counts, product systems the larger ones.
    pub fn for_system(name: &str) -> Result<Self> {
        // Validates the name up front.
        PerturbedSystem::from_name(name)?;
        let (m_b, m_r, m_d) = if name.starts_with("product") {
            (50_000, 50_000, 30_000)
        } else {
            (20_000, 20_000, 2_000)
        };
        Ok(Self {
            system: name.to_string(),
            domain: None,
            alpha: 0.5,
            lambda_r: 1.0,
            lambda_d: 10.0,
            m_b,
            m_r,
            m_d,
            width: 50,
            depth: 5,
            iterations: 20,
            epochs: 200,
            lr: AdamState::DEFAULT_LR,
            seed: 0,
            rollout: RolloutConfig::default(),
            resample: true,
            tol: 1e-5,
            minibatch: None,
        })
    }

    /// Divides all three sample counts by `factor` (rounding up).
    pub fn scaled_counts(mut self, factor: usize) -> Self {
        let f = factor.max(1);
        self.m_b = self.m_b.div_ceil(f);
        self.m_r = self.m_r.div_ceil(f);
        self.m_d = self.m_d.div_ceil(f);
        self
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            lambda_r: self.lambda_r,
            lambda_d: self.lambda_d,
        }
    }

    /// The system with any domain override applied.
    pub fn build_system(&self) -> Result<PerturbedSystem> {
        let sys = PerturbedSystem::from_name(&self.system)?;
        match &self.domain {
            Some(d) => sys.with_domain(d.clone()),
            None => Ok(sys),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        for (name, v) in [
            ("m_b", self.m_b),
            ("m_r", self.m_r),
            ("m_d", self.m_d),
            ("width", self.width),
            ("iterations", self.iterations),
        ] {
            if v < 1 {
                return arg_err(format!("{name} must be ≥ 1"));
            }
        }
        if self.depth < 2 {
            return arg_err("depth must be ≥ 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg_err(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.tol >= 0.0) {
            return arg_err(format!("tol must be ≥ 0, got {}", self.tol));
        }
        if self.minibatch == Some(0) {
            return arg_err("minibatch size must be ≥ 1");
        }
        let sys = self.build_system()?;
        self.rollout
            .resolve(sys.domain().max_radius(), self.alpha)
            .map(|_| ())
    }
}

/// One history row: losses seen at the start of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// 1-based epoch within the iteration.
    pub epoch: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epochs_run: usize,
    /// NaN when the data term is disabled.
    pub mean_v_hat: f64,
    pub diverged_fraction: f64,
    pub lr: f64,
    pub sampling: Duration,
    pub improvement: Duration,
    pub evaluation: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl TrainHistory {
    /// `iter,epoch,total,boundary,residual,data` rows. Contains no timings, so
    /// identical runs give identical text.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,epoch,total,boundary,residual,data\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.iteration,
                r.epoch,
                r.terms.total,
                r.terms.boundary,
                r.terms.residual,
                r.terms.data
            ));
        }
        out
    }

    pub fn first_total(&self) -> Option<f64> {
        self.epochs.first().map(|r| r.terms.total)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.terms.total)
    }
}

/// Progress notifications from [`train_with`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Epoch(&'a EpochRecord),
    /// Emitted after each outer iteration with the parameters at its end.
    IterationDone(&'a IterationRecord, &'a MlpParams),
    /// A blow-up triggered the one-time learning-rate halving.
    Retry { iteration: usize, lr: f64, reason: &'a str },
}

pub fn train(config: &TrainConfig) -> Result<(MlpParams, TrainHistory)> {
    train_with(config, |_| {})
}

struct Snapshot {
    params: MlpParams,
    adam: AdamState,
}

enum EpochsOutcome {
    Done(usize),
    BlowUp { epoch: usize, reason: String },
}

pub fn train_with<F>(config: &TrainConfig, mut observer: F) -> Result<(MlpParams, TrainHistory)>
where
    F: FnMut(TrainEvent<'_>),
{
    config.validate()?;
    let system = config.build_system()?;
    let n = system.state_dim();
    let domain = system.domain().clone();
    let settings = config.rollout.resolve(domain.max_radius(), config.alpha)?;
    let weights = config.weights();

    let mut params = MlpParams::init(config.seed, n, config.width, config.depth)?;
    let mut adam = AdamState::new(&params, config.lr);
    let mut history = TrainHistory::default();
    let mut retried = false;

    for k in 1..=config.iterations {
        let draw = if config.resample { k as u64 } else { 1 };

        let t0 = Instant::now();
        let boundary = sample_boundary(
            &domain,
            config.m_b,
            derive_seed(config.seed, stream::BOUNDARY, draw),
        )?;
        let residual = sample_interior(
            &domain,
            config.m_r,
            derive_seed(config.seed, stream::RESIDUAL, draw),
        )?;
        let sampling = t0.elapsed();

        // Policy improvement from the parameters at the end of iteration k−1.
        let t1 = Instant::now();
        let delta = assign_disturbances(&params, &system, residual.points.view(), config.alpha)?;
        let (anchor_pts, v_hat, mean_v_hat, diverged_fraction) = if config.lambda_d > 0.0 {
            let pts = sample_anchors(
                &domain,
                config.m_d,
                derive_seed(config.seed, stream::ANCHOR, draw),
            )?;
            let set = build_anchor_set(&params, &system, pts.points.view(), &settings)?;
            let (m, d) = (set.mean_v_hat(), set.diverged_fraction());
            (set.points, set.v_hat, m, d)
        } else {
            (Array2::zeros((0, n)), Array1::zeros(0), f64::NAN, f64::NAN)
        };
        let improvement = t1.elapsed();

        let batches = split_batches(
            &system,
            config.minibatch,
            &boundary.points,
            &residual.points,
            &delta.delta_star,
            &anchor_pts,
            &v_hat,
            weights,
        )?;

        let t2 = Instant::now();
        let snapshot = Snapshot {
            params: params.clone(),
            adam: adam.clone(),
        };
        let rows_before = history.epochs.len();
        let epochs_run = loop {
            match run_epochs(
                config,
                k,
                &batches,
                &mut params,
                &mut adam,
                &mut history,
                &mut observer,
            ) {
                EpochsOutcome::Done(e) => break e,
                EpochsOutcome::BlowUp { epoch, reason } => {
                    if retried {
                        return Err(ZubovError::TrainingDiverged {
                            iteration: k,
                            epoch,
                            reason,
                            last_good: Box::new(params),
                        });
                    }
                    retried = true;
                    let lr = adam.lr * 0.5;
                    observer(TrainEvent::Retry {
                        iteration: k,
                        lr,
                        reason: &reason,
                    });
                    params = snapshot.params.clone();
                    adam = snapshot.adam.clone();
                    adam.lr = lr;
                    history.epochs.truncate(rows_before);
                }
            }
        };
        let record = IterationRecord {
            iteration: k,
            epochs_run,
            mean_v_hat,
            diverged_fraction,
            lr: adam.lr,
            sampling,
            improvement,
            evaluation: t2.elapsed(),
        };
        observer(TrainEvent::IterationDone(&record, &params));
        history.iterations.push(record);
    }
    Ok((params, history))
}

/// Adam epochs of one iteration. On blow-up `params` holds the last
/// parameters with a finite loss.
fn run_epochs<F>(
    config: &TrainConfig,
    iteration: usize,
    batches: &[LossBatch],
    params: &mut MlpParams,
    adam: &mut AdamState,
    history: &mut TrainHistory,
    observer: &mut F,
) -> EpochsOutcome
where
    F: FnMut(TrainEvent<'_>),
{
    for epoch in 1..=config.epochs {
        let mut sums = [0.0; 4];
        for batch in batches {
            let (terms, grad) = match loss_and_gradient(params, batch) {
                Ok(v) => v,
                Err(e) => {
                    return EpochsOutcome::BlowUp {
                        epoch,
                        reason: e.to_string(),
                    }
                }
            };
            if !terms.total.is_finite() {
                return EpochsOutcome::BlowUp {
                    epoch,
                    reason: format!("non-finite loss {}", terms.total),
                };
            }
            for (s, t) in sums
                .iter_mut()
                .zip([terms.total, terms.boundary, terms.residual, terms.data])
            {
                *s += t;
            }
            if batches.len() == 1 && terms.total < config.tol {
                // Converged: record the row, skip the step.
                break;
            }
            let before = params.clone();
            if let Err(e) = adam.step(params, &grad) {
                return EpochsOutcome::BlowUp {
                    epoch,
                    reason: e.to_string(),
                };
            }
            if let Some(l) = params.first_non_finite_layer() {
                *params = before;
                return EpochsOutcome::BlowUp {
                    epoch,
                    reason: format!("non-finite parameters in layer {}", l + 1),
                };
            }
        }
        let nb = batches.len() as f64;
        let record = EpochRecord {
            iteration,
            epoch,
            terms: LossTerms {
                total: sums[0] / nb,
                boundary: sums[1] / nb,
                residual: sums[2] / nb,
                data: sums[3] / nb,
            },
        };
        observer(TrainEvent::Epoch(&record));
        history.epochs.push(record);
        if record.terms.total < config.tol {
            return EpochsOutcome::Done(epoch);
        }
    }
    EpochsOutcome::Done(config.epochs)
}

/// Splits every point set into the same number of consecutive slices.
#[allow(clippy::too_many_arguments)]
fn split_batches(
    system: &PerturbedSystem,
    minibatch: Option<usize>,
    boundary: &Array2<f64>,
    residual: &Array2<f64>,
    delta_star: &Array2<f64>,
    anchors: &Array2<f64>,
    v_hat: &Array1<f64>,
    weights: LossWeights,
) -> Result<Vec<LossBatch>> {
    let largest = boundary.nrows().max(residual.nrows()).max(anchors.nrows());
    let count = match minibatch {
        Some(size) => largest.div_ceil(size).max(1),
        None => 1,
    };
    let part = |len: usize, b: usize| (b * len / count)..((b + 1) * len / count);
    (0..count)
        .map(|b| {
            let rb = part(boundary.nrows(), b);
            let rr = part(residual.nrows(), b);
            let ra = part(anchors.nrows(), b);
            LossBatch::new(
                system,
                boundary.slice(s![rb, ..]).to_owned(),
                residual.slice(s![rr.clone(), ..]).to_owned(),
                delta_star.slice(s![rr, ..]).to_owned(),
                anchors.slice(s![ra.clone(), ..]).to_owned(),
                v_hat.slice(s![ra]).to_owned(),
                weights,
            )
        })
        .collect()
}
