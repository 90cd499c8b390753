//! Training objectives, the gradient estimator and the optimizer loop.
//!
//! Both objectives are expectations over trajectories whose law depends on
//! the parameters. Moves are reparameterized, so differentiating a sampled
//! log weight with the accept decisions held fixed gives the pathwise part.
//! The accept decisions themselves contribute a score part
//! `E[f * grad log zeta]`, estimated with a leave-one-out baseline: particle
//! `i` is weighted by `(f_i - mean f) / (N - 1)`, a constant in the reverse
//! sweep.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::kernels::KernelKind;
use crate::path::{name_enum, Group, Layout, PathKind, PathParams};
use crate::rng::Streams;
use crate::sampler::{diagnostics, log_sum_exp, Ais, Diagnostics, Direction, SamplerError};
use crate::targets::{Density2D, TargetError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("non-finite gradient from particle {particle} ({direction:?})")]
    NonFiniteGradient { particle: usize, direction: Direction },
    #[error("training with a single particle leaves the control variate undefined; enable single-particle mode to override")]
    SingleParticle,
    #[error("non-finite loss at epoch {epoch}; parameters before the failing step are kept as a checkpoint")]
    NonFiniteLoss { epoch: usize, checkpoint: Box<PathParams> },
    #[error("gradient length {got} does not match parameter length {expected}")]
    ShapeMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Inverse KL: `-E_fwd[log w]`.
    Pkl,
    /// Jeffreys: `E_bwd[log w] - E_fwd[log w]`.
    Pj,
}
name_enum!(Objective, "objective", Pkl => "pkl", Pj => "pj");

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub proposal: bool,
    pub network: bool,
    pub step: bool,
    pub rw_scale: bool,
}

impl Trainable {
    /// Everything the configuration actually uses.
    pub fn all_for(path: PathKind, kernel: KernelKind) -> Self {
        Trainable {
            proposal: true,
            network: path == PathKind::Neural,
            step: true,
            rw_scale: kernel == KernelKind::Rwmh,
        }
    }

    pub fn none() -> Self {
        Trainable {
            proposal: false,
            network: false,
            step: false,
            rw_scale: false,
        }
    }

    pub fn mask(&self, layout: &Layout) -> Vec<bool> {
        let mut m = vec![false; layout.len()];
        for g in Group::ALL {
            let on = match g {
                Group::Mean | Group::LogStd => self.proposal,
                Group::HiddenWeights | Group::HiddenBias | Group::OutputWeights | Group::OutputBias => self.network,
                Group::LogStep => self.step,
                Group::RwLogDiag => self.rw_scale,
            };
            m[layout.range(g)].fill(on);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradOptions {
    pub objective: Objective,
    /// Skip the score part entirely (biased, lower variance).
    pub drop_score: bool,
    /// Estimate the backward expectation by self-normalized reweighting of
    /// forward particles instead of exact target samples.
    pub reuse_forward: bool,
    /// Permit `N = 1`, falling back to the plain score estimator.
    pub allow_single: bool,
    /// Global norm bound on the returned total gradient.
    pub clip_norm: f64,
}

impl Default for GradOptions {
    fn default() -> Self {
        GradOptions {
            objective: Objective::Pkl,
            drop_score: false,
            reuse_forward: false,
            allow_single: false,
            clip_norm: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub loss: f64,
    pub pathwise: Vec<f64>,
    /// Score part with the leave-one-out baseline.
    pub score: Vec<f64>,
    /// Score part without a baseline, `(1/N) sum f_i grad log zeta_i`.
    pub score_plain: Vec<f64>,
    /// `pathwise + score` (score omitted when dropped), masked and clipped.
    pub total: Vec<f64>,
    /// Norm of `total` before clipping.
    pub grad_norm: f64,
    pub forward_log_w: Vec<f64>,
    pub backward_log_w: Option<Vec<f64>>,
}

struct ParticleGrad {
    log_w: f64,
    d_log_w: Vec<f64>,
    d_log_zeta: Vec<f64>,
}

fn particle_grads<D: Density2D>(
    ais: &Ais<'_, D>,
    phi: &[f64],
    dir: Direction,
    n: usize,
    streams: &Streams,
) -> Result<Vec<ParticleGrad>, ObjectiveError> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let tape = Tape::new();
            let vars = tape.vars(phi);
            let run = ais.particle(&vars, dir, streams, i as u64)?;
            let d_log_w = tape.gradient(run.log_w, &vars).map_err(SamplerError::from)?;
            let d_log_zeta = tape.gradient(run.log_zeta, &vars).map_err(SamplerError::from)?;
            let log_w = run.log_w.value();
            if !log_w.is_finite() {
                return Err(SamplerError::SupportViolation { particle: i, value: log_w }.into());
            }
            if d_log_w.iter().chain(&d_log_zeta).any(|g| !g.is_finite()) {
                return Err(ObjectiveError::NonFiniteGradient { particle: i, direction: dir });
            }
            Ok(ParticleGrad {
                log_w,
                d_log_w,
                d_log_zeta,
            })
        })
        .collect()
}

/// Adds `sign * E[f]`'s gradient contributions for `f_i = sign * log w_i`.
fn accumulate(
    grads: &[ParticleGrad],
    sign: f64,
    single_ok: bool,
    pathwise: &mut [f64],
    score: &mut [f64],
    score_plain: &mut [f64],
) {
    let n = grads.len();
    let nf = n as f64;
    let f: Vec<f64> = grads.iter().map(|g| sign * g.log_w).collect();
    let f_mean = f.iter().sum::<f64>() / nf;
    for (i, g) in grads.iter().enumerate() {
        let cv = if n > 1 {
            (f[i] - f_mean) / (nf - 1.0)
        } else {
            debug_assert!(single_ok);
            f[i]
        };
        let plain = f[i] / nf;
        for j in 0..pathwise.len() {
            pathwise[j] += sign * g.d_log_w[j] / nf;
            score[j] += cv * g.d_log_zeta[j];
            score_plain[j] += plain * g.d_log_zeta[j];
        }
    }
}

/// One stochastic gradient of the chosen objective at `phi`.
///
/// Forward and backward batches use the same seed, so a Jeffreys estimate
/// shares its random numbers between the two terms.
pub fn gradient_estimate<D: Density2D>(
    ais: &Ais<'_, D>,
    phi: &[f64],
    mask: &[bool],
    opts: &GradOptions,
    n: usize,
    seed: u64,
) -> Result<GradientReport, ObjectiveError> {
    if mask.len() != phi.len() {
        return Err(ObjectiveError::ShapeMismatch {
            got: mask.len(),
            expected: phi.len(),
        });
    }
    if n == 0 {
        return Err(SamplerError::Empty.into());
    }
    if n == 1 {
        if !opts.allow_single {
            return Err(ObjectiveError::SingleParticle);
        }
        warn!("single-particle gradient: control variate undefined, using the plain score estimator");
    }
    let streams = Streams::new(seed);
    let p = phi.len();
    let mut pathwise = vec![0.0; p];
    let mut score = vec![0.0; p];
    let mut score_plain = vec![0.0; p];

    let fwd = particle_grads(ais, phi, Direction::Forward, n, &streams)?;
    let forward_log_w: Vec<f64> = fwd.iter().map(|g| g.log_w).collect();
    let mut loss = -forward_log_w.iter().sum::<f64>() / n as f64;
    accumulate(&fwd, -1.0, opts.allow_single, &mut pathwise, &mut score, &mut score_plain);

    let mut backward_log_w = None;
    if opts.objective == Objective::Pj {
        if opts.reuse_forward || !ais.path.target.has_exact_sampler() {
            if !opts.reuse_forward {
                return Err(SamplerError::Target(TargetError::Unsupported(ais.path.target.name().to_string())).into());
            }
            // sum_i w~_i log w_i with self-normalized weights w~; only its
            // pathwise dependence through each log w_i is followed.
            let lse = log_sum_exp(&forward_log_w);
            let wn: Vec<f64> = forward_log_w.iter().map(|l| (l - lse).exp()).collect();
            let est: f64 = wn.iter().zip(&forward_log_w).map(|(w, l)| w * l).sum();
            loss += est;
            for (i, g) in fwd.iter().enumerate() {
                let c = wn[i] * (1.0 + forward_log_w[i] - est);
                for j in 0..p {
                    pathwise[j] += c * g.d_log_w[j];
                }
            }
        } else {
            let bwd = particle_grads(ais, phi, Direction::Backward, n, &streams)?;
            let lw: Vec<f64> = bwd.iter().map(|g| g.log_w).collect();
            loss += lw.iter().sum::<f64>() / n as f64;
            accumulate(&bwd, 1.0, opts.allow_single, &mut pathwise, &mut score, &mut score_plain);
            backward_log_w = Some(lw);
        }
    }

    let mut total: Vec<f64> = (0..p)
        .map(|j| {
            if !mask[j] {
                return 0.0;
            }
            let s = if opts.drop_score {
                0.0
            } else if n > 1 {
                score[j]
            } else {
                score_plain[j]
            };
            pathwise[j] + s
        })
        .collect();
    let grad_norm = total.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm > opts.clip_norm {
        let s = opts.clip_norm / grad_norm;
        total.iter_mut().for_each(|g| *g *= s);
    }
    Ok(GradientReport {
        loss,
        pathwise,
        score,
        score_plain,
        total,
        grad_norm,
        forward_log_w,
        backward_log_w,
    })
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, phi: &mut [f64], grad: &[f64]) -> Result<(), ObjectiveError> {
        if grad.len() != phi.len() || self.m.len() != phi.len() {
            return Err(ObjectiveError::ShapeMismatch {
                got: grad.len(),
                expected: phi.len(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for j in 0..phi.len() {
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * grad[j];
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
            let mh = self.m[j] / c1;
            let vh = self.v[j] / c2;
            phi[j] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub grad: GradOptions,
    pub epochs: usize,
    pub lr: f64,
    pub n: usize,
    pub seed: u64,
    pub trainable: Trainable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Diagnostics of the training batch drawn at the start of the epoch.
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PathParams,
    pub history: Vec<EpochRecord>,
}

/// Seed of the training batch for `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    Streams::new(seed).derive(epoch as u64).seed()
}

/// Runs `cfg.epochs` rounds of sample, estimate gradient, Adam step.
/// `on_epoch` sees each record as it is produced.
pub fn train<D: Density2D>(
    ais: &Ais<'_, D>,
    init: &PathParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, ObjectiveError> {
    let mut params = init.clone();
    let mask = cfg.trainable.mask(&params.layout);
    let mut adam = Adam::new(params.values.len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let report = gradient_estimate(ais, &params.values, &mask, &cfg.grad, cfg.n, epoch_seed(cfg.seed, epoch));
        let report = match report {
            Ok(r) if r.loss.is_finite() => r,
            Ok(_)
            | Err(ObjectiveError::Sampler(SamplerError::SupportViolation { .. } | SamplerError::Autodiff(_)))
            | Err(ObjectiveError::NonFiniteGradient { .. }) => {
                return Err(ObjectiveError::NonFiniteLoss {
                    epoch,
                    checkpoint: Box::new(params),
                })
            }
            Err(e) => return Err(e),
        };
        let diag = diagnostics(&report.forward_log_w, report.backward_log_w.as_deref())?;
        let rec = EpochRecord {
            epoch,
            loss: report.loss,
            grad_norm: report.grad_norm,
            diagnostics: diag,
        };
        on_epoch(&rec);
        history.push(rec);
        adam.step(&mut params.values, &report.total)?;
    }
    Ok(TrainOutcome { params, history })
}
