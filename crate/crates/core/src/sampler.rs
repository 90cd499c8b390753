//! Forward and backward AIS processes and the weight diagnostics.
//!
//! Forward: `z_0 ~ gamma_0`, and for `k = 1..=M` the log weight gains
//! `log gamma_k(z) - log gamma_{k-1}(z)` at the current point before the
//! point moves under `gamma_k`. Backward: `z_M ~ pi` exactly, and for
//! `k = M..=1` the point first moves under `gamma_k` and then contributes the
//! same increment. Reversible kernels make the backward trajectory law the
//! reversal of the extended target, so its mean log weight bounds `log Z`
//! from above while the forward one bounds it from below.
//!
//! The unadjusted Langevin kernel is not reversible. For it, each move also
//! adds its log proposal-density ratio (see [`crate::kernels::Proposal`]) so
//! that the weights stay exact importance weights with the Langevin move
//! itself as the backward kernel.

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{AdError, BaseReal, Dual};
use crate::kernels::{eval_point, transition, KernelConfig, KernelError, KernelKind};
use crate::path::{proposal_point, Lift, Path};
use crate::rng::{normal2, Domain, Streams};
use crate::targets::{Density2D, TargetError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("particle {particle}: log weight is {value}; the proposal does not cover the target")]
    SupportViolation { particle: usize, value: f64 },
    #[error("empty batch")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// One particle's trajectory summary, generic over the scalar type so the
/// same code serves plain evaluation and taped training.
#[derive(Debug, Clone)]
pub struct ParticleRun<P> {
    /// Final point: `z_M` forward, `z_0` backward.
    pub z: [P; 2],
    pub log_w: P,
    pub log_zeta: P,
    /// Accepted moves per bridging index, index `k - 1`.
    pub accepts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub direction: Direction,
    pub points: Vec<[f64; 2]>,
    pub log_w: Vec<f64>,
    pub log_zeta: Vec<f64>,
    /// `accepts[i][k - 1]`: moves of particle `i` accepted under `gamma_k`.
    pub accepts: Vec<Vec<u32>>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    /// Fraction of all moves that were accepted.
    pub fn acceptance_rate(&self, repeats: usize) -> f64 {
        let moves: usize = self.accepts.iter().map(|a| a.len() * repeats).sum();
        let acc: u64 = self.accepts.iter().flatten().map(|&a| a as u64).sum();
        if moves == 0 {
            f64::NAN
        } else {
            acc as f64 / moves as f64
        }
    }
}

/// AIS with a given path and kernel.
#[derive(Debug, Clone, Copy)]
pub struct Ais<'a, D> {
    pub path: &'a Path<D>,
    pub kernel: KernelConfig,
}

impl<'a, D: Density2D> Ais<'a, D> {
    pub fn new(path: &'a Path<D>, kernel: KernelConfig) -> Self {
        Ais { path, kernel }
    }

    fn step_index(&self, k: usize, r: usize) -> u64 {
        ((k - 1) * self.kernel.repeats + r + 1) as u64
    }

    /// Runs particle `i` in one direction. Its randomness comes only from
    /// `streams` at `(direction, i, step)`.
    pub fn particle<P>(&self, phi: &[P], dir: Direction, streams: &Streams, i: u64) -> Result<ParticleRun<P>, SamplerError>
    where
        P: BaseReal,
        Dual<P, 2>: Lift<P>,
    {
        match dir {
            Direction::Forward => self.forward_particle(phi, streams, i),
            Direction::Backward => self.backward_particle(phi, streams, i),
        }
    }

    fn forward_particle<P>(&self, phi: &[P], streams: &Streams, i: u64) -> Result<ParticleRun<P>, SamplerError>
    where
        P: BaseReal,
        Dual<P, 2>: Lift<P>,
    {
        let path = self.path;
        let m = path.steps();
        let grad = self.kernel.kind.needs_gradient();
        let ula = self.kernel.kind == KernelKind::Ula;
        let eps0 = normal2(&mut streams.at(Domain::Forward, i, 0));
        let mut z = proposal_point(&path.layout, phi, eps0);
        let mut prev = path.log_gamma(phi, 0, z);
        let mut log_w = P::cst(0.0);
        let mut log_zeta = P::cst(0.0);
        let mut accepts = vec![0u32; m];
        for k in 1..=m {
            let mut cur = eval_point(path, phi, k, z, grad)?;
            log_w = log_w + (cur.log_gamma - prev);
            for r in 0..self.kernel.repeats {
                let mut rng = streams.at(Domain::Forward, i, self.step_index(k, r));
                let tr = transition(&self.kernel, path, phi, k, &cur, &mut rng)?;
                log_zeta = log_zeta + tr.log_zeta;
                if ula {
                    log_w = log_w + tr.log_ratio;
                }
                accepts[k - 1] += tr.accepted as u32;
                cur = tr.next;
            }
            prev = cur.log_gamma;
            z = cur.z;
        }
        Ok(ParticleRun {
            z,
            log_w,
            log_zeta,
            accepts,
        })
    }

    fn backward_particle<P>(&self, phi: &[P], streams: &Streams, i: u64) -> Result<ParticleRun<P>, SamplerError>
    where
        P: BaseReal,
        Dual<P, 2>: Lift<P>,
    {
        let path = self.path;
        let m = path.steps();
        let grad = self.kernel.kind.needs_gradient();
        let ula = self.kernel.kind == KernelKind::Ula;
        let start = path.target.draw_exact(&mut streams.at(Domain::Backward, i, 0))?;
        let mut cur = eval_point(path, phi, m, start.map(P::cst), grad)?;
        let mut log_w = P::cst(0.0);
        let mut log_zeta = P::cst(0.0);
        let mut accepts = vec![0u32; m];
        for k in (1..=m).rev() {
            for r in 0..self.kernel.repeats {
                let mut rng = streams.at(Domain::Backward, i, self.step_index(k, r));
                let tr = transition(&self.kernel, path, phi, k, &cur, &mut rng)?;
                log_zeta = log_zeta + tr.log_zeta;
                if ula {
                    log_w = log_w - tr.log_ratio;
                }
                accepts[k - 1] += tr.accepted as u32;
                cur = tr.next;
            }
            let below = if k > 1 {
                eval_point(path, phi, k - 1, cur.z, grad)?
            } else {
                // gamma_0 is never moved under, so no gradient is needed.
                eval_point(path, phi, 0, cur.z, false)?
            };
            log_w = log_w + (cur.log_gamma - below.log_gamma);
            cur = below;
        }
        Ok(ParticleRun {
            z: cur.z,
            log_w,
            log_zeta,
            accepts,
        })
    }

    /// `n` particles at fixed parameters, in parallel on the current rayon
    /// pool. Output order is particle order regardless of scheduling.
    pub fn run(&self, phi: &[f64], dir: Direction, n: usize, seed: u64) -> Result<TrajectoryBatch, SamplerError> {
        if dir == Direction::Backward && !self.path.target.has_exact_sampler() {
            return Err(TargetError::Unsupported(self.path.target.name().to_string()).into());
        }
        let streams = Streams::new(seed);
        let runs: Vec<ParticleRun<f64>> = (0..n)
            .into_par_iter()
            .map(|i| self.particle(phi, dir, &streams, i as u64))
            .collect::<Result<_, _>>()?;
        if let Some((i, r)) = runs.iter().enumerate().find(|(_, r)| !r.log_w.is_finite()) {
            return Err(SamplerError::SupportViolation {
                particle: i,
                value: r.log_w,
            });
        }
        let mut batch = TrajectoryBatch {
            direction: dir,
            points: Vec::with_capacity(n),
            log_w: Vec::with_capacity(n),
            log_zeta: Vec::with_capacity(n),
            accepts: Vec::with_capacity(n),
        };
        for r in runs {
            batch.points.push(r.z);
            batch.log_w.push(r.log_w);
            batch.log_zeta.push(r.log_zeta);
            batch.accepts.push(r.accepts);
        }
        Ok(batch)
    }

    pub fn forward(&self, phi: &[f64], n: usize, seed: u64) -> Result<TrajectoryBatch, SamplerError> {
        self.run(phi, Direction::Forward, n, seed)
    }

    pub fn backward(&self, phi: &[f64], n: usize, seed: u64) -> Result<TrajectoryBatch, SamplerError> {
        self.run(phi, Direction::Backward, n, seed)
    }
}

/// `log sum exp(x)`, max-shifted, summed in index order.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `log((1/N) sum w_i)`.
pub fn log_z_estimate(log_w: &[f64]) -> f64 {
    log_sum_exp(log_w) - (log_w.len() as f64).ln()
}

/// `(sum w)^2 / (N sum w^2)`, in log space.
pub fn ess(log_w: &[f64]) -> f64 {
    let doubled: Vec<f64> = log_w.iter().map(|v| 2.0 * v).collect();
    (2.0 * log_sum_exp(log_w) - log_sum_exp(&doubled) - (log_w.len() as f64).ln()).exp()
}

/// Log of the unbiased sample variance of the weights. NaN when `N < 2`.
pub fn log_weight_variance(log_w: &[f64]) -> f64 {
    let n = log_w.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: Vec<f64> = log_w.iter().map(|v| (v - m).exp()).collect();
    let mu = mean(&s);
    let var = s.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
    var.ln() + 2.0 * m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub log_z_hat: f64,
    pub elbo: f64,
    pub ess: f64,
    pub log_var: f64,
    /// Mean backward minus mean forward log weight; only with exact samples.
    pub bdmc_gap: Option<f64>,
}

pub fn diagnostics(forward: &[f64], backward: Option<&[f64]>) -> Result<Diagnostics, SamplerError> {
    if forward.is_empty() || backward.is_some_and(|b| b.is_empty()) {
        return Err(SamplerError::Empty);
    }
    let elbo = mean(forward);
    Ok(Diagnostics {
        log_z_hat: log_z_estimate(forward),
        elbo,
        ess: ess(forward),
        log_var: log_weight_variance(forward),
        bdmc_gap: backward.map(|b| mean(b) - elbo),
    })
}

/// Standard error of the mean of `x`.
pub fn standard_error(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mu = mean(x);
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Real;
    use crate::path::{InitSpec, Layout, PathKind, PathParams, Schedule};
    use crate::targets::Target;
    use proptest::prelude::*;

    fn setup(target: Target, m: usize, kind: PathKind) -> (Path<Target>, PathParams) {
        let path = Path::new(target, kind, Schedule::linear(m).unwrap(), Layout::new(4, m));
        let p = PathParams::init(&InitSpec::default(), m, 1);
        (path, p)
    }

    #[test]
    fn identity_annealing_gives_zero_weights() {
        // The default proposal is N(0, 9 I).
        let target = Target::scaled_gaussian([0.0, 0.0], [3.0, 3.0], 0.0);
        let (path, p) = setup(target, 1, PathKind::Geometric);
        for kind in KernelKind::ALL {
            let ais = Ais::new(&path, KernelConfig::new(*kind));
            let f = ais.forward(&p.values, 64, 3).unwrap();
            let b = ais.backward(&p.values, 64, 3).unwrap();
            if kind.is_adjusted() {
                assert!(f.log_w.iter().chain(&b.log_w).all(|w| w.abs() < 1e-12), "{kind}");
                assert!(log_z_estimate(&f.log_w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_is_importance_sampling() {
        let (path, p) = setup(Target::by_name("ring").unwrap(), 1, PathKind::Neural);
        let ais = Ais::new(&path, KernelConfig::new(KernelKind::Rwmh));
        let streams = Streams::new(5);
        let b = ais.forward(&p.values, 16, 5).unwrap();
        for i in 0..16 {
            let eps = normal2(&mut streams.at(Domain::Forward, i as u64, 0));
            let z0 = proposal_point(&path.layout, &p.values, eps);
            let expect = path.target.log_density(z0) - crate::path::log_proposal(&path.layout, &p.values, z0);
            assert_eq!(b.log_w[i], expect);
        }
    }

    #[test]
    fn empty_batches() {
        let (path, p) = setup(Target::by_name("gaussian").unwrap(), 3, PathKind::Geometric);
        let ais = Ais::new(&path, KernelConfig::default());
        assert!(ais.backward(&p.values, 0, 0).unwrap().is_empty());
        assert!(ais.forward(&p.values, 0, 0).unwrap().is_empty());
        assert_eq!(diagnostics(&[], None), Err(SamplerError::Empty));
    }

    #[test]
    fn estimator_examples() {
        assert!((log_z_estimate(&[1.5; 7]) - 1.5).abs() < 1e-15);
        assert_eq!(log_z_estimate(&[0.0, 0.0]), 0.0);
        assert!((log_z_estimate(&[0.0, 3f64.ln()]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.3; 5]) - 1.0).abs() < 1e-15);
        let dominated = [0.0, -1e4, -1e4, -1e4];
        assert!((ess(&dominated) - 0.25).abs() < 1e-15);
        let w = [0.0, 0.0, 0.0, 3f64.ln()];
        assert!((ess(&w) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn variance_matches_direct_formula() {
        let w = [1.0f64, 2.0, 4.0, 0.5];
        let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let mu = w.iter().sum::<f64>() / 4.0;
        let var = w.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 3.0;
        assert!((log_weight_variance(&lw) - var.ln()).abs() < 1e-14);
        assert!(log_weight_variance(&[0.0]).is_nan());
    }

    #[test]
    fn bdmc_gap_only_with_backward() {
        let d = diagnostics(&[-1.0, -2.0], None).unwrap();
        assert_eq!(d.bdmc_gap, None);
        let d = diagnostics(&[-1.0, -2.0], Some(&[0.5])).unwrap();
        assert_eq!(d.bdmc_gap, Some(2.0));
    }

    #[test]
    fn backward_requires_exact_sampler() {
        struct Plain;
        impl Density2D for Plain {
            fn name(&self) -> &str {
                "plain"
            }
            fn log_density<T: Real>(&self, z: [T; 2]) -> T {
                -(z[0].square() + z[1].square())
            }
        }
        let path = Path::new(Plain, PathKind::Geometric, Schedule::linear(2).unwrap(), Layout::new(4, 2));
        let p = PathParams::init(&InitSpec::default(), 2, 0);
        let ais = Ais::new(&path, KernelConfig::default());
        assert!(matches!(
            ais.backward(&p.values, 4, 0),
            Err(SamplerError::Target(TargetError::Unsupported(_)))
        ));
        assert!(ais.forward(&p.values, 4, 0).is_ok());
    }

    #[test]
    fn identical_across_worker_counts() {
        let (path, p) = setup(Target::by_name("moons").unwrap(), 4, PathKind::Neural);
        for kind in KernelKind::ALL {
            let ais = Ais::new(&path, KernelConfig::new(*kind));
            let run = |workers: usize| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .unwrap()
                    .install(|| (ais.forward(&p.values, 200, 9).unwrap(), ais.backward(&p.values, 200, 9).unwrap()))
            };
            assert_eq!(run(1), run(4));
        }
    }

    proptest! {
        #[test]
        fn ess_bounds_and_scale_invariance(
            lw in prop::collection::vec(-30.0f64..30.0, 1..60),
            shift in -50.0f64..50.0,
        ) {
            let n = lw.len() as f64;
            let e = ess(&lw);
            prop_assert!(e >= 1.0 / n - 1e-12 && e <= 1.0 + 1e-12);
            let shifted: Vec<f64> = lw.iter().map(|v| v + shift).collect();
            prop_assert!((ess(&shifted) - e).abs() < 1e-10);
        }

        #[test]
        fn elbo_below_log_z_hat_plus_log_n(lw in prop::collection::vec(-30.0f64..30.0, 1..60)) {
            let d = diagnostics(&lw, None).unwrap();
            prop_assert!(d.elbo <= d.log_z_hat + (lw.len() as f64).ln() + 1e-12);
            prop_assert!(d.elbo <= d.log_z_hat + 1e-12);
        }
    }
}
