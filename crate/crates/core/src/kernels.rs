//! Reparameterized Markov kernels targeting one bridging density.
//!
//! A move draws `eps ~ N(0, I)`, maps it through a deterministic proposal
//! `T(eps, z)` and accepts with probability `alpha`. The accept decision is
//! kept as a discrete sample; its log-probability (`log zeta`) carries the
//! score part of the training gradient, while `T` carries the pathwise part.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{BaseReal, Dual, Real};
use crate::path::{name_enum, Group, Lift, Path};
use crate::rng::normal2;
use crate::targets::Density2D;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("non-finite gradient of log gamma_{k} at ({z0}, {z1})")]
    NonFiniteGradient { k: usize, z0: f64, z1: f64 },
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rwmh,
    Mala,
    Hmc,
    Ula,
}
name_enum!(KernelKind, "kernel", Rwmh => "rwmh", Mala => "mala", Hmc => "hmc", Ula => "ula");

impl KernelKind {
    /// Whether the kernel uses `grad_z log gamma`.
    pub fn needs_gradient(&self) -> bool {
        !matches!(self, KernelKind::Rwmh)
    }

    pub fn is_adjusted(&self) -> bool {
        !matches!(self, KernelKind::Ula)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Leapfrog steps per HMC move.
    pub leapfrog: usize,
    /// Moves per bridging index.
    pub repeats: usize,
    /// Share one step size across all bridging indices.
    pub tie_steps: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: KernelKind::Rwmh,
            leapfrog: 1,
            repeats: 1,
            tie_steps: false,
        }
    }
}

impl KernelConfig {
    pub fn new(kind: KernelKind) -> Self {
        KernelConfig {
            kind,
            ..KernelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.leapfrog == 0 {
            return Err(KernelError::InvalidConfig("leapfrog steps must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(KernelError::InvalidConfig("repeats must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of log step-size slots for a path with `steps` bridging indices.
    pub fn step_slots(&self, steps: usize) -> usize {
        if self.tie_steps {
            1
        } else {
            steps
        }
    }
}

/// A location with its cached `log gamma_k` value and, for gradient-based
/// kernels, its gradient in `z`.
#[derive(Debug, Clone, Copy)]
pub struct Point<P> {
    pub z: [P; 2],
    pub log_gamma: P,
    pub grad: Option<[P; 2]>,
}

pub fn eval_point<P, D>(path: &Path<D>, phi: &[P], k: usize, z: [P; 2], with_grad: bool) -> Result<Point<P>, KernelError>
where
    P: BaseReal,
    Dual<P, 2>: Lift<P>,
    D: Density2D,
{
    if with_grad {
        let (v, g) = path.log_gamma_grad(phi, k, z);
        if !(g[0].value().is_finite() && g[1].value().is_finite()) {
            return Err(KernelError::NonFiniteGradient {
                k,
                z0: z[0].value(),
                z1: z[1].value(),
            });
        }
        Ok(Point {
            z,
            log_gamma: v,
            grad: Some(g),
        })
    } else {
        Ok(Point {
            z,
            log_gamma: path.log_gamma(phi, k, z),
            grad: None,
        })
    }
}

/// A proposed point and the unclipped log MH ratio of the move to it.
#[derive(Debug, Clone, Copy)]
pub struct Proposal<P> {
    pub point: Point<P>,
    /// rwmh: `dG`; mala/ula: `dG + log r(z | z') - log r(z' | z)`; hmc: `-dH`.
    pub log_ratio: P,
}

fn step_size<P: Real>(path_layout: &crate::path::Layout, phi: &[P], k: usize) -> P {
    phi[path_layout.step_slot(k)].exp()
}

fn half_sq<P: Real>(v: [P; 2]) -> P {
    (v[0].square() + v[1].square()) * 0.5
}

/// Applies `T(eps, z)` under `gamma_k`.
pub fn propose<P, D>(
    cfg: &KernelConfig,
    path: &Path<D>,
    phi: &[P],
    k: usize,
    cur: &Point<P>,
    eps: [f64; 2],
) -> Result<Proposal<P>, KernelError>
where
    P: BaseReal,
    Dual<P, 2>: Lift<P>,
    D: Density2D,
{
    let h = step_size(&path.layout, phi, k);
    let z = cur.z;
    let grad_of = |p: &Point<P>| p.grad.expect("gradient-based kernel requires a cached gradient");
    match cfg.kind {
        KernelKind::Rwmh => {
            let d = path.layout.range(Group::RwLogDiag).start;
            let zp = [0, 1].map(|i| z[i] + h * phi[d + i].exp() * eps[i]);
            let point = eval_point(path, phi, k, zp, false)?;
            let log_ratio = point.log_gamma - cur.log_gamma;
            Ok(Proposal { point, log_ratio })
        }
        KernelKind::Mala | KernelKind::Ula => {
            let g = grad_of(cur);
            let half_h2 = h.square() * 0.5;
            let zp = [0, 1].map(|i| z[i] + half_h2 * g[i] + h * eps[i]);
            let point = eval_point(path, phi, k, zp, true)?;
            let gp = grad_of(&point);
            // Noise that would carry z' back to z.
            let back = [0, 1].map(|i| (z[i] - zp[i] - half_h2 * gp[i]) / h);
            let fwd = eps.map(P::cst);
            let log_ratio = point.log_gamma - cur.log_gamma - half_sq(back) + half_sq(fwd);
            Ok(Proposal { point, log_ratio })
        }
        KernelKind::Hmc => {
            let half_h = h * 0.5;
            let mut q = z;
            let mut p = eps.map(P::cst);
            let mut here = *cur;
            for _ in 0..cfg.leapfrog {
                let g = grad_of(&here);
                p = [0, 1].map(|i| p[i] + half_h * g[i]);
                q = [0, 1].map(|i| q[i] + h * p[i]);
                here = eval_point(path, phi, k, q, true)?;
                let g = grad_of(&here);
                p = [0, 1].map(|i| p[i] + half_h * g[i]);
            }
            let log_ratio = here.log_gamma - half_sq(p) - cur.log_gamma + half_sq(eps.map(P::cst));
            Ok(Proposal { point: here, log_ratio })
        }
    }
}

/// `log alpha`; always 0 for the unadjusted kernel.
pub fn log_accept_prob<P: Real>(cfg: &KernelConfig, prop: &Proposal<P>) -> P {
    if cfg.kind.is_adjusted() {
        P::cst(0.0).min(prop.log_ratio)
    } else {
        P::cst(0.0)
    }
}

/// Largest `log alpha` used in `log(1 - alpha)` after a rejection.
const LOG_ALPHA_CAP: f64 = -1e-8;

/// `log zeta` for the drawn accept decision: `a log alpha + (1-a) log(1-alpha)`.
pub fn log_zeta<P: Real>(accepted: bool, log_alpha: P) -> P {
    if accepted {
        log_alpha
    } else {
        log_alpha.min(P::cst(LOG_ALPHA_CAP)).ln_1m_exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Transition<P> {
    /// The new state, with `log gamma_k` (and gradient) cached.
    pub next: Point<P>,
    pub proposal: [P; 2],
    pub accepted: bool,
    pub log_alpha: P,
    pub log_zeta: P,
    pub eps: [f64; 2],
    /// Unclipped log MH ratio of the proposed move.
    pub log_ratio: P,
}

/// One move under `gamma_k`. Draws two normals for `eps` and then one
/// uniform for the accept decision, for every kernel kind.
pub fn transition<P, D, R>(
    cfg: &KernelConfig,
    path: &Path<D>,
    phi: &[P],
    k: usize,
    cur: &Point<P>,
    rng: &mut R,
) -> Result<Transition<P>, KernelError>
where
    P: BaseReal,
    Dual<P, 2>: Lift<P>,
    D: Density2D,
    R: Rng + ?Sized,
{
    let eps = normal2(rng);
    let u: f64 = rng.random();
    let prop = propose(cfg, path, phi, k, cur, eps)?;
    let log_alpha = log_accept_prob(cfg, &prop);
    let accepted = !cfg.kind.is_adjusted() || u < log_alpha.value().exp();
    let log_zeta = if cfg.kind.is_adjusted() {
        log_zeta(accepted, log_alpha)
    } else {
        P::cst(0.0)
    };
    Ok(Transition {
        next: if accepted { prop.point } else { *cur },
        proposal: prop.point.z,
        accepted,
        log_alpha,
        log_zeta,
        eps,
        log_ratio: prop.log_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Var};
    use crate::path::{InitSpec, Layout, PathKind, PathParams, Schedule};
    use crate::rng::{Domain, Streams};
    use crate::targets::{quadrature_log_integral, GridMap, Target};
    use statrs::function::erf::erfc;

    /// A one-step path whose bridging index 1 is the standard normal target.
    fn normal_path() -> (Path<Target>, PathParams) {
        let path = Path::new(
            Target::scaled_gaussian([0.0, 0.0], [1.0, 1.0], 0.0),
            PathKind::Geometric,
            Schedule::linear(1).unwrap(),
            Layout::new(4, 1),
        );
        let p = PathParams::init(&InitSpec::default(), 1, 0);
        (path, p)
    }

    fn with_step(p: &PathParams, h: f64) -> Vec<f64> {
        let mut v = p.values.clone();
        v[p.layout.step_slot(1)] = h.ln();
        v
    }

    #[test]
    fn rwmh_identity_shift() {
        let (path, p) = normal_path();
        let phi = with_step(&p, 1.0);
        let cur = eval_point(&path, &phi, 1, [0.0, 0.0], false).unwrap();
        let prop = propose(&KernelConfig::new(KernelKind::Rwmh), &path, &phi, 1, &cur, [1.0, 0.0]).unwrap();
        assert_eq!(prop.point.z, [1.0, 0.0]);
    }

    #[test]
    fn rwmh_equal_density_always_accepts() {
        let (path, p) = normal_path();
        let phi = with_step(&p, 1.0);
        let cfg = KernelConfig::new(KernelKind::Rwmh);
        // A move from (1, 0) to (-1, 0) along eps = (-2, 0) keeps the density.
        let cur = eval_point(&path, &phi, 1, [1.0, 0.0], false).unwrap();
        let prop = propose(&cfg, &path, &phi, 1, &cur, [-2.0, 0.0]).unwrap();
        assert_eq!(log_accept_prob(&cfg, &prop), 0.0);
        assert_eq!(log_zeta(true, 0.0), 0.0);
    }

    #[test]
    fn mala_zero_step_limit() {
        let (path, p) = normal_path();
        let phi = with_step(&p, 1e-8);
        let cur = eval_point(&path, &phi, 1, [0.7, -0.2], true).unwrap();
        let prop = propose(&KernelConfig::new(KernelKind::Mala), &path, &phi, 1, &cur, [0.3, 1.1]).unwrap();
        let d = ((prop.point.z[0] - 0.7f64).powi(2) + (prop.point.z[1] + 0.2f64).powi(2)).sqrt();
        assert!(d < 1e-7);
    }

    #[test]
    fn hmc_one_leapfrog_matches_hand_rolled() {
        let (path, p) = normal_path();
        let h = 0.1;
        let phi = with_step(&p, h);
        let cfg = KernelConfig::new(KernelKind::Hmc);
        let cur = eval_point(&path, &phi, 1, [1.0, 0.0], true).unwrap();
        let prop = propose(&cfg, &path, &phi, 1, &cur, [0.0, 0.0]).unwrap();
        // grad log N(0, I) = -q.
        let p_half = 0.0 - h / 2.0 * 1.0;
        let q1 = 1.0 + h * p_half;
        let p1 = p_half - h / 2.0 * q1;
        assert!((prop.point.z[0] - q1).abs() < 1e-15);
        assert_eq!(prop.point.z[1], 0.0);
        let dh = (-q1 * q1 / 2.0 - p1 * p1 / 2.0) - (-0.5);
        assert!((prop.log_ratio - dh).abs() < 1e-14);
    }

    #[test]
    fn hmc_tiny_step_conserves_energy() {
        let (path, p) = normal_path();
        let phi = with_step(&p, 1e-7);
        let cfg = KernelConfig::new(KernelKind::Hmc);
        let cur = eval_point(&path, &phi, 1, [0.4, 1.0], true).unwrap();
        let prop = propose(&cfg, &path, &phi, 1, &cur, [0.5, -0.9]).unwrap();
        assert!(log_accept_prob(&cfg, &prop).abs() < 1e-12);
    }

    #[test]
    fn mala_ratio_matches_four_term_formula() {
        let target = Target::scaled_gaussian([0.5, -0.3], [0.8, 1.3], 1.0);
        let path = Path::new(target, PathKind::Geometric, Schedule::linear(1).unwrap(), Layout::new(4, 1));
        let p = PathParams::init(&InitSpec::default(), 1, 0);
        let h = 0.6;
        let phi = with_step(&p, h);
        let z = [1.2, 0.4];
        let eps = [-0.4, 0.9];
        let cur = eval_point(&path, &phi, 1, z, true).unwrap();
        let cfg = KernelConfig::new(KernelKind::Mala);
        let prop = propose(&cfg, &path, &phi, 1, &cur, eps).unwrap();
        let zp = prop.point.z;
        // Brute force: both Gaussian proposal densities and both target values.
        let logp = |x: [f64; 2]| -((x[0] - 0.5) / 0.8).powi(2) / 2.0 - ((x[1] + 0.3) / 1.3).powi(2) / 2.0;
        let grad = |x: [f64; 2]| [-(x[0] - 0.5) / 0.64, -(x[1] + 0.3) / 1.69];
        let log_q = |to: [f64; 2], from: [f64; 2]| {
            let g = grad(from);
            let m = [from[0] + h * h / 2.0 * g[0], from[1] + h * h / 2.0 * g[1]];
            -((to[0] - m[0]).powi(2) + (to[1] - m[1]).powi(2)) / (2.0 * h * h) - (2.0 * std::f64::consts::PI * h * h).ln()
        };
        let expect = (logp(zp) + log_q(z, zp) - logp(z) - log_q(zp, z)).min(0.0);
        assert!((log_accept_prob(&cfg, &prop) - expect).abs() < 1e-12);
    }

    #[test]
    fn ula_always_accepts_with_zero_zeta() {
        let (path, p) = normal_path();
        let phi = with_step(&p, 0.9);
        let cfg = KernelConfig::new(KernelKind::Ula);
        let streams = Streams::new(4);
        let mut cur = eval_point(&path, &phi, 1, [2.0, 2.0], true).unwrap();
        for s in 0..200 {
            let tr = transition(&cfg, &path, &phi, 1, &cur, &mut streams.at(Domain::Forward, 0, s)).unwrap();
            assert!(tr.accepted);
            assert_eq!(tr.log_alpha, 0.0);
            assert_eq!(tr.log_zeta, 0.0);
            cur = tr.next;
        }
    }

    #[test]
    fn log_accept_prob_never_positive() {
        let (path, p) = normal_path();
        let streams = Streams::new(8);
        for kind in KernelKind::ALL {
            let cfg = KernelConfig::new(*kind);
            let phi = with_step(&p, 0.7);
            let mut cur = eval_point(&path, &phi, 1, [0.1, 0.1], kind.needs_gradient()).unwrap();
            for s in 0..500 {
                let tr = transition(&cfg, &path, &phi, 1, &cur, &mut streams.at(Domain::Forward, 0, s)).unwrap();
                assert!(tr.log_alpha <= 0.0);
                assert!(tr.log_zeta <= 0.0 && tr.log_zeta.is_finite());
                if tr.accepted {
                    assert_eq!(tr.next.z, tr.proposal);
                } else {
                    assert_eq!(tr.next.z, cur.z);
                }
                cur = tr.next;
            }
        }
    }

    #[test]
    fn transition_is_deterministic_given_stream() {
        let (path, p) = normal_path();
        let phi = with_step(&p, 0.5);
        let cfg = KernelConfig::new(KernelKind::Mala);
        let cur = eval_point(&path, &phi, 1, [0.3, -0.3], true).unwrap();
        let a = transition(&cfg, &path, &phi, 1, &cur, &mut Streams::new(1).at(Domain::Forward, 5, 2)).unwrap();
        let b = transition(&cfg, &path, &phi, 1, &cur, &mut Streams::new(1).at(Domain::Forward, 5, 2)).unwrap();
        assert_eq!(a.next.z, b.next.z);
        assert_eq!(a.log_zeta, b.log_zeta);
    }

    #[test]
    fn rwmh_acceptance_rate_matches_quadrature() {
        let (path, p) = normal_path();
        let h = 1.5;
        let phi = with_step(&p, h);
        let cfg = KernelConfig::new(KernelKind::Rwmh);
        let streams = Streams::new(12);
        let n = 100_000;
        let alphas: Vec<f64> = (0..n)
            .map(|i| {
                let z = normal2(&mut streams.at(Domain::Exact, i, 0));
                let cur = eval_point(&path, &phi, 1, z, false).unwrap();
                let tr = transition(&cfg, &path, &phi, 1, &cur, &mut streams.at(Domain::Forward, i, 0)).unwrap();
                if tr.accepted {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mean = alphas.iter().sum::<f64>() / n as f64;
        let se = (mean * (1.0 - mean) / n as f64).sqrt();
        // For z ~ N(0, I) and fixed eps the log ratio is N(-s^2/2, s^2) with
        // s = h |eps|, whose clipped exponential has mean 2 Phi(-s/2).
        let log_integrand = |e: [f64; 2]| {
            let s = h * (e[0] * e[0] + e[1] * e[1]).sqrt();
            let phi = 0.5 * erfc(s / 2.0 / std::f64::consts::SQRT_2);
            (2.0 * phi).ln() - (e[0] * e[0] + e[1] * e[1]) / 2.0 - (2.0 * std::f64::consts::PI).ln()
        };
        let expect = quadrature_log_integral(log_integrand, 512, 10.0, GridMap::Linear).exp();
        assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect} (se {se})");
    }

    #[test]
    fn proposal_derivative_in_phi_matches_fd() {
        let target = Target::by_name("gauss8").unwrap();
        let path = Path::new(target, PathKind::Neural, Schedule::linear(4).unwrap(), Layout::new(4, 1));
        let mut p = PathParams::init(&InitSpec::default(), 1, 3);
        let mut rng = Streams::new(3).at(Domain::Validation, 0, 0);
        for v in p.values.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let z = [3.6, 0.4];
        let eps = [0.3, -0.8];
        for kind in [KernelKind::Mala, KernelKind::Hmc] {
            let cfg = KernelConfig {
                leapfrog: 2,
                ..KernelConfig::new(kind)
            };
            let tape = Tape::new();
            let phi = tape.vars(&p.values);
            let zv = [Var::constant(z[0]), Var::constant(z[1])];
            let cur = eval_point(&path, &phi, 2, zv, true).unwrap();
            let prop = propose(&cfg, &path, &phi, 2, &cur, eps).unwrap();
            let h = 1e-6;
            for i in 0..2 {
                let g = tape.gradient(prop.point.z[i], &phi).unwrap();
                for j in 0..p.values.len() {
                    let at = |d: f64| {
                        let mut v = p.values.clone();
                        v[j] += d;
                        let cur = eval_point(&path, &v, 2, z, true).unwrap();
                        propose(&cfg, &path, &v, 2, &cur, eps).unwrap().point.z[i]
                    };
                    let fd = (at(h) - at(-h)) / (2.0 * h);
                    let err = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-3);
                    assert!(err < 1e-4, "{kind} z{i} param {j}: {} vs {fd}", g[j]);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig { leapfrog: 0, ..Default::default() }.validate().is_err());
        assert!(KernelConfig { repeats: 0, ..Default::default() }.validate().is_err());
        assert_eq!(KernelConfig { tie_steps: true, ..Default::default() }.step_slots(9), 1);
        assert_eq!("hmc".parse::<KernelKind>().unwrap(), KernelKind::Hmc);
        assert!("nuts".parse::<KernelKind>().is_err());
    }
}
