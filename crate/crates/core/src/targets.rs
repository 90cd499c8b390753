//! Two-dimensional unnormalized target densities.
//!
//! Six targets ship by name: `gaussian`, `gauss8`, `ring`, `rings2`, `moons`
//! and `tmix`. Each has an exact sampler and a closed-form normalizer, and
//! every one can also be integrated numerically with [`quadrature_log_z`].

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::autodiff::Real;
use crate::rng::{Domain, Streams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("unknown target `{0}` (expected one of: {names})", names = NAMES.join(", "))]
    Unknown(String),
    #[error("target `{0}` has no exact sampler")]
    Unsupported(String),
    #[error("quadrature did not converge: grid {grid_n} vs {finer} differ by {diff:e}")]
    NonConvergence { grid_n: usize, finer: usize, diff: f64 },
    #[error("invalid quadrature setup: {0}")]
    InvalidGrid(String),
}

/// Names of the shipped targets, in display order.
pub const NAMES: [&str; 6] = ["gaussian", "gauss8", "ring", "rings2", "moons", "tmix"];

/// An unnormalized log-density on the plane.
pub trait Density2D: Sync {
    fn name(&self) -> &str;

    /// `log pi~(z)`.
    fn log_density<T: Real>(&self, z: [T; 2]) -> T;

    fn has_exact_sampler(&self) -> bool {
        false
    }

    /// One draw from the normalized target.
    fn draw_exact<R: Rng + ?Sized>(&self, _rng: &mut R) -> Result<[f64; 2], TargetError> {
        Err(TargetError::Unsupported(self.name().to_string()))
    }

    /// Half-width `L` of a box `[-L, L]^2` holding all but a negligible
    /// fraction of the mass.
    fn support_box(&self) -> f64 {
        10.0
    }

    fn grid_map(&self) -> GridMap {
        GridMap::Linear
    }

    /// Analytic `log Z`, when known.
    fn known_log_z(&self) -> Option<f64> {
        None
    }
}

/// Coordinate map used by the quadrature along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMap {
    /// Uniform nodes in `z`.
    Linear,
    /// `z = scale * sinh(u)` with uniform nodes in `u`; concentrates nodes
    /// near the origin and reaches far tails cheaply.
    Sinh { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetKind {
    /// `log_scale - sum_i ((z_i - mean_i) / std_i)^2 / 2`.
    Gaussian { mean: [f64; 2], std: [f64; 2], log_scale: f64 },
    /// Equal-weight isotropic components, each unnormalized `exp(-|z-c|^2 / 2 s^2)`.
    Mixture { centers: Vec<[f64; 2]>, std: f64 },
    /// Annuli centered at the origin with radial profile `exp(-(r-R)^2 / 2 w^2)`.
    Rings { radii: Vec<f64>, width: f64 },
    /// Two half annuli: a ring around `center` damped by `sigmoid(k (y - c_y))`,
    /// plus its point reflection through the origin.
    Moons { center: [f64; 2], radius: f64, width: f64, sharpness: f64 },
    /// Equal-weight bivariate Student-t components with identity shape.
    StudentMix { centers: Vec<[f64; 2]>, nu: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    name: String,
    kind: TargetKind,
}

impl Target {
    pub fn new(name: impl Into<String>, kind: TargetKind) -> Self {
        Target { name: name.into(), kind }
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn by_name(name: &str) -> Result<Target, TargetError> {
        let t = match name {
            "gaussian" => Target::new(
                name,
                TargetKind::Gaussian {
                    mean: [0.0, 0.0],
                    std: [1.0, 1.0],
                    log_scale: 0.0,
                },
            ),
            "gauss8" => Target::new(
                name,
                TargetKind::Mixture {
                    centers: (0..8)
                        .map(|i| {
                            let a = 2.0 * PI * i as f64 / 8.0;
                            [4.0 * a.cos(), 4.0 * a.sin()]
                        })
                        .collect(),
                    std: 0.3,
                },
            ),
            "ring" => Target::new(
                name,
                TargetKind::Rings {
                    radii: vec![3.0],
                    width: 0.2,
                },
            ),
            "rings2" => Target::new(
                name,
                TargetKind::Rings {
                    radii: vec![2.0, 4.0],
                    width: 0.2,
                },
            ),
            "moons" => Target::new(
                name,
                TargetKind::Moons {
                    center: [-1.25, -0.625],
                    radius: 2.5,
                    width: 0.25,
                    sharpness: 3.0,
                },
            ),
            "tmix" => Target::new(
                name,
                TargetKind::StudentMix {
                    centers: vec![[-3.0, 0.0], [3.0, 0.0]],
                    nu: 3.0,
                    scale: 1.0,
                },
            ),
            _ => return Err(TargetError::Unknown(name.to_string())),
        };
        Ok(t)
    }

    pub fn all() -> Vec<Target> {
        NAMES.iter().map(|n| Target::by_name(n).expect("registry name")).collect()
    }

    /// Diagonal Gaussian scaled so that its normalizer is exactly `exp(log_z)`.
    pub fn scaled_gaussian(mean: [f64; 2], std: [f64; 2], log_z: f64) -> Target {
        let log_scale = log_z - (2.0 * PI * std[0] * std[1]).ln();
        Target::new("scaled-gaussian", TargetKind::Gaussian { mean, std, log_scale })
    }

    /// Half-width of a window suitable for plots.
    pub fn plot_extent(&self) -> f64 {
        match &self.kind {
            TargetKind::Gaussian { mean, std, .. } => {
                (mean[0].abs().max(mean[1].abs()) + 4.0 * std[0].max(std[1])).max(4.0)
            }
            TargetKind::StudentMix { .. } => 8.0,
            _ => 6.0,
        }
    }
}

/// `log int_0^inf r exp(-(r-R)^2 / 2 w^2) dr + log 2 pi`.
fn ring_log_mass(radius: f64, width: f64) -> f64 {
    let a = radius / width;
    let phi = 0.5 * erfc(-a / std::f64::consts::SQRT_2);
    let inner = width * width * (-0.5 * a * a).exp() + radius * width * (2.0 * PI).sqrt() * phi;
    (2.0 * PI).ln() + inner.ln()
}

/// Radius drawn from density proportional to `r exp(-(r-R)^2 / 2 w^2)` on
/// `r > 0`, by rejection from a shifted Gaussian envelope. The envelope uses
/// `log(r/R) <= r/R - 1`, so the acceptance ratio is `(r/R) exp(-(r-R)/R)`.
fn draw_ring_radius<R: Rng + ?Sized>(rng: &mut R, radius: f64, width: f64) -> f64 {
    let shift = radius + width * width / radius;
    loop {
        let g: f64 = rng.sample(StandardNormal);
        let r = shift + width * g;
        if r <= 0.0 {
            continue;
        }
        let accept = (r / radius) * (-(r - radius) / radius).exp();
        if rng.random::<f64>() < accept {
            return r;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lse_fold<T: Real>(terms: impl Iterator<Item = T>) -> T {
    terms.reduce(|a, b| a.log_add_exp(b)).expect("at least one component")
}

fn moon_term<T: Real>(z: [T; 2], c: [f64; 2], radius: f64, width: f64, k: f64) -> T {
    let dx = z[0] - c[0];
    let dy = z[1] - c[1];
    let r = (dx.square() + dy.square()).sqrt();
    -(r - radius).square() / (2.0 * width * width) + (dy * k).ln_sigmoid()
}

impl Density2D for Target {
    fn name(&self) -> &str {
        &self.name
    }

    fn log_density<T: Real>(&self, z: [T; 2]) -> T {
        match &self.kind {
            TargetKind::Gaussian { mean, std, log_scale } => {
                let a = (z[0] - mean[0]) / std[0];
                let b = (z[1] - mean[1]) / std[1];
                -(a.square() + b.square()) * 0.5 + *log_scale
            }
            TargetKind::Mixture { centers, std } => {
                let inv = 1.0 / (2.0 * std * std);
                lse_fold(centers.iter().map(|c| -((z[0] - c[0]).square() + (z[1] - c[1]).square()) * inv))
            }
            TargetKind::Rings { radii, width } => {
                let r = (z[0].square() + z[1].square()).sqrt();
                let inv = 1.0 / (2.0 * width * width);
                lse_fold(radii.iter().map(|&rr| -(r - rr).square() * inv))
            }
            TargetKind::Moons {
                center,
                radius,
                width,
                sharpness,
            } => {
                let a = moon_term(z, *center, *radius, *width, *sharpness);
                let b = moon_term([-z[0], -z[1]], *center, *radius, *width, *sharpness);
                a.log_add_exp(b)
            }
            TargetKind::StudentMix { centers, nu, scale } => {
                let p = -(nu + 2.0) / 2.0;
                let inv = 1.0 / (nu * scale * scale);
                lse_fold(centers.iter().map(|c| {
                    let q = ((z[0] - c[0]).square() + (z[1] - c[1]).square()) * inv;
                    (q + 1.0).ln() * p
                }))
            }
        }
    }

    fn has_exact_sampler(&self) -> bool {
        true
    }

    fn draw_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 2], TargetError> {
        Ok(match &self.kind {
            TargetKind::Gaussian { mean, std, .. } => {
                let g: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [mean[0] + std[0] * g[0], mean[1] + std[1] * g[1]]
            }
            TargetKind::Mixture { centers, std } => {
                let c = centers[rng.random_range(0..centers.len())];
                let g: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [c[0] + std * g[0], c[1] + std * g[1]]
            }
            TargetKind::Rings { radii, width } => {
                let masses: Vec<f64> = radii.iter().map(|&r| ring_log_mass(r, *width)).collect();
                let top = masses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = masses.iter().map(|m| (m - top).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = radii.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                let r = draw_ring_radius(rng, radii[pick], *width);
                let a = 2.0 * PI * rng.random::<f64>();
                [r * a.cos(), r * a.sin()]
            }
            TargetKind::Moons {
                center,
                radius,
                width,
                sharpness,
            } => {
                // Both halves carry exactly half the ring mass, so they are
                // equally likely.
                let flip = rng.random::<bool>();
                let p = loop {
                    let r = draw_ring_radius(rng, *radius, *width);
                    let a = 2.0 * PI * rng.random::<f64>();
                    let (dx, dy) = (r * a.cos(), r * a.sin());
                    if rng.random::<f64>() < sigmoid(sharpness * dy) {
                        break [center[0] + dx, center[1] + dy];
                    }
                };
                if flip {
                    [-p[0], -p[1]]
                } else {
                    p
                }
            }
            TargetKind::StudentMix { centers, nu, scale } => {
                let c = centers[rng.random_range(0..centers.len())];
                let chi = ChiSquared::new(*nu).expect("nu > 0").sample(rng);
                let s = scale / (chi / nu).sqrt();
                let g: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [c[0] + s * g[0], c[1] + s * g[1]]
            }
        })
    }

    fn support_box(&self) -> f64 {
        match &self.kind {
            TargetKind::Gaussian { mean, std, .. } => {
                (mean[0].abs().max(mean[1].abs()) + 10.0 * std[0].max(std[1])).max(10.0)
            }
            // Tail mass of a nu = 3 bivariate t beyond radius r is
            // (1 + r^2/3)^(-3/2); 5000 scale units put it below 1e-10.
            TargetKind::StudentMix { scale, .. } => 5000.0 * scale,
            _ => 10.0,
        }
    }

    fn grid_map(&self) -> GridMap {
        match &self.kind {
            TargetKind::StudentMix { scale, .. } => GridMap::Sinh { scale: *scale },
            _ => GridMap::Linear,
        }
    }

    fn known_log_z(&self) -> Option<f64> {
        Some(match &self.kind {
            TargetKind::Gaussian { std, log_scale, .. } => log_scale + (2.0 * PI * std[0] * std[1]).ln(),
            TargetKind::Mixture { centers, std } => (centers.len() as f64 * 2.0 * PI * std * std).ln(),
            TargetKind::Rings { radii, width } => lse_fold(radii.iter().map(|&r| ring_log_mass(r, *width))),
            // sigmoid(k y) + sigmoid(-k y) = 1 and the ring is symmetric in y
            // about its center, so each moon holds half a ring.
            TargetKind::Moons { radius, width, .. } => ring_log_mass(*radius, *width),
            // int (1 + |x|^2 / (nu s^2))^(-(nu+2)/2) dx = 2 pi s^2 for any nu.
            TargetKind::StudentMix { centers, scale, .. } => (centers.len() as f64 * 2.0 * PI * scale * scale).ln(),
        })
    }
}

/// `n` exact draws; draw `i` uses its own stream so the result is
/// independent of evaluation order.
pub fn sample_exact<D: Density2D>(target: &D, n: usize, seed: u64) -> Result<Vec<[f64; 2]>, TargetError> {
    if !target.has_exact_sampler() {
        return Err(TargetError::Unsupported(target.name().to_string()));
    }
    let streams = Streams::new(seed);
    (0..n)
        .into_par_iter()
        .map(|i| target.draw_exact(&mut streams.at(Domain::Exact, i as u64, 0)))
        .collect()
}

/// Quadrature nodes along one axis: positions, and log of (Simpson weight x Jacobian).
fn axis_nodes(grid_n: usize, half_width: f64, map: GridMap) -> (Vec<f64>, Vec<f64>) {
    let (u_max, to_z): (f64, Box<dyn Fn(f64) -> (f64, f64)>) = match map {
        GridMap::Linear => (half_width, Box::new(|u| (u, 0.0))),
        GridMap::Sinh { scale } => (
            (half_width / scale).asinh(),
            Box::new(move |u: f64| (scale * u.sinh(), (scale * u.cosh()).ln())),
        ),
    };
    let h = 2.0 * u_max / grid_n as f64;
    let mut z = Vec::with_capacity(grid_n + 1);
    let mut lw = Vec::with_capacity(grid_n + 1);
    for i in 0..=grid_n {
        let u = -u_max + h * i as f64;
        let simpson = if i == 0 || i == grid_n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let (zi, log_jac) = to_z(u);
        z.push(zi);
        lw.push((simpson * h / 3.0).ln() + log_jac);
    }
    (z, lw)
}

/// Log of the tensor-product Simpson integral of `exp(log_f)` over
/// `[-half_width, half_width]^2`, computed with a max shift per row.
pub fn quadrature_log_integral<F>(log_f: F, grid_n: usize, half_width: f64, map: GridMap) -> f64
where
    F: Fn([f64; 2]) -> f64 + Sync,
{
    let (z, lw) = axis_nodes(grid_n, half_width, map);
    let rows: Vec<(f64, f64)> = (0..=grid_n)
        .into_par_iter()
        .map(|i| {
            let vals: Vec<f64> = (0..=grid_n).map(|j| log_f([z[i], z[j]]) + lw[i] + lw[j]).collect();
            let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return (m, 0.0);
            }
            (m, vals.iter().map(|v| (v - m).exp()).sum())
        })
        .collect();
    let m = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = rows
        .iter()
        .filter(|r| r.0 > f64::NEG_INFINITY)
        .map(|(rm, rs)| rs * (rm - m).exp())
        .sum();
    m + s.ln()
}

fn check_grid(grid_n: usize) -> Result<(), TargetError> {
    if grid_n < 64 || !grid_n.is_multiple_of(2) {
        return Err(TargetError::InvalidGrid(format!("grid_n must be even and >= 64, got {grid_n}")));
    }
    Ok(())
}

/// Numerical `log Z` on a `grid_n`-interval Simpson grid per axis.
///
/// `half_width` defaults to the target's support box and may not be
/// smaller than it. The same integral is recomputed on a grid twice as fine;
/// a change of 1e-4 or more is reported as non-convergence.
pub fn quadrature_log_z<D: Density2D>(target: &D, grid_n: usize, half_width: Option<f64>) -> Result<f64, TargetError> {
    check_grid(grid_n)?;
    let support = target.support_box();
    let l = half_width.unwrap_or(support);
    if !(l >= support) {
        return Err(TargetError::InvalidGrid(format!(
            "box half-width {l} does not cover the support box {support}"
        )));
    }
    let f = |z: [f64; 2]| target.log_density(z);
    let coarse = quadrature_log_integral(f, grid_n, l, target.grid_map());
    let fine = quadrature_log_integral(f, 2 * grid_n, l, target.grid_map());
    let diff = (fine - coarse).abs();
    if !(diff < 1e-4) {
        return Err(TargetError::NonConvergence {
            grid_n,
            finer: 2 * grid_n,
            diff,
        });
    }
    Ok(coarse)
}

/// Default quadrature resolution.
pub const DEFAULT_GRID: usize = 1024;

/// Mean and covariance of the normalized target by quadrature.
pub fn quadrature_moments<D: Density2D>(target: &D, grid_n: usize) -> Result<([f64; 2], [[f64; 2]; 2]), TargetError> {
    check_grid(grid_n)?;
    let l = target.support_box();
    let map = target.grid_map();
    let log_z = quadrature_log_integral(|z| target.log_density(z), grid_n, l, map);
    let (z, lw) = axis_nodes(grid_n, l, map);
    let acc = (0..=grid_n)
        .into_par_iter()
        .map(|i| {
            let mut a = [0.0f64; 5];
            for j in 0..=grid_n {
                let p = (target.log_density([z[i], z[j]]) + lw[i] + lw[j] - log_z).exp();
                a[0] += p * z[i];
                a[1] += p * z[j];
                a[2] += p * z[i] * z[i];
                a[3] += p * z[i] * z[j];
                a[4] += p * z[j] * z[j];
            }
            a
        })
        .reduce(|| [0.0; 5], |x, y| std::array::from_fn(|k| x[k] + y[k]));
    let mean = [acc[0], acc[1]];
    let cov = [
        [acc[2] - mean[0] * mean[0], acc[3] - mean[0] * mean[1]],
        [acc[3] - mean[0] * mean[1], acc[4] - mean[1] * mean[1]],
    ];
    Ok((mean, cov))
}
