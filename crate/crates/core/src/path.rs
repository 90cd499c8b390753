//! Annealing paths between a Gaussian proposal and the target.
//!
//! Two families are provided. The geometric path mixes log-densities,
//! `beta_k log pi~ + (1 - beta_k) log gamma_0`, with `beta_k` taken from a
//! [`Schedule`]. The neural path adds a learned correction `u(z, t)`:
//!
//! ```text
//! log gamma(t, z) = u(z, t) + (1 - t) (log gamma_0(z) - u(z, 0))
//!                           + t (log pi~(z) - u(z, 1)),   t = k / M
//! ```
//!
//! which equals `log gamma_0` at `t = 0` and `log pi~` at `t = 1` for any
//! `u`, and reduces to the linear geometric path when `u` is zero.
//!
//! All trainable quantities, including kernel step sizes, live in one flat
//! parameter vector described by a [`Layout`].

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{BaseReal, Dual, Real, Var};
use crate::rng::{Domain, Streams};
use crate::targets::Density2D;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("geometric schedule ratio must be finite and > 1, got {0}")]
    InvalidRatio(f64),
    #[error("number of bridging steps must be >= 1")]
    NoSteps,
    #[error("bridging index {k} outside 0..={steps}")]
    IndexOutOfRange { k: usize, steps: usize },
    #[error("parameter vector has length {got}, layout expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("parameter file: {0}")]
    Io(String),
    #[error("unknown {what} `{value}`")]
    UnknownName { what: &'static str, value: String },
}

/// Converts a parameter scalar into the scalar type an expression runs on.
pub trait Lift<P> {
    fn lift(p: P) -> Self;
}

impl<T: Real> Lift<T> for T {
    fn lift(p: T) -> T {
        p
    }
}

impl<T: BaseReal, const N: usize> Lift<T> for Dual<T, N> {
    fn lift(p: T) -> Self {
        Dual::constant(p)
    }
}

impl<'t> Lift<f64> for Var<'t> {
    fn lift(p: f64) -> Self {
        Var::constant(p)
    }
}

impl<const N: usize> Lift<f64> for Dual<Var<'_>, N> {
    fn lift(p: f64) -> Self {
        Dual::constant(Var::constant(p))
    }
}

macro_rules! name_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $ty {
            type Err = $crate::path::PathError;
            fn from_str(s: &str) -> Result<Self, $crate::path::PathError> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err($crate::path::PathError::UnknownName { what: $what, value: s.to_string() }),
                }
            }
        }
    };
}
pub(crate) use name_enum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Geometric,
    Neural,
}
name_enum!(PathKind, "path", Geometric => "geometric", Neural => "neural");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Geometric,
}
name_enum!(ScheduleKind, "schedule", Linear => "linear", Geometric => "geometric");

/// Placement of the `M + 1` inverse temperatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    ratio: f64,
    steps: usize,
}

impl Schedule {
    /// `ratio` is only used by the geometric kind and defaults to
    /// `10^(1/M)`.
    pub fn new(kind: ScheduleKind, steps: usize, ratio: Option<f64>) -> Result<Self, PathError> {
        if steps == 0 {
            return Err(PathError::NoSteps);
        }
        let ratio = ratio.unwrap_or(10f64.powf(1.0 / steps as f64));
        if kind == ScheduleKind::Geometric && !(ratio.is_finite() && ratio > 1.0) {
            return Err(PathError::InvalidRatio(ratio));
        }
        Ok(Schedule { kind, ratio, steps })
    }

    pub fn linear(steps: usize) -> Result<Self, PathError> {
        Schedule::new(ScheduleKind::Linear, steps, None)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Linear: `k / M`. Geometric: `(g^k - 1) / (g^M - 1)`.
    pub fn beta(&self, k: usize) -> Result<f64, PathError> {
        let m = self.steps;
        if k > m {
            return Err(PathError::IndexOutOfRange { k, steps: m });
        }
        if k == 0 {
            return Ok(0.0);
        }
        if k == m {
            return Ok(1.0);
        }
        Ok(match self.kind {
            ScheduleKind::Linear => k as f64 / m as f64,
            ScheduleKind::Geometric => {
                let lg = self.ratio.ln();
                (lg * k as f64).exp_m1() / (lg * m as f64).exp_m1()
            }
        })
    }

    pub fn betas(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.beta(k).expect("in range")).collect()
    }
}

/// Offsets of each parameter group inside the flat vector.
///
/// Order: proposal mean (2), proposal log std (2), hidden weights (3H, row
/// major with inputs `z1, z2, t`), hidden biases (H), output weights (H),
/// output bias (1), log step sizes (M, or 1 when tied), random-walk log
/// scales (2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub hidden: usize,
    pub step_slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Mean,
    LogStd,
    HiddenWeights,
    HiddenBias,
    OutputWeights,
    OutputBias,
    LogStep,
    RwLogDiag,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::Mean,
        Group::LogStd,
        Group::HiddenWeights,
        Group::HiddenBias,
        Group::OutputWeights,
        Group::OutputBias,
        Group::LogStep,
        Group::RwLogDiag,
    ];
}

impl Layout {
    pub fn new(hidden: usize, step_slots: usize) -> Self {
        Layout { hidden, step_slots }
    }

    pub fn size(&self, g: Group) -> usize {
        let h = self.hidden;
        match g {
            Group::Mean | Group::LogStd | Group::RwLogDiag => 2,
            Group::HiddenWeights => 3 * h,
            Group::HiddenBias | Group::OutputWeights => h,
            Group::OutputBias => 1,
            Group::LogStep => self.step_slots,
        }
    }

    pub fn range(&self, g: Group) -> std::ops::Range<usize> {
        let start: usize = Group::ALL.iter().take_while(|&&x| x != g).map(|&x| self.size(x)).sum();
        start..start + self.size(g)
    }

    pub fn len(&self) -> usize {
        Group::ALL.iter().map(|&g| self.size(g)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slot holding the log step size for bridging index `k` (1-based).
    pub fn step_slot(&self, k: usize) -> usize {
        let r = self.range(Group::LogStep);
        if self.step_slots == 1 {
            r.start
        } else {
            r.start + k - 1
        }
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    pub layout: Layout,
    pub values: Vec<f64>,
}

/// Initial values for [`PathParams::init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub proposal_mean: [f64; 2],
    pub proposal_std: f64,
    pub step: f64,
    pub hidden: usize,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            proposal_mean: [0.0, 0.0],
            proposal_std: 3.0,
            step: 0.25,
            hidden: 4,
        }
    }
}

/// Kaiming-uniform bound for a LeakyReLU layer.
fn kaiming_bound(fan_in: usize, slope: f64) -> f64 {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    gain * (3.0 / fan_in as f64).sqrt()
}

impl PathParams {
    /// Hidden layer drawn Kaiming-uniform from the `Init` stream of `seed`;
    /// output layer zero so the neural path starts on the geometric one.
    pub fn init(spec: &InitSpec, step_slots: usize, seed: u64) -> Self {
        let layout = Layout::new(spec.hidden, step_slots);
        let mut values = vec![0.0; layout.len()];
        values[layout.range(Group::Mean)].copy_from_slice(&spec.proposal_mean);
        values[layout.range(Group::LogStd)].fill(spec.proposal_std.ln());
        let mut rng = Streams::new(seed).at(Domain::Init, 0, 0);
        let wb = kaiming_bound(3, LEAKY_SLOPE);
        for v in &mut values[layout.range(Group::HiddenWeights)] {
            *v = rng.random_range(-wb..wb);
        }
        let bb = 1.0 / 3f64.sqrt();
        for v in &mut values[layout.range(Group::HiddenBias)] {
            *v = rng.random_range(-bb..bb);
        }
        values[layout.range(Group::LogStep)].fill(spec.step.ln());
        PathParams { layout, values }
    }

    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self, PathError> {
        if values.len() != layout.len() {
            return Err(PathError::LengthMismatch {
                got: values.len(),
                expected: layout.len(),
            });
        }
        Ok(PathParams { layout, values })
    }

    pub fn group(&self, g: Group) -> &[f64] {
        &self.values[self.layout.range(g)]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        let r = self.layout.range(g);
        &mut self.values[r]
    }

    /// Little-endian `f64` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_bytes(layout: Layout, bytes: &[u8]) -> Result<Self, PathError> {
        if !bytes.len().is_multiple_of(8) {
            return Err(PathError::Io(format!("{} bytes is not a whole number of f64 values", bytes.len())));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        PathParams::new(layout, values)
    }

    /// JSON description of the layout that accompanies the binary file.
    pub fn sidecar(&self, extra: serde_json::Value) -> serde_json::Value {
        let groups: serde_json::Map<String, serde_json::Value> = Group::ALL
            .iter()
            .map(|&g| {
                let r = self.layout.range(g);
                let name = serde_json::to_value(g).expect("group name");
                (
                    name.as_str().expect("string").to_string(),
                    serde_json::json!({ "offset": r.start, "len": r.len() }),
                )
            })
            .collect();
        serde_json::json!({
            "dtype": "f64",
            "endianness": "little",
            "len": self.values.len(),
            "layout": self.layout,
            "groups": groups,
            "meta": extra,
        })
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// `u(z, t)`: one hidden LeakyReLU layer, linear scalar output.
pub fn eval_u<P, S>(layout: &Layout, phi: &[P], z: [S; 2], t: S) -> S
where
    P: Real,
    S: Real + Lift<P>,
{
    let h = layout.hidden;
    let w1 = layout.range(Group::HiddenWeights).start;
    let b1 = layout.range(Group::HiddenBias).start;
    let w2 = layout.range(Group::OutputWeights).start;
    let b2 = layout.range(Group::OutputBias).start;
    let mut out = S::lift(phi[b2]);
    for j in 0..h {
        let row = w1 + 3 * j;
        let pre = S::lift(phi[row]) * z[0] + S::lift(phi[row + 1]) * z[1] + S::lift(phi[row + 2]) * t + S::lift(phi[b1 + j]);
        out = out + S::lift(phi[w2 + j]) * pre.leaky_relu(LEAKY_SLOPE);
    }
    out
}

/// Normalized diagonal Gaussian `log gamma_0(z)`.
pub fn log_proposal<P, S>(layout: &Layout, phi: &[P], z: [S; 2]) -> S
where
    P: Real,
    S: Real + Lift<P>,
{
    let m = layout.range(Group::Mean).start;
    let s = layout.range(Group::LogStd).start;
    let mut acc = S::cst(-(2.0 * PI).ln());
    for i in 0..2 {
        let log_std = S::lift(phi[s + i]);
        let a = (z[i] - S::lift(phi[m + i])) * (-log_std).exp();
        acc = acc - a.square() * 0.5 - log_std;
    }
    acc
}

/// Reparameterized proposal draw `mean + std * eps`.
pub fn proposal_point<P: Real>(layout: &Layout, phi: &[P], eps: [f64; 2]) -> [P; 2] {
    let m = layout.range(Group::Mean).start;
    let s = layout.range(Group::LogStd).start;
    [0, 1].map(|i| phi[m + i] + phi[s + i].exp() * eps[i])
}

fn mix<S: Real>(b: f64, log_target: S, log_prop: S) -> S {
    log_target * b + log_prop * (1.0 - b)
}

/// A fully specified annealing path for one target.
#[derive(Debug, Clone)]
pub struct Path<D> {
    pub target: D,
    pub kind: PathKind,
    pub schedule: Schedule,
    pub layout: Layout,
    betas: Vec<f64>,
}

impl<D: Density2D> Path<D> {
    pub fn new(target: D, kind: PathKind, schedule: Schedule, layout: Layout) -> Self {
        let betas = schedule.betas();
        Path {
            target,
            kind,
            schedule,
            layout,
            betas,
        }
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps
    }

    /// `log gamma_k(z)`. Index 0 is exactly the proposal and index `M`
    /// exactly the target, whatever the parameters.
    pub fn log_gamma<P, S>(&self, phi: &[P], k: usize, z: [S; 2]) -> S
    where
        P: Real,
        S: Real + Lift<P>,
    {
        let m = self.steps();
        assert!(k <= m, "bridging index {k} > {m}");
        if k == 0 {
            return log_proposal(&self.layout, phi, z);
        }
        if k == m {
            return self.target.log_density(z);
        }
        let lp = self.target.log_density(z);
        let lg = log_proposal(&self.layout, phi, z);
        match self.kind {
            PathKind::Geometric => mix(self.betas[k], lp, lg),
            PathKind::Neural => {
                let t = k as f64 / m as f64;
                let u_t = eval_u(&self.layout, phi, z, S::cst(t));
                let u_0 = eval_u(&self.layout, phi, z, S::cst(0.0));
                let u_1 = eval_u(&self.layout, phi, z, S::cst(1.0));
                u_t - u_0 * (1.0 - t) - u_1 * t + mix(t, lp, lg)
            }
        }
    }

    /// `log gamma_k(z)` and its gradient in `z`.
    pub fn log_gamma_grad<P>(&self, phi: &[P], k: usize, z: [P; 2]) -> (P, [P; 2])
    where
        P: BaseReal,
        Dual<P, 2>: Lift<P>,
    {
        let out = self.log_gamma::<P, Dual<P, 2>>(phi, k, Dual::seed(z));
        (out.v, out.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradient, Tape};
    use crate::targets::Target;

    fn random_params(seed: u64, hidden: usize) -> PathParams {
        let mut p = PathParams::init(
            &InitSpec {
                hidden,
                ..InitSpec::default()
            },
            1,
            seed,
        );
        let mut rng = Streams::new(seed).at(Domain::Validation, 0, 0);
        for v in p.values.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        p
    }

    #[test]
    fn schedule_examples() {
        let lin = Schedule::linear(4).unwrap();
        assert_eq!(lin.beta(2).unwrap(), 0.5);
        let g = Schedule::new(ScheduleKind::Geometric, 3, Some(2.0)).unwrap();
        assert_eq!(g.beta(3).unwrap(), 1.0);
        assert!((g.beta(1).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert!((g.beta(2).unwrap() - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(g.beta(0).unwrap(), 0.0);
    }

    #[test]
    fn schedule_errors() {
        assert!(matches!(
            Schedule::new(ScheduleKind::Geometric, 3, Some(1.0)),
            Err(PathError::InvalidRatio(_))
        ));
        assert!(matches!(Schedule::linear(0), Err(PathError::NoSteps)));
        assert!(matches!(
            Schedule::linear(2).unwrap().beta(3),
            Err(PathError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn schedules_are_strictly_increasing() {
        for kind in ScheduleKind::ALL {
            for m in [1, 2, 7, 128] {
                let b = Schedule::new(*kind, m, None).unwrap().betas();
                assert_eq!(b[0], 0.0);
                assert_eq!(b[m], 1.0);
                assert!(b.windows(2).all(|w| w[0] < w[1]), "{kind} {m}");
            }
        }
    }

    #[test]
    fn zero_network_is_zero() {
        let layout = Layout::new(4, 1);
        let phi = vec![0.0; layout.len()];
        assert_eq!(eval_u(&layout, &phi, [1.3, -2.0], 0.4), 0.0);
        let p = PathParams::init(&InitSpec::default(), 1, 5);
        assert_eq!(eval_u(&layout, &p.values, [1.3, -2.0], 0.4), 0.0);
    }

    #[test]
    fn network_matches_matrix_oracle() {
        let p = random_params(11, 4);
        let l = p.layout;
        let (z, t) = ([0.7, -1.9], 0.35);
        // Plain matrix arithmetic on the documented layout.
        let w1 = p.group(Group::HiddenWeights);
        let b1 = p.group(Group::HiddenBias);
        let w2 = p.group(Group::OutputWeights);
        let b2 = p.group(Group::OutputBias)[0];
        let x = [z[0], z[1], t];
        let mut y = b2;
        for j in 0..4 {
            let a: f64 = (0..3).map(|i| w1[3 * j + i] * x[i]).sum::<f64>() + b1[j];
            y += w2[j] * if a > 0.0 { a } else { 0.01 * a };
        }
        assert!((eval_u(&l, &p.values, z, t) - y).abs() < 1e-12);
    }

    fn neural_path(m: usize) -> Path<Target> {
        Path::new(
            Target::by_name("gauss8").unwrap(),
            PathKind::Neural,
            Schedule::linear(m).unwrap(),
            Layout::new(4, 1),
        )
    }

    #[test]
    fn neural_boundaries_are_pinned() {
        let path = neural_path(5);
        for s in 0..100 {
            let p = random_params(s, 4);
            let mut rng = Streams::new(s).at(Domain::Validation, 1, 0);
            let z = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let lg = log_proposal(&path.layout, &p.values, z);
            let lp = path.target.log_density(z);
            assert!((path.log_gamma(&p.values, 0, z) - lg).abs() < 1e-12);
            assert!((path.log_gamma(&p.values, 5, z) - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_correction_equals_linear_geometric_path() {
        let neural = neural_path(6);
        let geo = Path::new(neural.target.clone(), PathKind::Geometric, Schedule::linear(6).unwrap(), neural.layout);
        let p = PathParams::init(&InitSpec::default(), 1, 3);
        for k in 0..=6 {
            let z = [0.3 * k as f64 - 1.0, 2.0];
            assert_eq!(neural.log_gamma(&p.values, k, z), geo.log_gamma(&p.values, k, z));
        }
    }

    #[test]
    fn geometric_midpoint_is_average() {
        let target = Target::scaled_gaussian([1.0, -0.5], [1.0, 1.0], (2.0 * PI).ln());
        let path = Path::new(target.clone(), PathKind::Geometric, Schedule::linear(2).unwrap(), Layout::new(4, 1));
        let mut p = PathParams::init(&InitSpec::default(), 1, 0);
        p.group_mut(Group::LogStd).fill(0.0);
        let z = [0.4, 0.9];
        let lg = -(z[0] * z[0] + z[1] * z[1]) / 2.0 - (2.0 * PI).ln();
        let lp = -((z[0] - 1.0f64).powi(2) + (z[1] + 0.5f64).powi(2)) / 2.0;
        assert!((path.log_gamma(&p.values, 1, z) - 0.5 * (lg + lp)).abs() < 1e-14);
    }

    #[test]
    fn neural_path_is_finite_and_continuous_in_t() {
        let p = random_params(2, 4);
        let l = p.layout;
        let z = [1.0, -3.0];
        let d = 1e-6;
        let w_norm: f64 = p.values.iter().map(|v| v.abs()).sum();
        for i in 0..10 {
            let t = 0.1 * i as f64;
            let a = eval_u(&l, &p.values, z, t);
            let b = eval_u(&l, &p.values, z, t + d);
            assert!(a.is_finite());
            // |du/dt| is bounded by sum |w2_j| |w1_j,t|.
            assert!((b - a).abs() <= w_norm * w_norm * d);
        }
    }

    #[test]
    fn log_gamma_gradient_in_phi_passes_check() {
        let path = neural_path(8);
        let p = random_params(9, 4);
        for s in 0..20u64 {
            let mut rng = Streams::new(s).at(Domain::Validation, 2, 0);
            let k = rng.random_range(1..8);
            let z = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let check = check_gradient(|_t, phi| path.log_gamma(phi, k, [Var::constant(z[0]), Var::constant(z[1])]), &p.values, 1e-5, 1e-4).unwrap();
            assert!(check.passed, "k={k} z={z:?} {check:?}");
        }
    }

    #[test]
    fn network_gradient_passes_check() {
        let p = random_params(4, 4);
        let l = p.layout;
        let check = check_gradient(|_t, phi| eval_u(&l, phi, [Var::constant(0.3), Var::constant(-1.2)], Var::constant(0.6)), &p.values, 1e-5, 1e-4).unwrap();
        assert!(check.passed, "{check:?}");
    }

    #[test]
    fn nested_gradient_of_log_gamma_matches_fd_of_z_gradient() {
        let path = neural_path(4);
        let p = random_params(8, 4);
        let z = [0.8, 1.7];
        let tape = Tape::new();
        let phi = tape.vars(&p.values);
        let rows = tape
            .nested_gradient(z, &phi, |_t, zd| Ok(path.log_gamma::<Var, Dual<Var, 2>>(&phi, 2, zd)))
            .unwrap();
        let h = 1e-5;
        for j in 0..p.values.len() {
            let at = |delta: f64| {
                let mut v = p.values.clone();
                v[j] += delta;
                path.log_gamma_grad(&v, 2, z).1
            };
            let (up, dn) = (at(h), at(-h));
            for i in 0..2 {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                let err = (rows[i][j] - fd).abs() / fd.abs().max(rows[i][j].abs()).max(1e-3);
                assert!(err < 1e-4, "row {i} param {j}: {} vs {fd}", rows[i][j]);
            }
        }
    }

    #[test]
    fn params_roundtrip_through_bytes() {
        let p = random_params(1, 4);
        let q = PathParams::from_bytes(p.layout, &p.to_bytes()).unwrap();
        assert_eq!(p, q);
        assert!(PathParams::from_bytes(p.layout, &[0u8; 12]).is_err());
        assert!(matches!(
            PathParams::from_bytes(Layout::new(5, 1), &p.to_bytes()),
            Err(PathError::LengthMismatch { .. })
        ));
        let side = p.sidecar(serde_json::json!({}));
        assert_eq!(side["groups"]["log_step"]["len"], 1);
    }

    #[test]
    fn proposal_is_normalized() {
        let mut p = PathParams::init(&InitSpec::default(), 1, 0);
        p.group_mut(Group::Mean).copy_from_slice(&[0.5, -1.0]);
        p.group_mut(Group::LogStd).copy_from_slice(&[0.2f64.ln(), 1.5f64.ln()]);
        let l = p.layout;
        let v = crate::targets::quadrature_log_integral(|z| log_proposal(&l, &p.values, z), 512, 10.0, crate::targets::GridMap::Linear);
        assert!(v.abs() < 1e-9, "{v}");
    }
}
