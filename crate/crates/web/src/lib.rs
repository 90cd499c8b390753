//! WebAssembly bindings for the browser demo in `www/`: a target density
//! backdrop, one-shot AIS runs, and a trainer that advances one epoch at a
//! time so the page can redraw between steps.

use ais_core::kernels::{KernelConfig, KernelKind};
use ais_core::objective::{epoch_seed, gradient_estimate, Adam, GradOptions, Objective, ObjectiveError, Trainable};
use ais_core::path::{InitSpec, Layout, Path, PathError, PathKind, PathParams, Schedule};
use ais_core::sampler::{ess, log_z_estimate, Ais, SamplerError};
use ais_core::targets::{quadrature_log_z, Density2D, Target, TargetError, NAMES};
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum WebError {
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("{0}")]
    Invalid(String),
}

fn js(e: WebError) -> JsError {
    JsError::new(&e.to_string())
}

/// Grid points per axis for the reference log Z.
const ORACLE_GRID: usize = 256;

#[wasm_bindgen(js_name = targetNames)]
pub fn target_names() -> Vec<String> {
    NAMES.iter().map(|s| s.to_string()).collect()
}

/// Half-width of the square the page draws for `target`.
#[wasm_bindgen]
pub fn extent(target: &str) -> Result<f64, JsError> {
    Ok(Target::by_name(target).map_err(|e| js(e.into()))?.plot_extent())
}

pub fn density_grid(target: &str, size: usize) -> Result<Vec<f64>, WebError> {
    let t = Target::by_name(target)?;
    if size < 2 {
        return Err(WebError::Invalid("grid needs at least 2 points per axis".into()));
    }
    let l = t.plot_extent();
    let at = |i: usize| -l + 2.0 * l * i as f64 / (size - 1) as f64;
    let mut out = Vec::with_capacity(size * size);
    // Row-major from the top edge, as canvas pixels are laid out.
    for row in 0..size {
        let y = at(size - 1 - row);
        for col in 0..size {
            out.push(t.log_density([at(col), y]));
        }
    }
    Ok(out)
}

/// Unnormalized log density on a `size` x `size` grid over the plot square.
#[wasm_bindgen]
pub fn density(target: &str, size: usize) -> Result<Vec<f64>, JsError> {
    density_grid(target, size).map_err(js)
}

/// Final particles of one AIS run with their weights.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Particles {
    xy: Vec<f64>,
    log_w: Vec<f64>,
    log_z: f64,
    elbo: f64,
    ess: f64,
}

#[wasm_bindgen]
impl Particles {
    /// Interleaved `x0, y0, x1, y1, ...`.
    #[wasm_bindgen(getter)]
    pub fn xy(&self) -> Vec<f64> {
        self.xy.clone()
    }

    #[wasm_bindgen(getter, js_name = logW)]
    pub fn log_w(&self) -> Vec<f64> {
        self.log_w.clone()
    }

    #[wasm_bindgen(getter, js_name = logZ)]
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    #[wasm_bindgen(getter)]
    pub fn elbo(&self) -> f64 {
        self.elbo
    }

    #[wasm_bindgen(getter)]
    pub fn ess(&self) -> f64 {
        self.ess
    }
}

fn sample(path: &Path<Target>, kernel: KernelConfig, phi: &[f64], n: usize, seed: u64) -> Result<Particles, WebError> {
    if n == 0 {
        return Err(WebError::Invalid("need at least one particle".into()));
    }
    let b = Ais::new(path, kernel).forward(phi, n, seed)?;
    Ok(Particles {
        xy: b.points.iter().flat_map(|p| *p).collect(),
        log_z: log_z_estimate(&b.log_w),
        elbo: b.log_w.iter().sum::<f64>() / n as f64,
        ess: ess(&b.log_w),
        log_w: b.log_w,
    })
}

pub fn run_vanilla(target: &str, kernel: &str, steps: usize, n: usize, step: f64, seed: u64) -> Result<Particles, WebError> {
    let kind: KernelKind = kernel.parse()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(WebError::Invalid("step size must be positive".into()));
    }
    let path = Path::new(Target::by_name(target)?, PathKind::Geometric, Schedule::linear(steps)?, Layout::new(4, steps));
    let params = PathParams::init(
        &InitSpec {
            step,
            ..InitSpec::default()
        },
        steps,
        seed,
    );
    sample(&path, KernelConfig::new(kind), &params.values, n, seed)
}

/// Untrained AIS along the geometric path with a linear schedule.
#[wasm_bindgen(js_name = runAis)]
pub fn run_ais(target: &str, kernel: &str, steps: usize, n: usize, step: f64, seed: u64) -> Result<Particles, JsError> {
    run_vanilla(target, kernel, steps, n, step, seed).map_err(js)
}

/// Quadrature log Z of `target`, for comparison with the estimates.
#[wasm_bindgen(js_name = referenceLogZ)]
pub fn reference_log_z(target: &str) -> Result<f64, JsError> {
    let t = Target::by_name(target).map_err(|e| js(e.into()))?;
    quadrature_log_z(&t, ORACLE_GRID, None).map_err(|e| js(e.into()))
}

/// Neural-path sampler trained one epoch per call.
#[wasm_bindgen]
pub struct Trainer {
    path: Path<Target>,
    kernel: KernelConfig,
    params: PathParams,
    adam: Adam,
    mask: Vec<bool>,
    grad: GradOptions,
    batch: usize,
    seed: u64,
    epoch: usize,
}

impl Trainer {
    pub fn create(target: &str, kernel: &str, steps: usize, objective: &str, seed: u64) -> Result<Trainer, WebError> {
        let kind: KernelKind = kernel.parse()?;
        let objective: Objective = objective.parse()?;
        let target = Target::by_name(target)?;
        if objective == Objective::Pj && !target.has_exact_sampler() {
            return Err(WebError::Invalid("the Jeffreys objective needs exact target samples".into()));
        }
        let path = Path::new(target, PathKind::Neural, Schedule::linear(steps)?, Layout::new(4, steps));
        let params = PathParams::init(&InitSpec::default(), steps, seed);
        Ok(Trainer {
            mask: Trainable::all_for(PathKind::Neural, kind).mask(&params.layout),
            adam: Adam::new(params.values.len(), 0.03),
            kernel: KernelConfig::new(kind),
            path,
            params,
            grad: GradOptions {
                objective,
                ..GradOptions::default()
            },
            batch: 256,
            seed,
            epoch: 0,
        })
    }

    /// One gradient step; returns the loss of the batch it was computed on.
    pub fn advance(&mut self) -> Result<f64, WebError> {
        let ais = Ais::new(&self.path, self.kernel);
        let r = gradient_estimate(&ais, &self.params.values, &self.mask, &self.grad, self.batch, epoch_seed(self.seed, self.epoch))?;
        if !r.loss.is_finite() {
            return Err(WebError::Invalid(format!("loss diverged at epoch {}", self.epoch)));
        }
        self.adam.step(&mut self.params.values, &r.total)?;
        self.epoch += 1;
        Ok(r.loss)
    }

    pub fn draw(&self, n: usize, seed: u64) -> Result<Particles, WebError> {
        sample(&self.path, self.kernel, &self.params.values, n, seed)
    }
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(target: &str, kernel: &str, steps: usize, objective: &str, seed: u64) -> Result<Trainer, JsError> {
        Trainer::create(target, kernel, steps, objective, seed).map_err(js)
    }

    /// Runs `epochs` steps and returns the last loss.
    pub fn step(&mut self, epochs: usize) -> Result<f64, JsError> {
        let mut loss = f64::NAN;
        for _ in 0..epochs {
            loss = self.advance().map_err(js)?;
        }
        Ok(loss)
    }

    #[wasm_bindgen(getter)]
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Particles from the current parameters.
    pub fn particles(&self, n: usize, seed: u64) -> Result<Particles, JsError> {
        self.draw(n, seed).map_err(js)
    }
}
