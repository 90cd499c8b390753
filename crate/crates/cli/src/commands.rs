//! The subcommands.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use ais_core::kernels::KernelConfig;
use ais_core::objective::{train, Objective, ObjectiveError};
use ais_core::path::{Layout, Path, PathKind, PathParams, Schedule, ScheduleKind};
use ais_core::plot::{render_svg, PlotOptions};
use ais_core::rng::Streams;
use ais_core::sampler::{diagnostics, Ais, Diagnostics};
use ais_core::targets::{quadrature_log_z, Density2D, Target, DEFAULT_GRID, NAMES};
use log::{info, warn};

use crate::config::RunConfig;
use crate::params_io;
use crate::report::{BenchRow, CsvSink, EstimateRow, RunKey, TrainRow, BENCH_HEADER, ESTIMATE_HEADER, TRAIN_HEADER};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// One diagnostics row for the configured sampler.
    Estimate { params: Option<PathBuf> },
    /// Optimizes the path and step sizes; writes per-epoch rows and parameters.
    Train,
    /// Quadrature log Z of the target.
    Oracle { grid: usize },
    /// The sweep over `BENCH_STEPS` and every [`Method`].
    Bench,
    /// SVG of final particles colored by weight.
    Plot { params: Option<PathBuf>, output: Option<PathBuf> },
    ListTargets,
}

/// Bridging-distribution counts of the benchmark sweep.
pub const BENCH_STEPS: [usize; 7] = [2, 4, 8, 16, 32, 64, 128];

/// Candidate step sizes for untrained samplers.
pub const STEP_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

const EVAL_TAG: u64 = u64::MAX;
const TUNE_TAG: u64 = u64::MAX - 1;

/// Samplers compared by `bench`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Untrained, geometric path, geometric schedule.
    Vg,
    /// Untrained, geometric path, linear schedule.
    Vl,
    /// Neural path trained on inverse KL.
    Pkl,
    /// Neural path trained on the Jeffreys divergence.
    Pj,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vg, Method::Vl, Method::Pkl, Method::Pj];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Vg => "Vg",
            Method::Vl => "Vl",
            Method::Pkl => "PKL",
            Method::Pj => "PJ",
        }
    }
}

/// Seed of the evaluation batch, disjoint from training and tuning batches.
pub fn eval_seed(seed: u64) -> u64 {
    Streams::new(seed).derive(EVAL_TAG).seed()
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn build_path(
    cfg: &RunConfig,
    target: Target,
    kind: PathKind,
    schedule: ScheduleKind,
    steps: usize,
) -> Result<Path<Target>, CliError> {
    let schedule = Schedule::new(schedule, steps, cfg.schedule_ratio)?;
    let layout = Layout::new(cfg.hidden, cfg.kernel_config().step_slots(steps));
    Ok(Path::new(target, kind, schedule, layout))
}

/// Forward batch, plus a backward batch when the target has exact samples.
pub fn evaluate(
    path: &Path<Target>,
    kernel: KernelConfig,
    params: &PathParams,
    n: usize,
    seed: u64,
) -> Result<Diagnostics, CliError> {
    let ais = Ais::new(path, kernel);
    let fwd = ais.forward(&params.values, n, seed)?;
    let bwd = if path.target.has_exact_sampler() {
        Some(ais.backward(&params.values, n, seed)?)
    } else {
        None
    };
    Ok(diagnostics(&fwd.log_w, bwd.as_ref().map(|b| b.log_w.as_slice()))?)
}

fn run_key(cfg: &RunConfig) -> RunKey {
    RunKey {
        target: cfg.target.clone(),
        path: cfg.path.to_string(),
        schedule: cfg.schedule.to_string(),
        kernel: cfg.kernel.kind.to_string(),
    }
}

fn initial_params(cfg: &RunConfig, steps: usize) -> PathParams {
    PathParams::init(&cfg.init_spec(), cfg.kernel_config().step_slots(steps), cfg.seed)
}

fn params_for(cfg: &RunConfig, file: &Option<PathBuf>) -> Result<PathParams, CliError> {
    match file {
        Some(f) => params_io::load_for(f, cfg),
        None => Ok(initial_params(cfg, cfg.steps)),
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Executes `cmd` and returns the text meant for standard output.
pub fn run_command(cmd: &Command, cfg: &RunConfig, overwrite: bool) -> Result<String, CliError> {
    match cmd {
        Command::ListTargets => Ok(list_targets()),
        Command::Oracle { grid } => oracle(cfg, *grid),
        Command::Estimate { params } => with_workers(cfg.workers, || estimate(cfg, params, overwrite))?,
        Command::Train => with_workers(cfg.workers, || train_command(cfg, overwrite))?,
        Command::Bench => with_workers(cfg.workers, || bench(cfg, overwrite))?,
        Command::Plot { params, output } => with_workers(cfg.workers, || plot(cfg, params, output))?,
    }
}

fn list_targets() -> String {
    let mut out = String::from("name\texact_sampler\tlog_z\n");
    for name in NAMES {
        let t = Target::by_name(name).expect("registered");
        let z = t.known_log_z().map(|z| format!("{z:.6}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{name}\t{}\t{z}", t.has_exact_sampler());
    }
    out
}

fn oracle(cfg: &RunConfig, grid: usize) -> Result<String, CliError> {
    let target = Target::by_name(&cfg.target)?;
    let q = quadrature_log_z(&target, grid, None)?;
    info!("{}: quadrature on {grid} points per axis over [-{b}, {b}]^2", cfg.target, b = target.support_box());
    Ok(format!("{q:.9}\n"))
}

fn estimate(cfg: &RunConfig, params: &Option<PathBuf>, overwrite: bool) -> Result<String, CliError> {
    let target = Target::by_name(&cfg.target)?;
    let path = build_path(cfg, target, cfg.path, cfg.schedule, cfg.steps)?;
    let p = params_for(cfg, params)?;
    let start = Instant::now();
    let d = evaluate(&path, cfg.kernel_config(), &p, cfg.n_eval, eval_seed(cfg.seed))?;
    let row = EstimateRow::new(run_key(cfg), cfg.steps, cfg.n_eval, cfg.seed, &d, elapsed_ms(start));
    let file = cfg.output_dir().join("estimate.csv");
    CsvSink::open(&file, ESTIMATE_HEADER, overwrite)?.write(&row)?;
    Ok(format!(
        "log Z estimate {:.6}, ELBO {:.6}, ESS {:.4}; row appended to {}\n",
        d.log_z_hat,
        d.elbo,
        d.ess,
        file.display()
    ))
}

fn params_stem(cfg: &RunConfig) -> String {
    format!(
        "{}-{}-{}-M{}-{}-seed{}",
        cfg.target, cfg.path, cfg.kernel.kind, cfg.steps, cfg.objective, cfg.seed
    )
}

fn train_command(cfg: &RunConfig, overwrite: bool) -> Result<String, CliError> {
    let target = Target::by_name(&cfg.target)?;
    let path = build_path(cfg, target, cfg.path, cfg.schedule, cfg.steps)?;
    if cfg.path == PathKind::Neural && cfg.schedule != ScheduleKind::Linear {
        warn!("the neural path places its bridging points uniformly; the schedule setting is ignored");
    }
    let ais = Ais::new(&path, cfg.kernel_config());
    let init = initial_params(cfg, cfg.steps);
    let tc = cfg.train_config();
    let key = run_key(cfg);
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut tick = Instant::now();
    let result = train(&ais, &init, &tc, |rec| {
        let d = &rec.diagnostics;
        info!("epoch {}: loss {:.5}, ELBO {:.5}", rec.epoch, rec.loss, d.elbo);
        rows.push(TrainRow {
            target: key.target.clone(),
            path: key.path.clone(),
            schedule: key.schedule.clone(),
            kernel: key.kernel.clone(),
            objective: cfg.objective.to_string(),
            steps: cfg.steps,
            n: cfg.n_train,
            seed: cfg.seed,
            epoch: rec.epoch,
            loss: rec.loss,
            grad_norm: rec.grad_norm,
            log_z_est: d.log_z_hat,
            elbo: d.elbo,
            ess: d.ess,
            log_var: d.log_var,
            bdmc_gap: d.bdmc_gap,
            wall_ms: elapsed_ms(tick),
        });
        tick = Instant::now();
    });
    let dir = cfg.output_dir();
    let csv_path = dir.join("train.csv");
    let mut sink = CsvSink::open(&csv_path, TRAIN_HEADER, overwrite)?;
    for r in &rows {
        sink.write(r)?;
    }
    let stem = params_stem(cfg);
    match result {
        Ok(out) => {
            let bin = params_io::save(&out.params, &dir, &stem, cfg)?;
            let last = rows.last().map(|r| format!("final loss {:.6}, ", r.loss)).unwrap_or_default();
            Ok(format!(
                "{last}{} epochs written to {}; parameters saved to {}\n",
                rows.len(),
                csv_path.display(),
                bin.display()
            ))
        }
        Err(ObjectiveError::NonFiniteLoss { epoch, checkpoint }) => {
            let bin = params_io::save(&checkpoint, &dir, &format!("{stem}.checkpoint"), cfg)?;
            Err(CliError::Diverged { epoch, checkpoint: bin })
        }
        Err(e) => Err(e.into()),
    }
}

/// Picks the step size from [`STEP_GRID`] with the best ELBO on a pilot
/// batch of `cfg.n_train` particles.
pub fn tune_step(cfg: &RunConfig, path: &Path<Target>) -> Result<f64, CliError> {
    let kernel = cfg.kernel_config();
    let seed = Streams::new(cfg.seed).derive(TUNE_TAG).seed();
    let mut best = (f64::NEG_INFINITY, STEP_GRID[0]);
    for h in STEP_GRID {
        let mut spec = cfg.init_spec();
        spec.step = h;
        let p = PathParams::init(&spec, path.layout.step_slots, cfg.seed);
        let b = Ais::new(path, kernel).forward(&p.values, cfg.n_train, seed)?;
        let elbo = b.log_w.iter().sum::<f64>() / b.len() as f64;
        if elbo > best.0 {
            best = (elbo, h);
        }
    }
    Ok(best.1)
}

/// One benchmark cell: prepares the sampler for `method` at `steps`
/// bridging distributions and evaluates it on `cfg.n_eval` particles.
pub fn bench_cell(cfg: &RunConfig, steps: usize, method: Method, log_z_ref: f64) -> Result<BenchRow, CliError> {
    let start = Instant::now();
    let target = Target::by_name(&cfg.target)?;
    let (kind, schedule) = match method {
        Method::Vg => (PathKind::Geometric, ScheduleKind::Geometric),
        Method::Vl => (PathKind::Geometric, ScheduleKind::Linear),
        Method::Pkl | Method::Pj => (PathKind::Neural, ScheduleKind::Linear),
    };
    let path = build_path(cfg, target, kind, schedule, steps)?;
    let params = match method {
        Method::Vg | Method::Vl => {
            let mut spec = cfg.init_spec();
            spec.step = tune_step(cfg, &path)?;
            PathParams::init(&spec, path.layout.step_slots, cfg.seed)
        }
        Method::Pkl | Method::Pj => {
            let local = RunConfig {
                path: kind,
                steps,
                objective: if method == Method::Pkl { Objective::Pkl } else { Objective::Pj },
                ..cfg.clone()
            };
            let ais = Ais::new(&path, local.kernel_config());
            let init = initial_params(&local, steps);
            train(&ais, &init, &local.train_config(), |_| {})?.params
        }
    };
    let d = evaluate(&path, cfg.kernel_config(), &params, cfg.n_eval, eval_seed(cfg.seed))?;
    Ok(BenchRow {
        target: cfg.target.clone(),
        method: method.as_str().into(),
        path: kind.to_string(),
        schedule: schedule.to_string(),
        kernel: cfg.kernel.kind.to_string(),
        steps,
        n: cfg.n_eval,
        seed: cfg.seed,
        log_z_est: d.log_z_hat,
        elbo: d.elbo,
        ess: d.ess,
        log_var: d.log_var,
        bdmc_gap: d.bdmc_gap,
        log_z_ref,
        wall_ms: elapsed_ms(start),
    })
}

fn bench(cfg: &RunConfig, overwrite: bool) -> Result<String, CliError> {
    let target = Target::by_name(&cfg.target)?;
    let log_z_ref = quadrature_log_z(&target, DEFAULT_GRID, None)?;
    let file = cfg.output_dir().join("bench.csv");
    let mut sink = CsvSink::open(&file, BENCH_HEADER, overwrite)?;
    let mut out = String::new();
    for steps in BENCH_STEPS {
        for method in Method::ALL {
            let row = bench_cell(cfg, steps, method, log_z_ref)?;
            info!("M={steps} {}: ELBO {:.4} (reference {log_z_ref:.4})", row.method, row.elbo);
            let _ = writeln!(out, "M={steps:<4} {:<4} log Z {:.5}  ELBO {:.5}", row.method, row.log_z_est, row.elbo);
            sink.write(&row)?;
        }
    }
    let _ = writeln!(out, "reference log Z {log_z_ref:.6}; rows appended to {}", file.display());
    Ok(out)
}

fn plot(cfg: &RunConfig, params: &Option<PathBuf>, output: &Option<PathBuf>) -> Result<String, CliError> {
    let target = Target::by_name(&cfg.target)?;
    let extent = target.plot_extent();
    let path = build_path(cfg, target, cfg.path, cfg.schedule, cfg.steps)?;
    let p = params_for(cfg, params)?;
    let b = Ais::new(&path, cfg.kernel_config()).forward(&p.values, cfg.n_eval, eval_seed(cfg.seed))?;
    let opts = PlotOptions {
        extent,
        ..PlotOptions::default()
    };
    let svg = render_svg(&path.target, &b.points, &b.log_w, &opts);
    let file = output.clone().unwrap_or_else(|| {
        cfg.output_dir()
            .join(format!("plot-{}-{}-M{}.svg", cfg.target, cfg.path, cfg.steps))
    });
    if let Some(dir) = file.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(&file, &svg.text).map_err(|source| CliError::Io {
        path: file.clone(),
        source,
    })?;
    Ok(format!(
        "{} particles over {} contour levels written to {}\n",
        svg.circles,
        svg.contour_paths,
        file.display()
    ))
}
