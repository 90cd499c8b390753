//! Run configuration: JSON file, command-line overrides, validation.

use std::path::{Path as FsPath, PathBuf};

use ais_core::kernels::{KernelConfig, KernelKind};
use ais_core::objective::{GradOptions, Objective, TrainConfig, Trainable};
use ais_core::path::{InitSpec, PathKind, ScheduleKind};
use ais_core::targets::NAMES;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "AIS_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub leapfrog: usize,
    pub repeats: usize,
    pub tie_steps: bool,
    /// Initial step size for every bridging index.
    pub step_init: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: KernelKind::Rwmh,
            leapfrog: 1,
            repeats: 1,
            tie_steps: false,
            step_init: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub target: String,
    pub path: PathKind,
    pub schedule: ScheduleKind,
    /// Ratio of consecutive gaps for the geometric schedule.
    pub schedule_ratio: Option<f64>,
    pub kernel: KernelSection,
    #[serde(rename = "M")]
    pub steps: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub epochs: usize,
    pub lr: f64,
    pub objective: Objective,
    pub drop_score: bool,
    pub reuse_forward: bool,
    pub allow_single: bool,
    pub seed: u64,
    pub hidden: usize,
    pub proposal_std: f64,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target: "gaussian".into(),
            path: PathKind::Geometric,
            schedule: ScheduleKind::Linear,
            schedule_ratio: None,
            kernel: KernelSection::default(),
            steps: 8,
            n_train: 256,
            n_eval: 4096,
            epochs: 100,
            lr: 0.03,
            objective: Objective::Pkl,
            drop_score: false,
            reuse_forward: false,
            allow_single: false,
            seed: 0,
            hidden: 4,
            proposal_std: 3.0,
            workers: None,
            out_dir: None,
        }
    }
}

/// Command-line flags shared by every experiment subcommand. Each one, when
/// given, overrides the value from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// geometric or neural
    #[arg(long)]
    pub path: Option<PathKind>,
    /// linear or geometric
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub schedule_ratio: Option<f64>,
    /// rwmh, mala, hmc or ula
    #[arg(long)]
    pub kernel: Option<KernelKind>,
    #[arg(long)]
    pub leapfrog: Option<usize>,
    /// Kernel moves per bridging index
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub tie_steps: Option<bool>,
    #[arg(long)]
    pub step_init: Option<f64>,
    /// Number of bridging distributions
    #[arg(long = "M")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub train_n: Option<usize>,
    #[arg(long)]
    pub eval_n: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// pkl or pj
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub drop_score: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reuse_forward: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_single: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub proposal_std: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a JSON document. Errors name the offending key path.
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_file(path: &FsPath) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_json(&text)
    }

    /// File (or defaults), then flags, then validation.
    pub fn resolve(args: &ConfigArgs) -> Result<RunConfig, CliError> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(args);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, a: &ConfigArgs) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut self.target, &a.target);
        set(&mut self.path, &a.path);
        set(&mut self.schedule, &a.schedule);
        if a.schedule_ratio.is_some() {
            self.schedule_ratio = a.schedule_ratio;
        }
        set(&mut self.kernel.kind, &a.kernel);
        set(&mut self.kernel.leapfrog, &a.leapfrog);
        set(&mut self.kernel.repeats, &a.repeats);
        set(&mut self.kernel.tie_steps, &a.tie_steps);
        set(&mut self.kernel.step_init, &a.step_init);
        set(&mut self.steps, &a.steps);
        set(&mut self.n_train, &a.train_n);
        set(&mut self.n_eval, &a.eval_n);
        set(&mut self.epochs, &a.epochs);
        set(&mut self.lr, &a.lr);
        set(&mut self.objective, &a.objective);
        set(&mut self.drop_score, &a.drop_score);
        set(&mut self.reuse_forward, &a.reuse_forward);
        set(&mut self.allow_single, &a.allow_single);
        set(&mut self.seed, &a.seed);
        set(&mut self.hidden, &a.hidden);
        set(&mut self.proposal_std, &a.proposal_std);
        if a.workers.is_some() {
            self.workers = a.workers;
        }
        if a.out_dir.is_some() {
            self.out_dir = a.out_dir.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, message: String| {
            Err(CliError::Config {
                key: key.into(),
                message,
            })
        };
        if !NAMES.contains(&self.target.as_str()) {
            return bad("target", format!("unknown target {:?}; expected one of {}", self.target, NAMES.join(", ")));
        }
        if self.steps == 0 {
            return bad("M", "must be at least 1".into());
        }
        if self.n_train == 0 {
            return bad("n_train", "must be at least 1".into());
        }
        if self.n_eval < self.n_train {
            return bad("n_eval", format!("must be at least n_train ({})", self.n_train));
        }
        if self.kernel.leapfrog == 0 {
            return bad("kernel.leapfrog", "must be at least 1".into());
        }
        if self.kernel.repeats == 0 {
            return bad("kernel.repeats", "must be at least 1".into());
        }
        if !(self.kernel.step_init > 0.0 && self.kernel.step_init.is_finite()) {
            return bad("kernel.step_init", "must be positive and finite".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive and finite".into());
        }
        if !(self.proposal_std > 0.0 && self.proposal_std.is_finite()) {
            return bad("proposal_std", "must be positive and finite".into());
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1".into());
        }
        if let Some(r) = self.schedule_ratio {
            if !(r > 0.0 && r.is_finite() && r != 1.0) {
                return bad("schedule_ratio", "must be positive, finite and different from 1".into());
            }
        }
        if self.workers == Some(0) {
            return bad("workers", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            kind: self.kernel.kind,
            leapfrog: self.kernel.leapfrog,
            repeats: self.kernel.repeats,
            tie_steps: self.kernel.tie_steps,
        }
    }

    pub fn init_spec(&self) -> InitSpec {
        InitSpec {
            proposal_std: self.proposal_std,
            step: self.kernel.step_init,
            hidden: self.hidden,
            ..InitSpec::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            grad: GradOptions {
                objective: self.objective,
                drop_score: self.drop_score,
                reuse_forward: self.reuse_forward,
                allow_single: self.allow_single,
                ..GradOptions::default()
            },
            epochs: self.epochs,
            lr: self.lr,
            n: self.n_train,
            seed: self.seed,
            trainable: Trainable::all_for(self.path, self.kernel.kind),
        }
    }

    /// Flag, then file, then the environment, then `./results`.
    pub fn output_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::resolve(&ConfigArgs::default()).unwrap();
        assert_eq!(c.target, "gaussian");
        assert_eq!(c.path, PathKind::Geometric);
        assert_eq!(c.schedule, ScheduleKind::Linear);
        assert_eq!(c.kernel.kind, KernelKind::Rwmh);
        assert_eq!((c.steps, c.n_train, c.n_eval, c.epochs, c.seed), (8, 256, 4096, 100, 0));
        assert_eq!(c.lr, 0.03);
    }

    #[test]
    fn zero_steps_is_rejected() {
        let args = ConfigArgs {
            steps: Some(0),
            ..Default::default()
        };
        let e = RunConfig::resolve(&args).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().starts_with("M:"), "{e}");
    }

    #[test]
    fn eval_must_cover_train() {
        let args = ConfigArgs {
            train_n: Some(512),
            eval_n: Some(128),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&args).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_types_name_their_path() {
        let e = RunConfig::from_json(r#"{"M": 4, "colour": 1}"#).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let e = RunConfig::from_json(r#"{"kernel": {"leapfrog": "many"}}"#).unwrap_err();
        assert!(e.to_string().starts_with("kernel.leapfrog"), "{e}");
        let e = RunConfig::from_json(r#"{"kernel": {"kind": "nuts"}}"#).unwrap_err();
        assert!(e.to_string().starts_with("kernel.kind"), "{e}");
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.json");
        std::fs::write(&f, r#"{"target": "rings2", "M": 4, "kernel": {"kind": "mala", "step_init": 0.1}, "seed": 9}"#).unwrap();
        let args = ConfigArgs {
            config: Some(f),
            steps: Some(16),
            ..Default::default()
        };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!(c.steps, 16);
        assert_eq!(c.target, "rings2");
        assert_eq!(c.kernel.kind, KernelKind::Mala);
        assert_eq!(c.kernel.step_init, 0.1);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn shipped_schema_lists_every_key_with_its_default() {
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/");
        let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(format!("{root}config.schema.json")).unwrap()).unwrap();
        let defaults = serde_json::to_value(RunConfig::default()).unwrap();
        let check = |props: &serde_json::Value, values: &serde_json::Value| {
            let props = props.as_object().unwrap();
            let values = values.as_object().unwrap();
            assert_eq!(props.keys().collect::<Vec<_>>(), values.keys().collect::<Vec<_>>());
            for (k, v) in values {
                if let Some(d) = props[k].get("default") {
                    assert_eq!(d, v, "default of {k}");
                }
            }
        };
        check(&schema["properties"], &defaults);
        check(&schema["properties"]["kernel"]["properties"], &defaults["kernel"]);
        RunConfig::from_file(FsPath::new(&format!("{root}example-config.json"))).unwrap().validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig {
            target: "moons".into(),
            steps: 32,
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
