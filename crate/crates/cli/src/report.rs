//! CSV result rows and the append-or-overwrite writer.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader};
use std::path::Path as FsPath;

use ais_core::sampler::Diagnostics;
use serde::Serialize;

use crate::CliError;

pub const ESTIMATE_HEADER: &str = "target,path,schedule,kernel,M,N,seed,log_z_est,elbo,ess,log_var,bdmc_gap,wall_ms";
pub const TRAIN_HEADER: &str =
    "target,path,schedule,kernel,objective,M,N,seed,epoch,loss,grad_norm,log_z_est,elbo,ess,log_var,bdmc_gap,wall_ms";
pub const BENCH_HEADER: &str =
    "target,method,path,schedule,kernel,M,N,seed,log_z_est,elbo,ess,log_var,bdmc_gap,log_z_ref,wall_ms";

/// The identifying columns every row starts with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub target: String,
    pub path: String,
    pub schedule: String,
    pub kernel: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub target: String,
    pub path: String,
    pub schedule: String,
    pub kernel: String,
    #[serde(rename = "M")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub log_z_est: f64,
    pub elbo: f64,
    pub ess: f64,
    pub log_var: f64,
    pub bdmc_gap: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRow {
    pub target: String,
    pub path: String,
    pub schedule: String,
    pub kernel: String,
    pub objective: String,
    #[serde(rename = "M")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub log_z_est: f64,
    pub elbo: f64,
    pub ess: f64,
    pub log_var: f64,
    pub bdmc_gap: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub target: String,
    pub method: String,
    pub path: String,
    pub schedule: String,
    pub kernel: String,
    #[serde(rename = "M")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub log_z_est: f64,
    pub elbo: f64,
    pub ess: f64,
    pub log_var: f64,
    pub bdmc_gap: Option<f64>,
    pub log_z_ref: f64,
    pub wall_ms: f64,
}

impl EstimateRow {
    pub fn new(key: RunKey, steps: usize, n: usize, seed: u64, d: &Diagnostics, wall_ms: f64) -> Self {
        EstimateRow {
            target: key.target,
            path: key.path,
            schedule: key.schedule,
            kernel: key.kernel,
            steps,
            n,
            seed,
            log_z_est: d.log_z_hat,
            elbo: d.elbo,
            ess: d.ess,
            log_var: d.log_var,
            bdmc_gap: d.bdmc_gap,
            wall_ms,
        }
    }
}

/// Writes rows with `header` to `path`. Appends to an existing file unless
/// `overwrite` is set; an existing file must carry the same header.
pub struct CsvSink {
    writer: csv::Writer<std::fs::File>,
}

impl CsvSink {
    pub fn open(path: &FsPath, header: &str, overwrite: bool) -> Result<CsvSink, CliError> {
        let io = |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let append = !overwrite && path.exists() && std::fs::metadata(path).map_err(io)?.len() > 0;
        if append {
            let mut first = String::new();
            BufReader::new(std::fs::File::open(path).map_err(io)?)
                .read_line(&mut first)
                .map_err(io)?;
            if first.trim_end() != header {
                return Err(CliError::Schema {
                    path: path.to_path_buf(),
                    found: first.trim_end().to_string(),
                    expected: header.to_string(),
                });
            }
        }
        let file = if append {
            OpenOptions::new().append(true).open(path)
        } else {
            std::fs::File::create(path)
        }
        .map_err(io)?;
        // Headers come from the literal so the schema is checked, not inferred.
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !append {
            writer.write_record(header.split(','))?;
        }
        Ok(CsvSink { writer })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<(), CliError> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
