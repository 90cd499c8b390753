//! Parameter files: raw little-endian `f64` values plus a JSON sidecar.

use std::path::{Path as FsPath, PathBuf};

use ais_core::path::{Layout, PathParams};

use crate::config::RunConfig;
use crate::CliError;

/// Sidecar path for a `.bin` file.
pub fn sidecar_path(bin: &FsPath) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `<stem>.bin` and `<stem>.json`, returning the `.bin` path.
pub fn save(params: &PathParams, dir: &FsPath, stem: &str, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let bin = dir.join(format!("{stem}.bin"));
    let io = |path: &FsPath| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    std::fs::write(&bin, params.to_bytes()).map_err(io(&bin))?;
    let meta = serde_json::to_value(cfg).expect("config serializes");
    let side = sidecar_path(&bin);
    let text = serde_json::to_string_pretty(&params.sidecar(meta)).expect("sidecar serializes");
    std::fs::write(&side, text + "\n").map_err(io(&side))?;
    Ok(bin)
}

/// Reads a parameter file and the configuration it was trained with.
pub fn load(bin: &FsPath) -> Result<(PathParams, RunConfig), CliError> {
    let side = sidecar_path(bin);
    let bad = |message: String| CliError::Params {
        path: bin.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(&side).map_err(|source| CliError::Io {
        path: side.clone(),
        source,
    })?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(format!("sidecar: {e}")))?;
    let layout: Layout =
        serde_json::from_value(doc["layout"].clone()).map_err(|e| bad(format!("sidecar layout: {e}")))?;
    let meta = RunConfig::from_json(&doc["meta"].to_string())?;
    let bytes = std::fs::read(bin).map_err(|source| CliError::Io {
        path: bin.to_path_buf(),
        source,
    })?;
    let params = PathParams::from_bytes(layout, &bytes).map_err(|e| bad(e.to_string()))?;
    Ok((params, meta))
}

/// Loads parameters for a run under `cfg`, rejecting files trained for a
/// different target, path, kernel or number of steps.
pub fn load_for(bin: &FsPath, cfg: &RunConfig) -> Result<PathParams, CliError> {
    let (params, meta) = load(bin)?;
    let mismatch = [
        ("target", meta.target.clone(), cfg.target.clone()),
        ("path", meta.path.to_string(), cfg.path.to_string()),
        ("kernel.kind", meta.kernel.kind.to_string(), cfg.kernel.kind.to_string()),
        ("M", meta.steps.to_string(), cfg.steps.to_string()),
    ]
    .into_iter()
    .find(|(_, a, b)| a != b);
    if let Some((key, file, run)) = mismatch {
        return Err(CliError::Params {
            path: bin.to_path_buf(),
            message: format!("trained with {key} = {file}, but this run uses {run}"),
        });
    }
    let want = Layout::new(cfg.hidden, cfg.kernel_config().step_slots(cfg.steps));
    if params.layout != want {
        return Err(CliError::Params {
            path: bin.to_path_buf(),
            message: format!("layout {:?} does not match the configured {:?}", params.layout, want),
        });
    }
    Ok(params)
}
