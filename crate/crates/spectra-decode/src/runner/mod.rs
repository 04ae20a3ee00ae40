//! Experiment orchestration: configuration, run records, result
//! persistence, and CSV report emission.
//!
//! Results are append-only JSONL. Each run starts with a `run_config`
//! record; every subsequent payload carries the same run id and config
//! hash, so reports are derived views and runs at different lambda can be
//! resumed and merged into one file.

mod config;
mod experiments;
mod report;

pub use config::{
    BackendConfig, EmbedderKind, ExperimentConfig, ExperimentKind, RegressionConfig, SearchConfig,
    SearchMethod,
};
pub use report::{emit_report, render_report, ReportKind};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendKind, HttpBackend, LmBackend, ToyModel};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("run failed: {0}")]
    RunFailed(String),
    #[error("empty results: {0}")]
    EmptyResults(String),
    #[error("io error: {0}")]
    Io(String),
}

impl RunnerError {
    /// Exit code contract: config errors 2, unreachable backend 3, recorded
    /// partial failures 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::BackendUnavailable(_) => 3,
            _ => 4,
        }
    }

}

/// One appended result line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// UTC ISO-8601.
    pub timestamp: String,
    /// Hex SHA-256 of the canonical config JSON.
    pub config_hash: String,
    pub payload: serde_json::Value,
}

/// Canonical hash of a config: serde_json's map ordering is sorted, so the
/// hash is stable across re-serialization.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    hex_digest(value.to_string().as_bytes())
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Derives a per-component seed from the master seed so execution order
/// cannot change outcomes.
pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(component.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub(crate) struct ResultWriter {
    file: std::io::BufWriter<std::fs::File>,
    run_id: String,
    config_hash: String,
}

impl ResultWriter {
    fn open(path: &Path, config_hash: String) -> Result<Self, RunnerError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| RunnerError::Io(format!("{}: {e}", parent.display())))?;
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let run_id = hex_digest(format!("{config_hash}:{nanos}").as_bytes())[..16].to_string();
        Ok(Self {
            file: std::io::BufWriter::new(file),
            run_id,
            config_hash,
        })
    }

    pub(crate) fn write(&mut self, payload: serde_json::Value) -> Result<(), RunnerError> {
        let record = RunRecord {
            run_id: self.run_id.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config_hash: self.config_hash.clone(),
            payload,
        };
        let line =
            serde_json::to_string(&record).map_err(|e| RunnerError::Io(e.to_string()))?;
        writeln!(self.file, "{line}").map_err(|e| RunnerError::Io(e.to_string()))?;
        self.file.flush().map_err(|e| RunnerError::Io(e.to_string()))
    }
}

/// Reads every record from a results file.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, RunnerError> {
    use std::io::BufRead;
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RunnerError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line).map_err(|e| {
            RunnerError::Io(format!("bad record on line {}: {e}", i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub(crate) fn build_backend(config: &ExperimentConfig) -> Result<Box<dyn LmBackend>, RunnerError> {
    match config.backend.kind {
        BackendKind::ToyTable => {
            let path = config
                .backend
                .path
                .as_ref()
                .ok_or_else(|| RunnerError::Config("toy backend requires a path".into()))?;
            let model = ToyModel::from_file(path)
                .map_err(|e| RunnerError::Config(format!("toy model: {e}")))?;
            Ok(Box::new(model))
        }
        BackendKind::HttpLogitServer => {
            let base_url = std::env::var("SPECTRA_BACKEND_URL")
                .ok()
                .or_else(|| config.backend.base_url.clone())
                .ok_or_else(|| {
                    RunnerError::Config("http backend requires a base URL".into())
                })?;
            let backend = HttpBackend::new(
                base_url,
                config.backend.model_id.clone(),
                config.backend.vocabulary_size.unwrap_or(2),
                config.backend.max_top_k.unwrap_or(1024),
            )
            .map_err(|e| RunnerError::Config(format!("http backend: {e}")))?;
            Ok(Box::new(backend))
        }
    }
}

/// Runs the configured experiment and appends its records to the output
/// file (default `results.jsonl`), returning the output path. Mid-run
/// failures are recorded with an `error` payload before the error is
/// returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PathBuf, RunnerError> {
    config.validate()?;
    let output = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("results.jsonl"));
    let hash = config_hash(config);
    let mut writer = ResultWriter::open(&output, hash)?;
    writer.write(serde_json::json!({
        "kind": "run_config",
        "config": serde_json::to_value(config).expect("config serializes"),
    }))?;

    let backend = build_backend(config)?;
    let result = match config.experiment {
        ExperimentKind::Generate => {
            experiments::run_generate(config, backend.as_ref(), &mut writer)
        }
        ExperimentKind::Inventory => {
            experiments::run_inventory(config, backend.as_ref(), &mut writer)
        }
        ExperimentKind::EconGame => {
            experiments::run_econ_game(config, backend.as_ref(), &mut writer)
        }
        ExperimentKind::RunoffReplay => {
            experiments::run_runoff_replay(config, backend.as_ref(), &mut writer)
        }
        ExperimentKind::Twin => experiments::run_twin(config, backend.as_ref(), &mut writer),
        ExperimentKind::Regress => {
            experiments::run_regress(config, backend.as_ref(), &mut writer)
        }
    };
    match result {
        Ok(()) => Ok(output),
        Err(e) => {
            let classified = match &e {
                experiments::ExperimentError::Config(msg) => RunnerError::Config(msg.clone()),
                other if experiments::backend_unavailable(other) => {
                    RunnerError::BackendUnavailable(other.to_string())
                }
                other => RunnerError::RunFailed(other.to_string()),
            };
            writer.write(serde_json::json!({
                "kind": "error",
                "message": e.to_string(),
            }))?;
            Err(classified)
        }
    }
}
