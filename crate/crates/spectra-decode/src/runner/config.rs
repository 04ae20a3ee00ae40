//! Experiment configuration: a single JSON document, optionally overridden
//! with dotted `--set key=value` paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendKind;
use crate::harness::EconGame;
use crate::interp::{Anchor, DecoderKind, SamplingPolicy};
use crate::twinning::{MlpHyper, ObjectiveMode};

use super::RunnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Generate,
    Inventory,
    EconGame,
    RunoffReplay,
    Twin,
    Regress,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Generate => "generate",
            ExperimentKind::Inventory => "inventory",
            ExperimentKind::EconGame => "econ_game",
            ExperimentKind::RunoffReplay => "runoff_replay",
            ExperimentKind::Twin => "twin",
            ExperimentKind::Regress => "regress",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    /// Toy backend: path to the table file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// HTTP backend: base URL of the logit server. Overridden by the
    /// SPECTRA_BACKEND_URL environment variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_top_k: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Grid,
    GoldenSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub method: SearchMethod,
    /// Golden Section interval; defaults to the spectrum's lambda_range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub mode: ObjectiveMode,
}

fn default_tol() -> f64 {
    1e-2
}
fn default_max_iters() -> usize {
    60
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionConfig {
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub embedder: EmbedderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_url: Option<String>,
    #[serde(default)]
    pub hyper: MlpHyper,
    /// Load an existing dataset instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_in: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_out: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub train: bool,
}

fn default_embedding_dim() -> usize {
    8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub backend: BackendConfig,
    #[serde(default)]
    pub spectra: Vec<PathBuf>,
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inventory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game_log: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<EconGame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endowment: Option<u32>,
    /// Overrides the spectrum's decoder hint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderKind>,
    #[serde(default)]
    pub anchor: Anchor,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_permutation_seeds")]
    pub permutation_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_considered: Option<usize>,
    #[serde(default = "default_labels")]
    pub labels: (String, String),
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_max_tokens() -> usize {
    64
}
fn default_permutation_seeds() -> Vec<u64> {
    vec![0]
}
fn default_labels() -> (String, String) {
    ("A".into(), "B".into())
}
fn default_window() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let value = Self::value_from_file(path)?;
        Self::from_value(value)
    }

    pub fn value_from_file(path: impl AsRef<Path>) -> Result<serde_json::Value, RunnerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            RunnerError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            RunnerError::Config(format!("cannot parse config {}: {e}", path.display()))
        })
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, RunnerError> {
        let config: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| RunnerError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Applies a dotted-path override such as `backend.model_id=gemma12b`.
    /// The value parses as JSON when possible and falls back to a string.
    pub fn apply_set(value: &mut serde_json::Value, assignment: &str) -> Result<(), RunnerError> {
        let (path, raw) = assignment.split_once('=').ok_or_else(|| {
            RunnerError::Config(format!("--set expects key=value, got {assignment:?}"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = value;
        let segments: Vec<&str> = path.split('.').collect();
        for (i, segment) in segments.iter().enumerate() {
            if !cursor.is_object() {
                *cursor = serde_json::json!({});
            }
            let map = cursor.as_object_mut().expect("just ensured object");
            if i + 1 == segments.len() {
                map.insert(segment.to_string(), parsed);
                return Ok(());
            }
            cursor = map
                .entry(segment.to_string())
                .or_insert_with(|| serde_json::json!({}));
        }
        Ok(())
    }

    fn require(&self, ok: bool, what: &str) -> Result<(), RunnerError> {
        if ok {
            Ok(())
        } else {
            Err(RunnerError::Config(format!(
                "{} experiment requires {what}",
                self.experiment.as_str()
            )))
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        match self.backend.kind {
            BackendKind::ToyTable => {
                self.require(self.backend.path.is_some(), "backend.path (toy model file)")?
            }
            BackendKind::HttpLogitServer => {
                let has_url = self.backend.base_url.is_some()
                    || std::env::var("SPECTRA_BACKEND_URL").is_ok();
                self.require(has_url, "backend.base_url or SPECTRA_BACKEND_URL")?;
                self.require(
                    self.backend.vocabulary_size.is_some(),
                    "backend.vocabulary_size",
                )?;
            }
        }
        match self.experiment {
            ExperimentKind::Generate => {
                self.require(!self.spectra.is_empty(), "a spectrum file")?;
                self.require(!self.scenarios.is_empty(), "a scenario file")?;
                self.require(!self.lambda_grid.is_empty(), "a non-empty lambda_grid")?;
            }
            ExperimentKind::Inventory => {
                self.require(self.inventory.is_some(), "an inventory CSV")?;
                self.require(!self.spectra.is_empty(), "trait spectrum files")?;
                self.require(!self.lambda_grid.is_empty(), "a non-empty lambda_grid")?;
            }
            ExperimentKind::EconGame => {
                self.require(self.game.is_some(), "a game")?;
                self.require(!self.spectra.is_empty(), "a spectrum file")?;
                self.require(!self.scenarios.is_empty(), "a scenario file")?;
                self.require(!self.lambda_grid.is_empty(), "a non-empty lambda_grid")?;
                if matches!(self.game, Some(EconGame::Dictator) | Some(EconGame::Thieves)) {
                    self.require(
                        self.endowment.map(|e| e > 0).unwrap_or(false),
                        "a positive endowment",
                    )?;
                }
            }
            ExperimentKind::RunoffReplay => {
                self.require(self.game_log.is_some(), "a game_log")?;
                self.require(!self.spectra.is_empty(), "a spectrum file")?;
                self.require(!self.scenarios.is_empty(), "a scenario file")?;
                self.require(!self.lambda_grid.is_empty(), "a non-empty lambda_grid")?;
                self.require(self.n_considered.is_some(), "n_considered")?;
            }
            ExperimentKind::Twin => {
                self.require(self.game_log.is_some(), "a game_log")?;
                self.require(!self.spectra.is_empty(), "a spectrum file")?;
                self.require(!self.scenarios.is_empty(), "a scenario file")?;
                self.require(self.n_considered.is_some(), "n_considered")?;
                self.require(self.search.is_some(), "search settings")?;
                if matches!(
                    self.search.as_ref().map(|s| s.method),
                    Some(SearchMethod::Grid)
                ) {
                    self.require(!self.lambda_grid.is_empty(), "a non-empty lambda_grid")?;
                }
            }
            ExperimentKind::Regress => {
                self.require(self.regression.is_some(), "regression settings")?;
                let loads_dataset = self
                    .regression
                    .as_ref()
                    .map(|r| r.dataset_in.is_some())
                    .unwrap_or(false);
                if !loads_dataset {
                    self.require(!self.spectra.is_empty(), "spectrum files")?;
                    self.require(!self.scenarios.is_empty(), "scenario files")?;
                    self.require(!self.lambda_grid.is_empty(), "a non-empty lambda_grid")?;
                }
            }
        }
        Ok(())
    }
}
