//! Trait spectra, scenario framing, sentence-order permutation, and the
//! packaged control statements.

use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::DecoderKind;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("control prompt index {index} out of range [0, {count})")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// A named character dimension with low/high extremum descriptor sentences
/// and an advisory lambda range for the hinted decoder. The range is
/// metadata, not a hard limit; only mixture's [0, 1] is enforced at decode
/// time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraitSpectrum {
    pub name: String,
    pub tau_low: Vec<String>,
    pub tau_high: Vec<String>,
    pub decoder_hint: DecoderKind,
    pub lambda_range: (f64, f64),
}

impl TraitSpectrum {
    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.tau_low.is_empty() || self.tau_high.is_empty() {
            return Err(SpectraError::InvalidSpectrum(format!(
                "spectrum {:?} has an empty descriptor list",
                self.name
            )));
        }
        if self.lambda_range.0 >= self.lambda_range.1 {
            return Err(SpectraError::InvalidSpectrum(format!(
                "spectrum {:?} lambda_range low {} must be below high {}",
                self.name, self.lambda_range.0, self.lambda_range.1
            )));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SpectraError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpectraError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spectrum: TraitSpectrum =
            serde_json::from_str(&text).map_err(|source| SpectraError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        spectrum.validate()?;
        Ok(spectrum)
    }
}

/// Game rules or task instructions that frame a decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub body: String,
    #[serde(default)]
    pub response_format_hint: String,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        response_format_hint: impl Into<String>,
    ) -> Result<Self, SpectraError> {
        let scenario = Self {
            id: id.into(),
            body: body.into(),
            response_format_hint: response_format_hint.into(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.body.is_empty() {
            return Err(SpectraError::InvalidScenario(format!(
                "scenario {:?} has an empty body",
                self.id
            )));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SpectraError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpectraError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scenario: Scenario =
            serde_json::from_str(&text).map_err(|source| SpectraError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Assembles the two extremum prompts: a seeded Fisher-Yates permutation of
/// each side's own descriptor sentences joined by single spaces, followed by
/// a blank line and the scenario body. The same seed reshuffles both sides
/// identically, and the function is pure in (spectrum, scenario, seed).
pub fn assemble_extrema_prompts(
    spectrum: &TraitSpectrum,
    scenario: &Scenario,
    permutation_seed: u64,
) -> (String, String) {
    let assemble = |sentences: &[String]| {
        let mut order = sentences.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(permutation_seed);
        order.shuffle(&mut rng);
        format!("{}\n\n{}", order.join(" "), scenario.body)
    };
    (assemble(&spectrum.tau_low), assemble(&spectrum.tau_high))
}

/// Number of packaged control statements.
pub const CONTROL_PROMPT_COUNT: usize = 15;

static CONTROL_STATEMENTS: OnceLock<Vec<String>> = OnceLock::new();

/// The packaged control statements, verbatim.
pub fn control_statements() -> &'static [String] {
    CONTROL_STATEMENTS
        .get_or_init(|| {
            serde_json::from_str(include_str!("../data/control_prompts.json"))
                .expect("packaged control prompts parse")
        })
        .as_slice()
}

/// The `index`-th control prompt, phrased as a belief the model holds:
/// "You believe that " followed by the statement with its first letter
/// lowercased.
pub fn control_prompt(index: usize) -> Result<String, SpectraError> {
    let statements = control_statements();
    let statement = statements
        .get(index)
        .ok_or(SpectraError::IndexOutOfRange {
            index,
            count: statements.len(),
        })?;
    let mut chars = statement.chars();
    let lowered = match chars.next() {
        Some(first) => format!("{}{}", first.to_lowercase(), chars.as_str()),
        None => String::new(),
    };
    Ok(format!("You believe that {lowered}"))
}
