//! Twinning: fit the interpolation parameter lambda that best explains
//! observed behavior, either by direct search over the behavior objective
//! (grid or Golden Section) or by the regression shortcut that predicts
//! lambda from embedded (tau_low, tau_high, response) features.

mod embed;
mod mlp;

pub use embed::{Embedder, HashEmbedder, HttpEmbedder};
pub use mlp::{
    mlp_mse, mlp_predict, mlp_train, Activation, MlpGradients, MlpHyper, MlpModel, TrainReport,
};

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LmBackend;
use crate::harness::{
    parse_labeled_choice, runoff_distribution, ActionDistribution, GameTurn, HarnessError,
    RunoffOutcome, RunoffWinner, PROB_FLOOR,
};
use crate::interp::{generate, DecodeConfig, InterpError};
use crate::spectra::{assemble_extrema_prompts, Scenario, TraitSpectrum};

/// Golden ratio minus one; the interior-point fraction of the search.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("turn {0:?} has no observed action")]
    MissingObservedAction(String),
    #[error("feature length {got} does not match expected {expected}")]
    InconsistentFeatures { expected: usize, got: usize },
    #[error("feature length {got} does not match model input {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("search interval is empty: lo {lo} must be below hi {hi}")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("search grid is empty")]
    EmptyGrid,
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("model file error: {0}")]
    ModelIo(String),
    #[error("dataset file error: {0}")]
    DatasetIo(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

/// Observed behavior to explain: replayed turns plus the spectrum and
/// scenario that frame them.
#[derive(Debug, Clone)]
pub struct BehaviorSample {
    pub turns: Vec<GameTurn>,
    pub spectrum: TraitSpectrum,
    pub scenario: Scenario,
}

impl BehaviorSample {
    pub fn new(
        turns: Vec<GameTurn>,
        spectrum: TraitSpectrum,
        scenario: Scenario,
    ) -> Result<Self, TwinError> {
        if turns.is_empty() {
            return Err(TwinError::MissingObservedAction(
                "behavior sample has no turns".into(),
            ));
        }
        Ok(Self {
            turns,
            spectrum,
            scenario,
        })
    }
}

/// How per-turn probabilities aggregate into the search objective.
/// `SumLogProb` is the default: it is monotone-equivalent to the product of
/// probabilities and numerically safer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveMode {
    #[serde(rename = "sum_prob")]
    SumProb,
    #[default]
    #[serde(rename = "sum_logprob")]
    SumLogProb,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchEval {
    pub lambda: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub lambda_star: f64,
    /// Best evaluated objective.
    pub objective_value: f64,
    pub trace: Vec<SearchEval>,
    pub mode: ObjectiveMode,
    /// Golden Section only: final interval width fell below the tolerance.
    pub converged: bool,
    /// The evaluations contradict unimodality; the result is only a local
    /// optimum.
    pub multimodal_hint: bool,
}

/// Induces an action distribution over a turn's considered movesets at a
/// given lambda. The production implementation is [`RunoffInducer`]; tests
/// plug in synthetic inducers.
pub trait ActionInducer {
    fn induce(&mut self, turn: &GameTurn, lambda: f64) -> Result<ActionDistribution, TwinError>;
}

impl<F> ActionInducer for F
where
    F: FnMut(&GameTurn, f64) -> Result<ActionDistribution, TwinError>,
{
    fn induce(&mut self, turn: &GameTurn, lambda: f64) -> Result<ActionDistribution, TwinError> {
        self(turn, lambda)
    }
}

/// Sum over turns of the induced probability of the observed action
/// (`SumProb`) or of its floored log (`SumLogProb`). Every turn must carry
/// an observed action.
pub fn behavior_objective(
    lambda: f64,
    sample: &BehaviorSample,
    inducer: &mut dyn ActionInducer,
    mode: ObjectiveMode,
) -> Result<f64, TwinError> {
    let mut total = 0.0;
    for turn in &sample.turns {
        let observed = turn
            .observed_action_index
            .ok_or_else(|| TwinError::MissingObservedAction(turn.turn_id.clone()))?;
        let dist = inducer.induce(turn, lambda)?;
        let p = dist.probs.get(observed).copied().unwrap_or(0.0);
        total += match mode {
            ObjectiveMode::SumProb => p,
            ObjectiveMode::SumLogProb => p.max(PROB_FLOOR).ln(),
        };
    }
    Ok(total)
}

/// Golden Section maximization of `f` over `[lo, hi]`, assuming
/// unimodality. Stops when the interval width falls below `tol` or after
/// `max_iters` shrink steps; `lambda_star` is the midpoint of the final
/// interval and every evaluation lands in the trace (at most
/// `max_iters + 2` of them).
pub fn golden_section_search(
    mut f: impl FnMut(f64) -> Result<f64, TwinError>,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iters: usize,
    mode: ObjectiveMode,
) -> Result<SearchResult, TwinError> {
    if lo >= hi {
        return Err(TwinError::EmptyInterval { lo, hi });
    }
    let mut trace = Vec::new();
    let mut eval = |x: f64, trace: &mut Vec<SearchEval>| -> Result<f64, TwinError> {
        let objective = f(x)?;
        trace.push(SearchEval {
            lambda: x,
            objective,
        });
        Ok(objective)
    };

    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1, &mut trace)?;
    let mut f2 = eval(x2, &mut trace)?;
    let mut converged = (b - a) < tol;
    for _ in 0..max_iters {
        if (b - a) < tol {
            converged = true;
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1, &mut trace)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2, &mut trace)?;
        }
    }
    if (b - a) < tol {
        converged = true;
    }

    let lambda_star = 0.5 * (a + b);
    let best = trace
        .iter()
        .cloned()
        .max_by(|p, q| p.objective.total_cmp(&q.objective))
        .expect("trace is non-empty");
    // With a unimodal objective the best evaluation lies inside the final
    // bracket; an outside winner means the search only found a local result.
    let multimodal_hint = best.lambda < a - 1e-12 || best.lambda > b + 1e-12;
    Ok(SearchResult {
        lambda_star,
        objective_value: best.objective,
        trace,
        mode,
        converged,
        multimodal_hint,
    })
}

/// Evaluates `f` at every grid point; the argmax wins with ties going to
/// the smallest lambda.
pub fn grid_search(
    mut f: impl FnMut(f64) -> Result<f64, TwinError>,
    grid: &[f64],
    mode: ObjectiveMode,
) -> Result<SearchResult, TwinError> {
    if grid.is_empty() {
        return Err(TwinError::EmptyGrid);
    }
    let mut trace = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let objective = f(lambda)?;
        trace.push(SearchEval { lambda, objective });
    }
    let best = trace
        .iter()
        .cloned()
        .max_by(|p, q| {
            p.objective
                .total_cmp(&q.objective)
                .then(q.lambda.total_cmp(&p.lambda))
        })
        .expect("grid is non-empty");

    // Count strict local maxima in lambda order as a unimodality probe.
    let mut sorted = trace.clone();
    sorted.sort_by(|p, q| p.lambda.total_cmp(&q.lambda));
    let mut peaks = 0;
    for i in 0..sorted.len() {
        let left_ok = i == 0 || sorted[i - 1].objective < sorted[i].objective;
        let right_ok = i + 1 == sorted.len() || sorted[i + 1].objective < sorted[i].objective;
        if left_ok && right_ok {
            peaks += 1;
        }
    }
    Ok(SearchResult {
        lambda_star: best.lambda,
        objective_value: best.objective,
        trace,
        mode,
        converged: true,
        multimodal_hint: peaks > 1,
    })
}

/// The standard replay grid: -10 to 2 at increments of 0.5.
pub fn replay_grid() -> Vec<f64> {
    (0..=24).map(|i| -10.0 + 0.5 * i as f64).collect()
}

/// Production inducer: per ordered moveset pair, assembles the runoff
/// prompt on both extremum sides, generates with interpolative decoding at
/// the probe lambda, extracts the choice probability from the recorded
/// steps, and aggregates through the runoff procedure.
pub struct RunoffInducer<'a> {
    backend: &'a dyn LmBackend,
    decode: DecodeConfig,
    n_considered: usize,
    labels: (String, String),
    window: usize,
    prompt_low: String,
    prompt_high: String,
}

impl<'a> RunoffInducer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        backend: &'a dyn LmBackend,
        spectrum: &TraitSpectrum,
        scenario: &Scenario,
        decode: DecodeConfig,
        n_considered: usize,
        labels: (String, String),
        window: usize,
        permutation_seed: u64,
    ) -> Self {
        let (prompt_low, prompt_high) =
            assemble_extrema_prompts(spectrum, scenario, permutation_seed);
        Self {
            backend,
            decode,
            n_considered,
            labels,
            window,
            prompt_low,
            prompt_high,
        }
    }

    fn pair_prompt(&self, side_prompt: &str, turn: &GameTurn, a: usize, b: usize) -> String {
        let moveset = |i: usize| turn.candidate_movesets[i].join(", ");
        format!(
            "{side}\n\n{obs}\n\nOption {la}: {ma}\nOption {lb}: {mb}\nConsider both options and finish with \"My final choice is {la}\" or \"My final choice is {lb}\".",
            side = side_prompt,
            obs = turn.observation,
            la = self.labels.0,
            lb = self.labels.1,
            ma = moveset(a),
            mb = moveset(b),
        )
    }
}

impl ActionInducer for RunoffInducer<'_> {
    fn induce(&mut self, turn: &GameTurn, lambda: f64) -> Result<ActionDistribution, TwinError> {
        let mut config = self.decode.clone();
        config.lambda = lambda;
        config.record_steps = true;
        let labels = (self.labels.0.as_str(), self.labels.1.as_str());
        let mut chooser = |a: usize, b: usize| -> Result<Option<RunoffOutcome>, HarnessError> {
            let low = self.pair_prompt(&self.prompt_low, turn, a, b);
            let high = self.pair_prompt(&self.prompt_high, turn, a, b);
            let record = generate(self.backend, &low, &high, &config)?;
            Ok(parse_labeled_choice(&record, labels, self.window)?.map(|hit| RunoffOutcome {
                winner: if hit.label_index == 0 {
                    RunoffWinner::OptionA
                } else {
                    RunoffWinner::OptionB
                },
                probability: hit.probability,
            }))
        };
        Ok(runoff_distribution(turn, self.n_considered, &mut chooser)?)
    }
}

/// One regression training example: concatenated embeddings of the two
/// extrema texts and the generated response, labeled with the lambda that
/// produced the response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionSample {
    pub features: Vec<f64>,
    #[serde(rename = "lambda")]
    pub target_lambda: f64,
    pub spectrum: String,
    pub scenario: String,
    pub seed: u64,
}

/// Builds the regression dataset: one sample per
/// (spectrum, scenario, lambda, permutation seed) tuple, generated with the
/// spectrum's hinted decoder and embedded with the given provider.
pub fn build_regression_dataset(
    spectra: &[TraitSpectrum],
    scenarios: &[Scenario],
    grid: &[f64],
    permutation_seeds: &[u64],
    decode_template: &DecodeConfig,
    backend: &dyn LmBackend,
    embedder: &dyn Embedder,
) -> Result<Vec<RegressionSample>, TwinError> {
    let mut samples = Vec::new();
    for spectrum in spectra {
        let tau_low_text = spectrum.tau_low.join(" ");
        let tau_high_text = spectrum.tau_high.join(" ");
        let tau_embeddings = embedder.embed(&[&tau_low_text, &tau_high_text])?;
        for scenario in scenarios {
            for &seed in permutation_seeds {
                let (prompt_low, prompt_high) =
                    assemble_extrema_prompts(spectrum, scenario, seed);
                for &lambda in grid {
                    let mut config = decode_template.clone();
                    config.decoder = spectrum.decoder_hint;
                    config.lambda = lambda;
                    let record = generate(backend, &prompt_low, &prompt_high, &config)?;
                    let response = embedder.embed(&[&record.text])?;
                    let mut features =
                        Vec::with_capacity(3 * embedder.dim());
                    features.extend_from_slice(&tau_embeddings[0]);
                    features.extend_from_slice(&tau_embeddings[1]);
                    features.extend_from_slice(&response[0]);
                    samples.push(RegressionSample {
                        features,
                        target_lambda: lambda,
                        spectrum: spectrum.name.clone(),
                        scenario: scenario.id.clone(),
                        seed,
                    });
                }
            }
        }
    }
    Ok(samples)
}

/// Writes samples as JSONL.
pub fn save_dataset(
    samples: &[RegressionSample],
    path: impl AsRef<Path>,
) -> Result<(), TwinError> {
    let mut file = std::fs::File::create(path.as_ref())
        .map_err(|e| TwinError::DatasetIo(format!("{}: {e}", path.as_ref().display())))?;
    for sample in samples {
        let line = serde_json::to_string(sample)
            .map_err(|e| TwinError::DatasetIo(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| TwinError::DatasetIo(e.to_string()))?;
    }
    Ok(())
}

/// Reads a JSONL dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<RegressionSample>, TwinError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| TwinError::DatasetIo(format!("{}: {e}", path.as_ref().display())))?;
    let mut samples = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| TwinError::DatasetIo(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(
            serde_json::from_str(&line).map_err(|e| TwinError::DatasetIo(e.to_string()))?,
        );
    }
    Ok(samples)
}

/// Deterministic 85/15 train/validation split keyed by a hash of the sample
/// identity, so resumed runs split identically.
pub fn split_dataset(
    samples: Vec<RegressionSample>,
) -> (Vec<RegressionSample>, Vec<RegressionSample>) {
    use sha2::{Digest, Sha256};
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for sample in samples {
        let key = format!(
            "{}|{}|{}|{}",
            sample.spectrum, sample.scenario, sample.target_lambda, sample.seed
        );
        let digest = Sha256::digest(key.as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % 100;
        if bucket < 85 {
            train.push(sample);
        } else {
            validation.push(sample);
        }
    }
    (train, validation)
}
