//! Interpolative decoding: combine two prompt-conditioned next-token
//! distributions and run the dual-prefix generation loop.
//!
//! Two combination rules are supported. Mixture takes the convex combination
//! `P'(t) = (lambda * P_A(t) + (1 - lambda) * P_B(t)) / Z`. Contrastive
//! amplifies the difference around the anchor distribution in log space:
//! `P' = softmax(l_A + lambda * (l_A - l_B))`. Softmax over raw
//! probabilities would nearly erase the distribution (all inputs in [0, 1]),
//! so log-probabilities are the operands.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendError, ContextMode, LmBackend, TokenDistribution, TokenId, TokenSequence, TopK,
};

/// Default penalty (in nats) applied below a side's observed minimum when a
/// union token is missing from that side: one decade.
pub const DEFAULT_FLOOR_PENALTY: f64 = std::f64::consts::LN_10;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("mixture lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("distributions are not support-aligned")]
    SupportMismatch,
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Which combination rule governs decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Mixture,
    Contrastive,
}

/// Which prompt argument of [`generate`] plays the role of the anchor
/// distribution P_A. The crate default is `A`: the low-extremum prompt
/// occupies slot A unless an experiment configures otherwise, and the choice
/// is recorded in result metadata.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    #[default]
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Greedy,
    Temperature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_k")]
    pub top_k: TopK,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_top_k() -> TopK {
    TopK::Full
}
fn default_top_p() -> f64 {
    1.0
}

impl SamplingPolicy {
    pub fn greedy() -> Self {
        Self {
            mode: SamplingMode::Greedy,
            temperature: 1.0,
            top_k: TopK::Full,
            top_p: 1.0,
            seed: 0,
        }
    }

    pub fn temperature(temperature: f64, seed: u64) -> Self {
        Self {
            mode: SamplingMode::Temperature,
            temperature,
            top_k: TopK::Full,
            top_p: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), InterpError> {
        if self.mode == SamplingMode::Temperature {
            if self.temperature <= 0.0 || !self.temperature.is_finite() {
                return Err(InterpError::InvalidConfig(format!(
                    "temperature must be positive, got {}",
                    self.temperature
                )));
            }
            if !(self.top_p > 0.0 && self.top_p <= 1.0) {
                return Err(InterpError::InvalidConfig(format!(
                    "top_p must lie in (0, 1], got {}",
                    self.top_p
                )));
            }
        }
        Ok(())
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self::greedy()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub decoder: DecoderKind,
    pub lambda: f64,
    #[serde(default)]
    pub anchor: Anchor,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    pub max_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub record_steps: bool,
    #[serde(default = "default_floor_penalty")]
    pub floor_penalty: f64,
}

fn default_floor_penalty() -> f64 {
    DEFAULT_FLOOR_PENALTY
}

impl DecodeConfig {
    pub fn greedy(decoder: DecoderKind, lambda: f64, max_tokens: usize) -> Self {
        Self {
            decoder,
            lambda,
            anchor: Anchor::A,
            sampling: SamplingPolicy::greedy(),
            max_tokens,
            stop_sequences: Vec::new(),
            record_steps: false,
            floor_penalty: DEFAULT_FLOOR_PENALTY,
        }
    }

    pub fn with_anchor(mut self, anchor: Anchor) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn with_record_steps(mut self, record: bool) -> Self {
        self.record_steps = record;
        self
    }

    pub fn with_stop_sequences(mut self, stops: Vec<String>) -> Self {
        self.stop_sequences = stops;
        self
    }

    pub fn validate(&self) -> Result<(), InterpError> {
        if self.decoder == DecoderKind::Mixture && !(0.0..=1.0).contains(&self.lambda) {
            return Err(InterpError::LambdaOutOfRange(self.lambda));
        }
        if self.max_tokens == 0 {
            return Err(InterpError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        if self.floor_penalty <= 0.0 || !self.floor_penalty.is_finite() {
            return Err(InterpError::InvalidConfig(format!(
                "floor_penalty must be positive, got {}",
                self.floor_penalty
            )));
        }
        self.sampling.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StopSequence,
    MaxTokens,
}

/// Per-step trace of the interpolated distribution the sampler drew from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTrace {
    pub position: usize,
    pub dist: TokenDistribution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Visible text, truncated at the earliest stop-sequence match.
    pub text: String,
    pub tokens: TokenSequence,
    /// Decoded text of each sampled token, aligned with `tokens`.
    pub token_texts: Vec<String>,
    /// Present iff `record_steps` was set; one entry per sampled token.
    pub steps: Option<Vec<StepTrace>>,
    pub stopped_by: StopReason,
}

/// Puts both distributions on the union of their supports.
///
/// A token missing from one side receives that side's minimum log-probability
/// minus `floor_penalty`, then each side is renormalized. Needed whenever a
/// backend truncates to top-K, and harmless (identity up to float noise) on
/// full distributions.
pub fn align_supports(
    dist_a: &TokenDistribution,
    dist_b: &TokenDistribution,
    floor_penalty: f64,
) -> Result<(TokenDistribution, TokenDistribution), InterpError> {
    if dist_a.is_empty() || dist_b.is_empty() {
        return Err(InterpError::EmptyDistribution);
    }
    let mut union: Vec<TokenId> = dist_a.support().chain(dist_b.support()).collect();
    union.sort_unstable();
    union.dedup();

    let fill = |dist: &TokenDistribution| -> TokenDistribution {
        let floor = dist.min_logprob() - floor_penalty;
        let raw = TokenDistribution::from_logprobs(
            union.iter().map(|&id| (id, dist.logprob(id).unwrap_or(floor))),
            true,
            TopK::Full,
        )
        .expect("union support is non-empty");
        raw.normalized()
    };
    Ok((fill(dist_a), fill(dist_b)))
}

fn check_aligned(
    dist_a: &TokenDistribution,
    dist_b: &TokenDistribution,
) -> Result<(), InterpError> {
    if dist_a.is_empty() || dist_b.is_empty() {
        return Err(InterpError::EmptyDistribution);
    }
    if dist_a.len() != dist_b.len() || !dist_a.support().eq(dist_b.support()) {
        return Err(InterpError::SupportMismatch);
    }
    Ok(())
}

/// Convex combination of two support-aligned distributions, renormalized.
pub fn mixture_combine(
    dist_a: &TokenDistribution,
    dist_b: &TokenDistribution,
    lambda: f64,
) -> Result<TokenDistribution, InterpError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(InterpError::LambdaOutOfRange(lambda));
    }
    check_aligned(dist_a, dist_b)?;
    let mixed: Vec<(TokenId, f64)> = dist_a
        .support()
        .map(|id| {
            let p = lambda * dist_a.prob(id).unwrap() + (1.0 - lambda) * dist_b.prob(id).unwrap();
            (id, p.max(f64::MIN_POSITIVE).ln())
        })
        .collect();
    Ok(
        TokenDistribution::from_logprobs(mixed, true, TopK::Full)
            .expect("mixture support is non-empty")
            .normalized(),
    )
}

/// Contrastive combination: softmax over `l_A + lambda * (l_A - l_B)`.
/// Any real lambda is accepted; trait spectra carry advisory ranges.
pub fn contrastive_combine(
    dist_a: &TokenDistribution,
    dist_b: &TokenDistribution,
    lambda: f64,
) -> Result<TokenDistribution, InterpError> {
    check_aligned(dist_a, dist_b)?;
    let scores: Vec<(TokenId, f64)> = dist_a
        .support()
        .map(|id| {
            let la = dist_a.logprob(id).unwrap();
            let lb = dist_b.logprob(id).unwrap();
            (id, la + lambda * (la - lb))
        })
        .collect();
    // Softmax via log-sum-exp, staying in log space.
    let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|(_, s)| (s - max).exp()).sum::<f64>().ln();
    Ok(TokenDistribution::from_logprobs(
        scores.into_iter().map(|(id, s)| (id, (s - log_z).min(0.0))),
        true,
        TopK::Full,
    )
    .expect("contrastive support is non-empty"))
}

/// Draws a token. Greedy takes the argmax (ties toward the lower id);
/// temperature mode samples from the policy-filtered, temperature-scaled
/// distribution using the supplied generator.
pub fn sample_token(
    dist: &TokenDistribution,
    policy: &SamplingPolicy,
    rng: &mut ChaCha8Rng,
) -> TokenId {
    match policy.mode {
        SamplingMode::Greedy => dist.argmax(),
        SamplingMode::Temperature => {
            let mut entries = dist.sorted_entries();
            if let TopK::K(k) = policy.top_k {
                entries.truncate(k.max(1) as usize);
            }
            if policy.top_p < 1.0 {
                let total: f64 = entries.iter().map(|(_, lp)| lp.exp()).sum();
                let mut cumulative = 0.0;
                let mut keep = entries.len();
                for (i, (_, lp)) in entries.iter().enumerate() {
                    cumulative += lp.exp() / total;
                    if cumulative >= policy.top_p {
                        keep = i + 1;
                        break;
                    }
                }
                entries.truncate(keep);
            }
            let weights: Vec<f64> = {
                let scaled: Vec<f64> =
                    entries.iter().map(|(_, lp)| lp / policy.temperature).collect();
                let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / z).collect()
            };
            let draw: f64 = rng.gen();
            let mut cumulative = 0.0;
            for ((id, _), w) in entries.iter().zip(&weights) {
                cumulative += w;
                if draw < cumulative {
                    return *id;
                }
            }
            entries.last().expect("non-empty distribution").0
        }
    }
}

enum GenContext {
    Tokens {
        prefix_a: TokenSequence,
        prefix_b: TokenSequence,
    },
    Text {
        prompt_a: String,
        prompt_b: String,
        generated: String,
    },
}

/// Runs the dual-prefix generation loop: both prompts are extended with the
/// same sampled tokens, and at every step the two conditional distributions
/// are aligned and combined under `config.decoder`, with `config.anchor`
/// selecting which prompt plays the role of P_A.
pub fn generate(
    backend: &dyn LmBackend,
    prompt_a: &str,
    prompt_b: &str,
    config: &DecodeConfig,
) -> Result<GenerationRecord, InterpError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.sampling.seed);
    let mut ctx = match backend.context_mode() {
        ContextMode::Tokens => GenContext::Tokens {
            prefix_a: backend.tokenize(prompt_a)?,
            prefix_b: backend.tokenize(prompt_b)?,
        },
        ContextMode::Text => GenContext::Text {
            prompt_a: prompt_a.to_string(),
            prompt_b: prompt_b.to_string(),
            generated: String::new(),
        },
    };

    let mut tokens = TokenSequence::default();
    let mut token_texts: Vec<String> = Vec::new();
    let mut steps: Vec<StepTrace> = Vec::new();
    let mut text = String::new();
    let mut stopped_by = StopReason::MaxTokens;

    for position in 0..config.max_tokens {
        let (raw_a, raw_b) = match &ctx {
            GenContext::Tokens { prefix_a, prefix_b } => (
                backend.next_token_distribution(
                    &prefix_a.extended(tokens.as_slice()),
                    TopK::Full,
                )?,
                backend.next_token_distribution(
                    &prefix_b.extended(tokens.as_slice()),
                    TopK::Full,
                )?,
            ),
            GenContext::Text {
                prompt_a,
                prompt_b,
                generated,
            } => (
                backend.next_for_prompt(&format!("{prompt_a}{generated}"), TopK::Full)?,
                backend.next_for_prompt(&format!("{prompt_b}{generated}"), TopK::Full)?,
            ),
        };
        let (side_a, side_b) = align_supports(&raw_a, &raw_b, config.floor_penalty)?;
        let (anchor_side, other_side) = match config.anchor {
            Anchor::A => (&side_a, &side_b),
            Anchor::B => (&side_b, &side_a),
        };
        let combined = match config.decoder {
            DecoderKind::Mixture => mixture_combine(anchor_side, other_side, config.lambda)?,
            DecoderKind::Contrastive => {
                contrastive_combine(anchor_side, other_side, config.lambda)?
            }
        };
        let id = sample_token(&combined, &config.sampling, &mut rng);
        let piece = backend.detokenize(&[id])?;

        tokens.push(id);
        token_texts.push(piece.clone());
        text.push_str(&piece);
        if config.record_steps {
            steps.push(StepTrace {
                position,
                dist: combined,
            });
        }
        if let GenContext::Text { generated, .. } = &mut ctx {
            generated.push_str(&piece);
        }

        let stop_hit = config
            .stop_sequences
            .iter()
            .filter_map(|stop| text.find(stop.as_str()))
            .min();
        if let Some(at) = stop_hit {
            text.truncate(at);
            stopped_by = StopReason::StopSequence;
            break;
        }
    }

    Ok(GenerationRecord {
        text,
        tokens,
        token_texts,
        steps: if config.record_steps { Some(steps) } else { None },
        stopped_by,
    })
}
