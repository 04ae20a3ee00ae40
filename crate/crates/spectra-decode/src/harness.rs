//! Decision harness: economic games, the runoff procedure over candidate
//! movesets, decision parsing, and fidelity scoring by perplexity and
//! missed moves.

use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::GenerationRecord;
use crate::spectra::Scenario;

/// Probability floor applied before logs in perplexity and log-objective
/// computations.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no dollar amount found in {0:?}")]
    Unparseable(String),
    #[error("amount {amount} outside [0, {max_amount}]")]
    OutOfRange { amount: i64, max_amount: u32 },
    #[error("generation record has no step trace; run with record_steps")]
    MissingStepRecord,
    #[error("invalid game turn: {0}")]
    InvalidTurn(String),
    #[error("invalid action distribution: {0}")]
    InvalidDistribution(String),
    #[error("turns and distributions are misaligned: {turns} vs {dists}")]
    MisalignedInputs { turns: usize, dists: usize },
    #[error("n_considered {n} exceeds {available} candidate movesets")]
    NotEnoughMovesets { n: usize, available: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad game log line {line}: {source}")]
    BadLogLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Decode(Box<crate::interp::InterpError>),
}

impl From<crate::interp::InterpError> for HarnessError {
    fn from(e: crate::interp::InterpError) -> Self {
        HarnessError::Decode(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EconGame {
    Dictator,
    Thieves,
    Chicken,
}

impl EconGame {
    pub fn as_str(&self) -> &'static str {
        match self {
            EconGame::Dictator => "dictator",
            EconGame::Thieves => "thieves",
            EconGame::Chicken => "chicken",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EconGameSpec {
    pub game: EconGame,
    pub endowment: u32,
    pub scenario: Scenario,
}

impl EconGameSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if matches!(self.game, EconGame::Dictator | EconGame::Thieves) && self.endowment == 0 {
            return Err(HarnessError::InvalidTurn(format!(
                "{} requires a positive endowment",
                self.game.as_str()
            )));
        }
        Ok(())
    }
}

/// One replayed decision point: an observation, the candidate movesets
/// nominated for it, and optionally which one the subject actually took.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameTurn {
    pub turn_id: String,
    pub observation: String,
    pub candidate_movesets: Vec<Vec<String>>,
    pub observed_action_index: Option<usize>,
}

impl GameTurn {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.candidate_movesets.is_empty() {
            return Err(HarnessError::InvalidTurn(format!(
                "turn {:?} has no candidate movesets",
                self.turn_id
            )));
        }
        if let Some(idx) = self.observed_action_index {
            if idx >= self.candidate_movesets.len() {
                return Err(HarnessError::InvalidTurn(format!(
                    "turn {:?} observed index {idx} out of range",
                    self.turn_id
                )));
            }
        }
        Ok(())
    }
}

/// Reads a JSONL game log, one [`GameTurn`] per line.
pub fn read_game_log(path: impl AsRef<Path>) -> Result<Vec<GameTurn>, HarnessError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut turns = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let turn: GameTurn = serde_json::from_str(&line)
            .map_err(|source| HarnessError::BadLogLine { line: i + 1, source })?;
        turn.validate()?;
        turns.push(turn);
    }
    Ok(turns)
}

/// A normalized distribution over the considered candidate movesets,
/// aligned by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, HarnessError> {
        if probs.is_empty() {
            return Err(HarnessError::InvalidDistribution("empty".into()));
        }
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(HarnessError::InvalidDistribution(format!(
                "negative or non-finite entry in {probs:?}"
            )));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(HarnessError::InvalidDistribution(format!(
                "mass {mass} differs from 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative counts into a distribution.
    pub fn from_counts(counts: &[f64]) -> Result<Self, HarnessError> {
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(HarnessError::InvalidDistribution(
                "counts sum to zero".into(),
            ));
        }
        Self::new(counts.iter().map(|c| c / total).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Fidelity of induced action distributions to observed moves. Turns whose
/// observed move is absent from the considered candidates are counted as
/// missed and excluded from the perplexity mean, so the perplexity is
/// reported as absent when every turn missed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityReport {
    pub average_perplexity: Option<f64>,
    pub missed_moves: usize,
    pub n_scored_turns: usize,
}

static AMOUNT_RE: OnceLock<Regex> = OnceLock::new();

/// Extracts a dollar amount: the last number in the text (optionally
/// "$"-prefixed, thousands commas stripped), range-checked against
/// `max_amount`.
pub fn parse_amount(text: &str, max_amount: u32) -> Result<u32, HarnessError> {
    let re = AMOUNT_RE.get_or_init(|| {
        Regex::new(r"\$?\d{1,3}(?:,\d{3})+|\$?\d+").expect("amount regex compiles")
    });
    let last = re
        .find_iter(text)
        .last()
        .ok_or_else(|| HarnessError::Unparseable(text.to_string()))?;
    let digits: String = last
        .as_str()
        .chars()
        .filter(|c| c.is_ascii_digit())
        .collect();
    let amount: i64 = digits
        .parse()
        .map_err(|_| HarnessError::Unparseable(text.to_string()))?;
    if amount < 0 || amount > max_amount as i64 {
        return Err(HarnessError::OutOfRange { amount, max_amount });
    }
    Ok(amount as u32)
}

/// A labeled-choice extraction: which label slot was chosen and the
/// interpolated probability of the label's token at its emission step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceHit {
    /// 0 for the first label (option A), 1 for the second (option B).
    pub label_index: usize,
    pub probability: f64,
}

/// Scans a recorded generation for the final "I choose Moveset X" or
/// "My final choice is X" marker, X being one of the two labels. Returns the
/// chosen label and the step probability of the token that emitted it, or
/// `None` when no marker token lies within the final `window` generated
/// tokens (the label token itself counts toward the window).
pub fn parse_labeled_choice(
    record: &GenerationRecord,
    labels: (&str, &str),
    window: usize,
) -> Result<Option<ChoiceHit>, HarnessError> {
    let steps = record.steps.as_ref().ok_or(HarnessError::MissingStepRecord)?;
    let pattern = format!(
        r"(?:I choose Moveset|My final choice is) ({}|{})",
        regex::escape(labels.0),
        regex::escape(labels.1)
    );
    let re = Regex::new(&pattern).expect("choice marker regex compiles");
    let capture = match re.captures_iter(&record.text).last() {
        Some(c) => c,
        None => return Ok(None),
    };
    let label_match = capture.get(1).expect("marker regex has a label group");
    let label_index = usize::from(label_match.as_str() == labels.1);

    // Map the label's byte offset to the token that emitted it; labels that
    // span tokens resolve to their first token.
    let mut offset = 0;
    let mut token_position = None;
    for (i, piece) in record.token_texts.iter().enumerate() {
        let end = offset + piece.len();
        if label_match.start() < end {
            token_position = Some(i);
            break;
        }
        offset = end;
    }
    let position = match token_position {
        Some(p) => p,
        None => return Ok(None),
    };
    let total = record.tokens.len();
    if position + window < total {
        return Ok(None);
    }
    let token_id = record.tokens.0[position];
    let probability = steps
        .get(position)
        .and_then(|s| s.dist.prob(token_id))
        .unwrap_or(0.0);
    Ok(Some(ChoiceHit {
        label_index,
        probability,
    }))
}

/// Presentation side of a runoff pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunoffWinner {
    OptionA,
    OptionB,
}

/// Outcome of one runoff: the winning side and the probability mass the
/// chooser assigned to it.
#[derive(Debug, Clone, Copy)]
pub struct RunoffOutcome {
    pub winner: RunoffWinner,
    pub probability: f64,
}

/// Chooser callback: presented with (index of option A, index of option B),
/// returns the winner and its probability, or `None` for an equiprobable
/// assignment. Errors propagate.
pub type PairChooser<'a> =
    dyn FnMut(usize, usize) -> Result<Option<RunoffOutcome>, HarnessError> + 'a;

/// Runs every ordered pair among the first `n_considered` movesets through
/// the chooser (n * (n - 1) runoffs; presentation order matters, so both
/// orders of each pair run). Each runoff adds the winner's probability to
/// the winner's count and the remaining mass to the other side; `None` adds
/// 0.5 to each. Counts normalize to the induced action distribution.
pub fn runoff_distribution(
    turn: &GameTurn,
    n_considered: usize,
    chooser: &mut PairChooser<'_>,
) -> Result<ActionDistribution, HarnessError> {
    turn.validate()?;
    if n_considered == 0 || n_considered > turn.candidate_movesets.len() {
        return Err(HarnessError::NotEnoughMovesets {
            n: n_considered,
            available: turn.candidate_movesets.len(),
        });
    }
    let mut counts = vec![0.0f64; n_considered];
    for first in 0..n_considered {
        for second in 0..n_considered {
            if first == second {
                continue;
            }
            match chooser(first, second)? {
                Some(outcome) => {
                    let p = outcome.probability.clamp(0.0, 1.0);
                    let (winner, loser) = match outcome.winner {
                        RunoffWinner::OptionA => (first, second),
                        RunoffWinner::OptionB => (second, first),
                    };
                    counts[winner] += p;
                    counts[loser] += 1.0 - p;
                }
                None => {
                    counts[first] += 0.5;
                    counts[second] += 0.5;
                }
            }
        }
    }
    ActionDistribution::from_counts(&counts)
}

/// Scores induced distributions against observed moves. The average
/// perplexity is `exp(-(1/N) * sum ln p(a_t))` over the scored turns, with
/// probabilities floored at [`PROB_FLOOR`].
pub fn evaluate_fidelity(
    turns: &[GameTurn],
    dists: &[ActionDistribution],
) -> Result<FidelityReport, HarnessError> {
    if turns.len() != dists.len() {
        return Err(HarnessError::MisalignedInputs {
            turns: turns.len(),
            dists: dists.len(),
        });
    }
    let mut log_sum = 0.0;
    let mut scored = 0usize;
    let mut missed = 0usize;
    for (turn, dist) in turns.iter().zip(dists) {
        match turn.observed_action_index {
            Some(idx) if idx < dist.len() => {
                log_sum += dist.probs[idx].max(PROB_FLOOR).ln();
                scored += 1;
            }
            _ => missed += 1,
        }
    }
    let average_perplexity = if scored > 0 {
        Some((-log_sum / scored as f64).exp())
    } else {
        None
    };
    Ok(FidelityReport {
        average_perplexity,
        missed_moves: missed,
        n_scored_turns: scored,
    })
}
