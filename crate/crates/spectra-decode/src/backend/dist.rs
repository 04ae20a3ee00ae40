//! Token sequences and next-token distributions in log space.
//!
//! Log-probabilities are the canonical representation throughout the crate:
//! contrastive combination and perplexity are both log-space computations,
//! and probabilities are recovered with `exp` only at the edges.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::BackendError;

/// Token identifier within a backend's vocabulary.
pub type TokenId = u32;

/// Sum-to-one tolerance for full (untruncated) distributions.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// An ordered sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    /// Returns a new sequence with `extra` appended.
    pub fn extended(&self, extra: &[TokenId]) -> Self {
        let mut out = self.0.clone();
        out.extend_from_slice(extra);
        Self(out)
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }
}

/// Requested truncation of a next-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    /// The whole vocabulary support.
    Full,
    /// The `k` most probable tokens.
    K(u32),
}

impl Serialize for TopK {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TopK::Full => serializer.serialize_str("full"),
            TopK::K(k) => serializer.serialize_u32(*k),
        }
    }
}

impl<'de> Deserialize<'de> for TopK {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        match v {
            serde_json::Value::String(s) if s == "full" => Ok(TopK::Full),
            serde_json::Value::Number(n) => {
                let k = n
                    .as_u64()
                    .filter(|k| *k >= 1 && *k <= u32::MAX as u64)
                    .ok_or_else(|| D::Error::custom("top_k must be a positive integer"))?;
                Ok(TopK::K(k as u32))
            }
            other => Err(D::Error::custom(format!(
                "expected \"full\" or a positive integer, got {other}"
            ))),
        }
    }
}

/// A next-token distribution over a (possibly truncated) support, stored as
/// natural-log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    entries: BTreeMap<TokenId, f64>,
    pub truncated: bool,
    pub top_k: TopK,
}

impl TokenDistribution {
    /// Builds a full distribution from probabilities. The probabilities must
    /// be positive and sum to 1 within [`MASS_TOLERANCE`].
    pub fn from_probs<I>(probs: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = (TokenId, f64)>,
    {
        let entries: BTreeMap<TokenId, f64> = probs
            .into_iter()
            .map(|(id, p)| {
                if p <= 0.0 || !p.is_finite() {
                    Err(BackendError::InvalidModel(format!(
                        "probability for token {id} must be finite and positive, got {p}"
                    )))
                } else {
                    Ok((id, p.ln()))
                }
            })
            .collect::<Result<_, _>>()?;
        let dist = Self {
            entries,
            truncated: false,
            top_k: TopK::Full,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Builds a distribution directly from log-probabilities.
    pub fn from_logprobs<I>(logprobs: I, truncated: bool, top_k: TopK) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = (TokenId, f64)>,
    {
        let dist = Self {
            entries: logprobs.into_iter().collect(),
            truncated,
            top_k,
        };
        dist.validate()?;
        Ok(dist)
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.entries.is_empty() {
            return Err(BackendError::InvalidModel(
                "distribution has no entries".into(),
            ));
        }
        for (&id, &lp) in &self.entries {
            if !lp.is_finite() || lp > 1e-12 {
                return Err(BackendError::InvalidModel(format!(
                    "log-probability {lp} for token {id} out of range"
                )));
            }
        }
        if !self.truncated {
            let mass = self.total_mass();
            if (mass - 1.0).abs() > MASS_TOLERANCE {
                return Err(BackendError::InvalidModel(format!(
                    "full distribution mass {mass} differs from 1 by more than {MASS_TOLERANCE}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn logprob(&self, id: TokenId) -> Option<f64> {
        self.entries.get(&id).copied()
    }

    pub fn prob(&self, id: TokenId) -> Option<f64> {
        self.logprob(id).map(f64::exp)
    }

    /// Iterates over (token, logprob) in ascending token-id order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.entries.iter().map(|(&id, &lp)| (id, lp))
    }

    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Entries sorted by descending log-probability; ties break toward the
    /// lower token id. This is the canonical serialization order.
    pub fn sorted_entries(&self) -> Vec<(TokenId, f64)> {
        let mut out: Vec<(TokenId, f64)> = self.iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Most probable token; ties break toward the lower token id.
    pub fn argmax(&self) -> TokenId {
        self.sorted_entries()[0].0
    }

    pub fn min_logprob(&self) -> f64 {
        self.entries
            .values()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().map(|lp| lp.exp()).sum()
    }

    /// Renormalizes so that probabilities sum to exactly 1, staying in log
    /// space via log-sum-exp.
    pub fn normalized(&self) -> Self {
        let max = self
            .entries
            .values()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let log_z = max
            + self
                .entries
                .values()
                .map(|lp| (lp - max).exp())
                .sum::<f64>()
                .ln();
        Self {
            entries: self
                .entries
                .iter()
                .map(|(&id, &lp)| (id, (lp - log_z).min(0.0)))
                .collect(),
            truncated: false,
            top_k: TopK::Full,
        }
    }

    /// Total-variation distance: half the L1 distance between probability
    /// vectors over the union of supports.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut ids: Vec<TokenId> = self.support().collect();
        ids.extend(other.support());
        ids.sort_unstable();
        ids.dedup();
        0.5 * ids
            .iter()
            .map(|&id| {
                (self.prob(id).unwrap_or(0.0) - other.prob(id).unwrap_or(0.0)).abs()
            })
            .sum::<f64>()
    }

    /// Keeps the `k` most probable entries (ties toward the lower id) and
    /// marks the result truncated. Log-probabilities are left untouched.
    pub fn truncate_top_k(&self, k: u32) -> Self {
        let keep: BTreeMap<TokenId, f64> = self
            .sorted_entries()
            .into_iter()
            .take(k as usize)
            .collect();
        Self {
            entries: keep,
            truncated: true,
            top_k: TopK::K(k),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireDistribution {
    entries: Vec<WireEntry>,
    truncated: bool,
    top_k: TopK,
}

#[derive(Serialize, Deserialize)]
struct WireEntry {
    id: TokenId,
    logprob: f64,
}

impl Serialize for TokenDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire = WireDistribution {
            entries: self
                .sorted_entries()
                .into_iter()
                .map(|(id, logprob)| WireEntry { id, logprob })
                .collect(),
            truncated: self.truncated,
            top_k: self.top_k,
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TokenDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireDistribution::deserialize(deserializer)?;
        TokenDistribution::from_logprobs(
            wire.entries.into_iter().map(|e| (e.id, e.logprob)),
            wire.truncated,
            wire.top_k,
        )
        .map_err(D::Error::custom)
    }
}
