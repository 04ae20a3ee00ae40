//! Deterministic toy backend: a suffix-keyed table of next-token
//! distributions over an explicit vocabulary.
//!
//! The table maps a context suffix of up to [`MAX_SUFFIX_LEN`] tokens to an
//! explicit distribution; the longest matching suffix wins and a mandatory
//! default row covers everything else. Vocabulary entries are arbitrary
//! strings and the tokenizer is greedy longest-match, so a single "token"
//! may stand for a whole prompt in test fixtures.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BackendDescriptor, BackendError, BackendKind, LmBackend, TokenDistribution, TokenId,
    TokenSequence, TopK, MASS_TOLERANCE,
};

/// Longest context suffix a table row may key on.
pub const MAX_SUFFIX_LEN: usize = 3;

#[derive(Debug, Clone)]
struct Row {
    suffix: Vec<TokenId>,
    dist: BTreeMap<TokenId, f64>,
}

/// Immutable suffix-table model. Construct through [`ToyModelBuilder`] or
/// load from the JSON file format via [`ToyModel::from_file`].
#[derive(Debug, Clone)]
pub struct ToyModel {
    descriptor: BackendDescriptor,
    /// Token strings ordered by descending length for greedy matching.
    match_order: Vec<(String, TokenId)>,
    token_text: Vec<String>,
    rows: Vec<Row>,
    default_dist: BTreeMap<TokenId, f64>,
    max_context: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ToyModelFile {
    vocab: BTreeMap<String, TokenId>,
    rows: Vec<ToyRowFile>,
    default: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_context: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ToyRowFile {
    suffix: Vec<TokenId>,
    dist: BTreeMap<String, f64>,
}

fn parse_id_keys(dist: &BTreeMap<String, f64>) -> Result<BTreeMap<TokenId, f64>, BackendError> {
    dist.iter()
        .map(|(k, &p)| {
            let id: TokenId = k
                .parse()
                .map_err(|_| BackendError::InvalidModel(format!("bad token id key {k:?}")))?;
            Ok((id, p))
        })
        .collect()
}

impl ToyModel {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            BackendError::InvalidModel(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let file: ToyModelFile = serde_json::from_str(text)
            .map_err(|e| BackendError::InvalidModel(format!("bad toy model JSON: {e}")))?;
        let mut builder = ToyModelBuilder::new();
        if let Some(id) = file.model_id {
            builder = builder.model_id(id);
        }
        if let Some(limit) = file.max_context {
            builder = builder.max_context(limit);
        }
        for (text, id) in file.vocab {
            builder = builder.token_with_id(text, id);
        }
        for row in &file.rows {
            builder = builder.row_by_id(row.suffix.clone(), parse_id_keys(&row.dist)?);
        }
        builder = builder.default_row_by_id(parse_id_keys(&file.default)?);
        builder.build()
    }

    /// Serializes back to the toy-model file format.
    pub fn to_json(&self) -> String {
        let file = ToyModelFile {
            vocab: self
                .token_text
                .iter()
                .enumerate()
                .map(|(id, text)| (text.clone(), id as TokenId))
                .collect(),
            rows: self
                .rows
                .iter()
                .map(|r| ToyRowFile {
                    suffix: r.suffix.clone(),
                    dist: r.dist.iter().map(|(id, &p)| (id.to_string(), p)).collect(),
                })
                .collect(),
            default: self
                .default_dist
                .iter()
                .map(|(id, &p)| (id.to_string(), p))
                .collect(),
            model_id: Some(self.descriptor.model_id.clone()),
            max_context: self.max_context,
        };
        serde_json::to_string_pretty(&file).expect("toy model file serializes")
    }

    pub fn to_file(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| {
            BackendError::InvalidModel(format!("cannot write {}: {e}", path.as_ref().display()))
        })
    }

    pub fn token_id(&self, text: &str) -> Option<TokenId> {
        self.match_order
            .iter()
            .find(|(t, _)| t == text)
            .map(|(_, id)| *id)
    }

    /// Longest table suffix matching the tail of `ctx`, or the default row.
    fn lookup(&self, ctx: &[TokenId]) -> &BTreeMap<TokenId, f64> {
        self.rows
            .iter()
            .filter(|row| ctx.ends_with(&row.suffix))
            .max_by_key(|row| row.suffix.len())
            .map(|row| &row.dist)
            .unwrap_or(&self.default_dist)
    }
}

impl LmBackend for ToyModel {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        let mut tokens = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            match self
                .match_order
                .iter()
                .find(|(t, _)| !t.is_empty() && rest.starts_with(t.as_str()))
            {
                Some((t, id)) => {
                    tokens.push(*id);
                    pos += t.len();
                }
                None => return Err(BackendError::UnknownCharacter { position: pos }),
            }
        }
        Ok(TokenSequence(tokens))
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        tokens
            .iter()
            .map(|&id| {
                self.token_text
                    .get(id as usize)
                    .map(String::as_str)
                    .ok_or(BackendError::UnknownTokenId(id))
            })
            .collect()
    }

    fn next_token_distribution(
        &self,
        ctx: &TokenSequence,
        top_k: TopK,
    ) -> Result<TokenDistribution, BackendError> {
        if let Some(limit) = self.max_context {
            if ctx.len() > limit {
                return Err(BackendError::ContextTooLong {
                    len: ctx.len(),
                    limit,
                });
            }
        }
        for &id in ctx.as_slice() {
            if id as usize >= self.token_text.len() {
                return Err(BackendError::UnknownTokenId(id));
            }
        }
        let probs = self.lookup(ctx.as_slice());
        let full = TokenDistribution::from_probs(probs.iter().map(|(&id, &p)| (id, p)))?;
        Ok(match top_k {
            TopK::Full => full,
            TopK::K(k) => full.truncate_top_k(k),
        })
    }
}

/// Builder for [`ToyModel`]; used both by tests and by fixture generators
/// that write the JSON file format.
#[derive(Debug, Default)]
pub struct ToyModelBuilder {
    model_id: Option<String>,
    vocab: Vec<(String, Option<TokenId>)>,
    rows: Vec<PendingRow>,
    default_dist: Option<PendingDist>,
    max_context: Option<usize>,
}

#[derive(Debug)]
enum PendingDist {
    Ids(BTreeMap<TokenId, f64>),
    Texts(Vec<(String, f64)>),
}

#[derive(Debug)]
enum PendingRow {
    Ids(Vec<TokenId>, BTreeMap<TokenId, f64>),
    Texts(Vec<String>, Vec<(String, f64)>),
}

impl ToyModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = Some(id.into());
        self
    }

    pub fn max_context(mut self, limit: usize) -> Self {
        self.max_context = Some(limit);
        self
    }

    /// Adds a vocabulary entry; its id is assigned in insertion order.
    pub fn token(mut self, text: impl Into<String>) -> Self {
        self.vocab.push((text.into(), None));
        self
    }

    pub fn token_with_id(mut self, text: impl Into<String>, id: TokenId) -> Self {
        self.vocab.push((text.into(), Some(id)));
        self
    }

    pub fn row_by_id(mut self, suffix: Vec<TokenId>, dist: BTreeMap<TokenId, f64>) -> Self {
        self.rows.push(PendingRow::Ids(suffix, dist));
        self
    }

    /// Adds a row keyed by token strings, resolved against the vocabulary at
    /// build time; the distribution maps token strings to probabilities.
    pub fn row(mut self, suffix: &[&str], dist: &[(&str, f64)]) -> Self {
        self.rows.push(PendingRow::Texts(
            suffix.iter().map(|s| s.to_string()).collect(),
            dist.iter().map(|(s, p)| (s.to_string(), *p)).collect(),
        ));
        self
    }

    pub fn default_row_by_id(mut self, dist: BTreeMap<TokenId, f64>) -> Self {
        self.default_dist = Some(PendingDist::Ids(dist));
        self
    }

    pub fn default_row(mut self, dist: &[(&str, f64)]) -> Self {
        self.default_dist = Some(PendingDist::Texts(
            dist.iter().map(|(s, p)| (s.to_string(), *p)).collect(),
        ));
        self
    }

    pub fn build(self) -> Result<ToyModel, BackendError> {
        let mut token_text: Vec<Option<String>> = Vec::new();
        let mut next_free = 0u32;
        for (text, forced) in &self.vocab {
            let id = match forced {
                Some(id) => *id,
                None => {
                    while (next_free as usize) < token_text.len()
                        && token_text[next_free as usize].is_some()
                    {
                        next_free += 1;
                    }
                    next_free
                }
            } as usize;
            if token_text.len() <= id {
                token_text.resize(id + 1, None);
            }
            if token_text[id].is_some() {
                return Err(BackendError::InvalidModel(format!(
                    "duplicate token id {id}"
                )));
            }
            if self.vocab.iter().filter(|(t, _)| t == text).count() > 1 {
                return Err(BackendError::InvalidModel(format!(
                    "duplicate token string {text:?}"
                )));
            }
            token_text[id] = Some(text.clone());
        }
        let token_text: Vec<String> = token_text
            .into_iter()
            .enumerate()
            .map(|(id, t)| {
                t.ok_or_else(|| {
                    BackendError::InvalidModel(format!("token ids must be dense; id {id} unused"))
                })
            })
            .collect::<Result<_, _>>()?;
        if token_text.len() < 2 {
            return Err(BackendError::InvalidModel(
                "toy vocabulary needs at least 2 tokens".into(),
            ));
        }

        let resolve = |text: &str| -> Result<TokenId, BackendError> {
            token_text
                .iter()
                .position(|t| t == text)
                .map(|i| i as TokenId)
                .ok_or_else(|| BackendError::InvalidModel(format!("unknown token string {text:?}")))
        };
        let resolve_dist =
            |dist: &[(String, f64)]| -> Result<BTreeMap<TokenId, f64>, BackendError> {
                dist.iter().map(|(s, p)| Ok((resolve(s)?, *p))).collect()
            };

        let mut rows = Vec::new();
        for pending in self.rows {
            let (suffix, dist) = match pending {
                PendingRow::Ids(suffix, dist) => (suffix, dist),
                PendingRow::Texts(texts, dist) => (
                    texts
                        .iter()
                        .map(|t| resolve(t))
                        .collect::<Result<Vec<_>, _>>()?,
                    resolve_dist(&dist)?,
                ),
            };
            rows.push(Row { suffix, dist });
        }
        let default_dist = match self.default_dist {
            Some(PendingDist::Ids(d)) => d,
            Some(PendingDist::Texts(d)) => resolve_dist(&d)?,
            None => {
                return Err(BackendError::InvalidModel(
                    "toy model requires a default row".into(),
                ))
            }
        };

        let vocab_len = token_text.len();
        let check_dist = |name: &str, dist: &BTreeMap<TokenId, f64>| -> Result<(), BackendError> {
            if dist.is_empty() {
                return Err(BackendError::InvalidModel(format!("{name} row is empty")));
            }
            let mass: f64 = dist.values().sum();
            if (mass - 1.0).abs() > MASS_TOLERANCE {
                return Err(BackendError::InvalidModel(format!(
                    "{name} row probabilities sum to {mass}, expected 1"
                )));
            }
            for (&id, &p) in dist {
                if id as usize >= vocab_len {
                    return Err(BackendError::UnknownTokenId(id));
                }
                if p <= 0.0 || !p.is_finite() {
                    return Err(BackendError::InvalidModel(format!(
                        "{name} row has non-positive probability {p} for token {id}"
                    )));
                }
            }
            Ok(())
        };
        check_dist("default", &default_dist)?;
        let mut seen_suffixes = Vec::new();
        for row in &rows {
            if row.suffix.is_empty() || row.suffix.len() > MAX_SUFFIX_LEN {
                return Err(BackendError::InvalidModel(format!(
                    "row suffix length must be 1..={MAX_SUFFIX_LEN}, got {}",
                    row.suffix.len()
                )));
            }
            for &id in &row.suffix {
                if id as usize >= vocab_len {
                    return Err(BackendError::UnknownTokenId(id));
                }
            }
            if seen_suffixes.contains(&row.suffix) {
                return Err(BackendError::InvalidModel(format!(
                    "duplicate row suffix {:?}",
                    row.suffix
                )));
            }
            seen_suffixes.push(row.suffix.clone());
            check_dist("table", &row.dist)?;
        }

        let mut match_order: Vec<(String, TokenId)> = token_text
            .iter()
            .enumerate()
            .map(|(id, t)| (t.clone(), id as TokenId))
            .collect();
        match_order.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));

        Ok(ToyModel {
            descriptor: BackendDescriptor::new(
                BackendKind::ToyTable,
                self.model_id.unwrap_or_else(|| "toy".into()),
                vocab_len as u32,
            )?,
            match_order,
            token_text,
            rows,
            default_dist,
            max_context: self.max_context,
        })
    }
}
