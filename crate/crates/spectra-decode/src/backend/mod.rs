//! Uniform interface to autoregressive models that report next-token
//! log-probabilities.
//!
//! Two implementations ship with the crate: [`ToyModel`], a deterministic
//! suffix-keyed table whose every downstream computation can be checked by
//! hand, and [`HttpBackend`], a client for the JSON logit-server protocol.

mod dist;
mod http;
mod toy;

pub use dist::{TokenDistribution, TokenId, TokenSequence, TopK, MASS_TOLERANCE};
pub use http::HttpBackend;
pub use toy::{ToyModel, ToyModelBuilder};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no vocabulary token matches input text at byte {position}")]
    UnknownCharacter { position: usize },
    #[error("unknown token id {0}")]
    UnknownTokenId(TokenId),
    #[error("tokenization is not exposed by this backend")]
    TokenizeUnsupported,
    #[error("context of {len} tokens exceeds the backend limit of {limit}")]
    ContextTooLong { len: usize, limit: usize },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid model definition: {0}")]
    InvalidModel(String),
}

/// Which backend implementation a descriptor refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ToyTable,
    HttpLogitServer,
}

/// Identifying metadata for a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    pub vocabulary_size: u32,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind, model_id: impl Into<String>, vocabulary_size: u32) -> Result<Self, BackendError> {
        if vocabulary_size < 2 {
            return Err(BackendError::InvalidModel(format!(
                "vocabulary_size must be at least 2, got {vocabulary_size}"
            )));
        }
        Ok(Self {
            kind,
            model_id: model_id.into(),
            vocabulary_size,
        })
    }
}

/// How a backend prefers its generation context to be maintained.
///
/// Token-context backends expose `tokenize`, so the generation loop can keep
/// exact token-id prefixes. The logit-server protocol has no tokenize
/// endpoint, so the HTTP client runs in text mode: prompts go over the wire
/// as strings and sampled tokens are appended by their reported text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    Tokens,
    Text,
}

pub trait LmBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError>;

    /// Next-token distribution conditioned on `ctx`. With `TopK::Full` the
    /// result sums to 1 within [`MASS_TOLERANCE`]; truncated results keep
    /// their raw log-probabilities without renormalization.
    fn next_token_distribution(
        &self,
        ctx: &TokenSequence,
        top_k: TopK,
    ) -> Result<TokenDistribution, BackendError>;

    fn context_mode(&self) -> ContextMode {
        ContextMode::Tokens
    }

    /// Next-token distribution conditioned on a text prompt. The default
    /// routes through `tokenize`; text-mode backends override it.
    fn next_for_prompt(&self, prompt: &str, top_k: TopK) -> Result<TokenDistribution, BackendError> {
        let ctx = self.tokenize(prompt)?;
        self.next_token_distribution(&ctx, top_k)
    }
}

impl<T: LmBackend + ?Sized> LmBackend for &T {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        (**self).detokenize(tokens)
    }
    fn next_token_distribution(
        &self,
        ctx: &TokenSequence,
        top_k: TopK,
    ) -> Result<TokenDistribution, BackendError> {
        (**self).next_token_distribution(ctx, top_k)
    }
    fn context_mode(&self) -> ContextMode {
        (**self).context_mode()
    }
    fn next_for_prompt(&self, prompt: &str, top_k: TopK) -> Result<TokenDistribution, BackendError> {
        (**self).next_for_prompt(prompt, top_k)
    }
}
