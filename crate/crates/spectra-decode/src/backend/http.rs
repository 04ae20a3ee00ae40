//! Client for the JSON logit-server protocol.
//!
//! `POST {base}/v1/next_token` with `{"model", "tokens" | "prompt", "top_k"}`
//! returns `{"entries": [{"id", "token", "logprob"}], "truncated"}`.
//! HTTP 4xx maps to `InvalidRequest` (413 to `ContextTooLong`), 5xx and
//! transport failures to `BackendUnavailable`.
//!
//! The protocol has no tokenize endpoint, so the client runs in text context
//! mode and requests the largest top_k the server supports. Truncated
//! responses are recorded as-is; renormalization happens downstream during
//! support alignment. Token texts seen in responses are cached so sampled
//! ids can be detokenized when extending the prompt.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendDescriptor, BackendError, BackendKind, ContextMode, LmBackend, TokenDistribution,
    TokenId, TokenSequence, TopK,
};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    descriptor: BackendDescriptor,
    /// Largest top_k the server supports; sent when `TopK::Full` is asked.
    max_top_k: u32,
    token_cache: Mutex<HashMap<TokenId, String>>,
}

#[derive(Serialize)]
struct NextTokenRequest<'a> {
    model: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<&'a [TokenId]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
    top_k: u32,
}

#[derive(Deserialize)]
struct NextTokenResponse {
    entries: Vec<NextTokenEntry>,
    truncated: bool,
}

#[derive(Deserialize)]
struct NextTokenEntry {
    id: TokenId,
    token: String,
    logprob: f64,
}

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        model_id: impl Into<String>,
        vocabulary_size: u32,
        max_top_k: u32,
    ) -> Result<Self, BackendError> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            agent: config.new_agent(),
            base_url,
            descriptor: BackendDescriptor::new(
                BackendKind::HttpLogitServer,
                model_id,
                vocabulary_size,
            )?,
            max_top_k,
            token_cache: Mutex::new(HashMap::new()),
        })
    }

    fn effective_top_k(&self, top_k: TopK) -> u32 {
        match top_k {
            TopK::Full => self.max_top_k,
            TopK::K(k) => k.min(self.max_top_k),
        }
    }

    fn post_next_token(
        &self,
        request: &NextTokenRequest<'_>,
        requested: TopK,
    ) -> Result<TokenDistribution, BackendError> {
        let url = format!("{}/v1/next_token", self.base_url);
        let body = serde_json::to_string(request)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let mut response = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(&body)
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        match status {
            200..=299 => {}
            413 => {
                return Err(BackendError::ContextTooLong {
                    len: request.tokens.map(|t| t.len()).unwrap_or(0),
                    limit: 0,
                })
            }
            400..=499 => return Err(BackendError::InvalidRequest(format!("HTTP {status}: {text}"))),
            _ => {
                return Err(BackendError::BackendUnavailable(format!(
                    "HTTP {status}: {text}"
                )))
            }
        }
        let parsed: NextTokenResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::BackendUnavailable(format!("bad response body: {e}")))?;
        {
            let mut cache = self.token_cache.lock().expect("token cache poisoned");
            for entry in &parsed.entries {
                cache.entry(entry.id).or_insert_with(|| entry.token.clone());
            }
        }
        let top_k = match requested {
            TopK::Full if parsed.truncated => TopK::K(self.max_top_k),
            other => other,
        };
        TokenDistribution::from_logprobs(
            parsed.entries.into_iter().map(|e| (e.id, e.logprob)),
            parsed.truncated,
            top_k,
        )
    }
}

impl LmBackend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, _text: &str) -> Result<TokenSequence, BackendError> {
        Err(BackendError::TokenizeUnsupported)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        let cache = self.token_cache.lock().expect("token cache poisoned");
        tokens
            .iter()
            .map(|id| {
                cache
                    .get(id)
                    .map(String::as_str)
                    .ok_or(BackendError::UnknownTokenId(*id))
            })
            .collect()
    }

    fn next_token_distribution(
        &self,
        ctx: &TokenSequence,
        top_k: TopK,
    ) -> Result<TokenDistribution, BackendError> {
        let request = NextTokenRequest {
            model: &self.descriptor.model_id,
            tokens: Some(ctx.as_slice()),
            prompt: None,
            top_k: self.effective_top_k(top_k),
        };
        self.post_next_token(&request, top_k)
    }

    fn context_mode(&self) -> ContextMode {
        ContextMode::Text
    }

    fn next_for_prompt(&self, prompt: &str, top_k: TopK) -> Result<TokenDistribution, BackendError> {
        let request = NextTokenRequest {
            model: &self.descriptor.model_id,
            tokens: None,
            prompt: Some(prompt),
            top_k: self.effective_top_k(top_k),
        };
        self.post_next_token(&request, top_k)
    }
}
