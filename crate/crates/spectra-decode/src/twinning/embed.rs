//! Pluggable text embedding providers.
//!
//! The deterministic hash embedder makes regression-dataset construction
//! fully reproducible in tests; real embeddings come from an HTTP provider
//! speaking `POST /v1/embed {"texts": [...]} -> {"vectors": [[f64]], "dim"}`.

use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TwinError;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, TwinError>;
}

/// Deterministic pseudo-random unit vectors keyed by a hash of the text.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, TwinError> {
        Ok(texts
            .iter()
            .map(|text| {
                let digest = Sha256::digest(text.as_bytes());
                let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for x in &mut v {
                    *x /= norm;
                }
                v
            })
            .collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// HTTP embedding provider.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    base_url: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.new_agent(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            dim,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, TwinError> {
        let url = format!("{}/v1/embed", self.base_url);
        let body = serde_json::to_string(&EmbedRequest { texts })
            .map_err(|e| TwinError::Embedding(e.to_string()))?;
        let mut response = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(&body)
            .map_err(|e| TwinError::Embedding(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TwinError::Embedding(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TwinError::Embedding(format!("HTTP {status}: {text}")));
        }
        let parsed: EmbedResponse = serde_json::from_str(&text)
            .map_err(|e| TwinError::Embedding(format!("bad embed response: {e}")))?;
        if parsed.dim != self.dim || parsed.vectors.iter().any(|v| v.len() != self.dim) {
            return Err(TwinError::Embedding(format!(
                "embedding dimension mismatch: expected {}, got {}",
                self.dim, parsed.dim
            )));
        }
        Ok(parsed.vectors)
    }
}
