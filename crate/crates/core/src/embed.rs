//! Text embedders and cosine similarity.
//!
//! [`FixtureEmbedder`] serves vectors from a JSONL table and hashes any other
//! text into a disjoint block of dimensions, so unlisted text is orthogonal to
//! every table entry. [`RemoteEmbedder`] calls an HTTP encoder service.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{fnv1a64, splitmix64};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedderError {
    #[error("embedder request timed out")]
    Timeout,
    #[error("embedder transport error: {0}")]
    Transport(String),
    #[error("malformed embedder response: {0}")]
    Malformed(String),
    #[error("invalid fixture file: {0}")]
    Fixture(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, VectorError> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(VectorError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// `dot(u, v) / (|u| |v|)`, clamped to [-1, 1] against rounding.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Maps text to unit-norm vectors of a fixed dimension.
///
/// Implementations must be deterministic and safe for concurrent reads.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError>;
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        (**self).embed(text)
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        (**self).embed(text)
    }
}

#[derive(Debug, Deserialize)]
struct FixtureHeader {
    dim: usize,
    #[serde(default = "default_model_id")]
    model_id: String,
    #[serde(default = "default_hash_dim")]
    hash_dim: usize,
}

fn default_model_id() -> String {
    "fixture".to_owned()
}

fn default_hash_dim() -> usize {
    64
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureEntry {
    text: String,
    vector: Vec<f64>,
}

/// Table-backed embedder with a hashed fallback for unlisted text.
///
/// Output vectors have `dim + hash_dim` components. Table vectors occupy the
/// first `dim` and hashed vectors the last `hash_dim`, so the two never
/// overlap. Hashed vectors are the normalized sum of per-token pseudo-random
/// vectors, which keeps identical text at similarity 1.
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    model_id: String,
    table_dim: usize,
    hash_dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FixtureEmbedder {
    pub fn new(model_id: impl Into<String>, table_dim: usize, hash_dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            table_dim,
            hash_dim: hash_dim.max(1),
            table: HashMap::new(),
        }
    }

    /// Adds a table entry; the vector is normalized here.
    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<(), EmbedderError> {
        if vector.len() != self.table_dim {
            return Err(VectorError::DimensionMismatch(vector.len(), self.table_dim).into());
        }
        let mut v = normalize(vector)?;
        v.resize(self.table_dim + self.hash_dim, 0.0);
        self.table.insert(text.into(), v);
        Ok(())
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, EmbedderError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| EmbedderError::Fixture("missing header line".into()))?;
        let header: FixtureHeader =
            serde_json::from_str(header).map_err(|e| EmbedderError::Fixture(format!("header: {e}")))?;
        let mut out = Self::new(header.model_id, header.dim, header.hash_dim);
        for (i, line) in lines {
            let entry: FixtureEntry =
                serde_json::from_str(line).map_err(|e| EmbedderError::Fixture(format!("line {}: {e}", i + 1)))?;
            out.insert(entry.text, entry.vector)
                .map_err(|e| EmbedderError::Fixture(format!("line {}: {e}", i + 1)))?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedderError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| EmbedderError::Fixture(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text)
    }

    pub fn contains(&self, text: &str) -> bool {
        self.table.contains_key(text)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn hashed(&self, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(&lower);
        }
        let mut v = vec![0.0; self.table_dim + self.hash_dim];
        for token in tokens {
            let mut state = fnv1a64(token.as_bytes());
            for slot in &mut v[self.table_dim..] {
                let bits = splitmix64(&mut state) >> 11;
                *slot += bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            }
        }
        // a sum of non-degenerate pseudo-random vectors is never exactly zero
        normalize(v).expect("hashed vector has non-zero norm")
    }
}

impl Embedder for FixtureEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.table_dim + self.hash_dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        Ok(match self.table.get(text) {
            Some(v) => v.clone(),
            None => self.hashed(text),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model_id: String,
    pub dim: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_header: Option<String>,
}

fn default_timeout_ms() -> u64 {
    5_000
}

impl RemoteEmbedderConfig {
    /// Reads `BOUNDED_EMBED_ENDPOINT`, `BOUNDED_EMBED_MODEL`,
    /// `BOUNDED_EMBED_DIM` and the optional `BOUNDED_EMBED_AUTH`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("BOUNDED_EMBED_ENDPOINT").ok()?;
        Some(Self {
            endpoint,
            model_id: std::env::var("BOUNDED_EMBED_MODEL").unwrap_or_else(|_| "remote".into()),
            dim: std::env::var("BOUNDED_EMBED_DIM").ok()?.parse().ok()?,
            timeout_ms: default_timeout_ms(),
            auth_header: std::env::var("BOUNDED_EMBED_AUTH").ok(),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// HTTP client for an external sentence encoder.
///
/// Sends `{"texts": [...]}` and expects `{"vectors": [[...]]}`.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbedderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| EmbedderError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedderError> {
        let mut req = self.client.post(&self.config.endpoint).json(&EmbedRequest { texts });
        if let Some(auth) = &self.config.auth_header {
            req = req.header("Authorization", auth);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                EmbedderError::Timeout
            } else {
                EmbedderError::Transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(EmbedderError::Transport(format!("status {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().map_err(|e| EmbedderError::Malformed(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedderError::Malformed(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.config.dim {
                    return Err(EmbedderError::Malformed(format!(
                        "vector dimension {} != {}",
                        v.len(),
                        self.config.dim
                    )));
                }
                Ok(normalize(v)?)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedderError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}
