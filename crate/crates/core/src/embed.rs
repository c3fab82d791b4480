//! Embedding vectors, cosine similarity, and embedding providers.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{CallError, JsonClient};
use crate::par::{self, Execution};

/// Dense embedding. Components are `f32`; all arithmetic is done in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Unit-length copy.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            values: self.values.iter().map(|&v| (f64::from(v) / n) as f32).collect(),
        })
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Source of the embedding function.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One unit vector per text, in input order. Texts are non-empty.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

/// Validates inputs and outputs around a provider call.
pub fn embed_texts(provider: &dyn EmbeddingProvider, texts: &[&str]) -> Result<Vec<Embedding>> {
    if texts.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyText);
    }
    let out = provider.embed_batch(texts)?;
    if out.len() != texts.len() {
        return Err(Error::ProviderContract(format!(
            "expected {} vectors, got {}",
            texts.len(),
            out.len()
        )));
    }
    for v in &out {
        if v.dim() != provider.dim() {
            return Err(Error::ProviderContract(format!(
                "vector dim {} differs from configured {}",
                v.dim(),
                provider.dim()
            )));
        }
    }
    Ok(out)
}

pub fn embed_one(provider: &dyn EmbeddingProvider, text: &str) -> Result<Embedding> {
    Ok(embed_texts(provider, &[text])?.remove(0))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic character n-gram embedding for offline use.
///
/// Each distinct 1-3 character n-gram of the lowercased text seeds a
/// splitmix64 stream that yields a direction in `[-1, 1)^dim`; directions are
/// normalized, weighted by n-gram count, summed, and the sum normalized. Only
/// integer hashing and IEEE arithmetic are involved, so output is identical
/// on every platform.
pub fn stub_embed(text: &str, seed: u64, dim: usize) -> Result<Embedding> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for n in 1..=3 {
        for w in chars.windows(n) {
            *counts.entry(w.iter().collect()).or_default() += 1;
        }
    }
    let mut acc = vec![0.0f64; dim];
    let mut dir = vec![0.0f64; dim];
    for (gram, count) in &counts {
        let mut state = fnv1a64(gram.as_bytes()) ^ seed.wrapping_mul(FNV_PRIME);
        let mut sq = 0.0;
        for d in dir.iter_mut() {
            // top 53 bits -> [0, 1) -> [-1, 1)
            let u = (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
            *d = 2.0 * u - 1.0;
            sq += *d * *d;
        }
        let scale = f64::from(*count) / sq.sqrt();
        for (a, d) in acc.iter_mut().zip(&dir) {
            *a += d * scale;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Embedding::new(acc.iter().map(|v| (v / norm) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct StubEmbedder {
    pub seed: u64,
    pub dim: usize,
    pub exec: Execution,
}

impl StubEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            exec: Execution::Parallel,
        }
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        par::try_map(self.exec, texts, |t| stub_embed(t, self.seed, self.dim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub seed: u64,
    pub base_url: Option<String>,
    pub timeout_ms: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_retries: usize,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            dim: 768,
            seed: 0,
            base_url: None,
            timeout_ms: 30_000,
            batch_size: 32,
            max_in_flight: 4,
            max_retries: 2,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig("embedding dim must be at least 2".into()));
        }
        if self.timeout_ms == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("timeout_ms and batch_size must be positive".into()));
        }
        if self.kind == ProviderKind::Http && self.base_url.as_deref().is_none_or(str::is_empty) {
            return Err(Error::InvalidConfig("http embedding provider requires base_url".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Stub => Box::new(StubEmbedder::new(self.seed, self.dim)),
            ProviderKind::Http => Box::new(HttpEmbedder::new(self)),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

/// Client for `POST {base_url}/embed`.
pub struct HttpEmbedder {
    url: String,
    dim: usize,
    batch_size: usize,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(cfg: &EmbeddingProviderConfig) -> Self {
        let base = cfg.base_url.clone().unwrap_or_default();
        Self {
            url: format!("{}/embed", base.trim_end_matches('/')),
            dim: cfg.dim,
            batch_size: cfg.batch_size.max(1),
            client: JsonClient::new(
                Duration::from_millis(cfg.timeout_ms),
                cfg.max_retries,
                cfg.max_in_flight,
            ),
        }
    }

    fn call(&self, batch: &[&str]) -> Result<Vec<Embedding>> {
        let resp: EmbedResponse = self
            .client
            .post(&self.url, None, &EmbedRequest { texts: batch })
            .map_err(|e| match e {
                CallError::Transport(m) => Error::ProviderUnavailable(m),
                CallError::Body(m) => Error::ProviderContract(m),
            })?;
        if resp.dim != self.dim || resp.vectors.len() != batch.len() {
            return Err(Error::ProviderContract(format!(
                "server returned {} vectors of dim {}, expected {} of dim {}",
                resp.vectors.len(),
                resp.dim,
                batch.len(),
                self.dim
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::ProviderContract(format!("vector of dim {}", v.len())));
                }
                Embedding::new(v)
                    .and_then(|e| e.normalized())
                    .map_err(|e| Error::ProviderContract(e.to_string()))
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let batches: Vec<&[&str]> = texts.chunks(self.batch_size).collect();
        let out = par::try_map(Execution::Parallel, &batches, |b| self.call(b))?;
        Ok(out.into_iter().flatten().collect())
    }
}
