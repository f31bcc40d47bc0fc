//! Embedding providers and the vector operations used by matching and clustering.
//!
//! Every provider returns L2-normalized vectors, so cosine similarity between
//! provider outputs is a plain dot product. Two providers ship here:
//!
//! * [`HashingEmbedder`]: hashed character 3-gram bag, deterministic and offline.
//! * [`RemoteEmbedder`]: HTTP client for an embedding server speaking
//!   `{"model": .., "texts": [..]}` → `{"vectors": [[..], ..]}`.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_DIM: usize = 384;

/// Environment variable consulted when no remote endpoint is given.
pub const ENDPOINT_ENV: &str = "ASPECT_EMBED_ENDPOINT";

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector has a non-finite component")]
    NonFinite,
    #[error("vector must have at least one component")]
    EmptyVector,
    #[error("cannot embed an empty text (input #{index})")]
    EmptyText { index: usize },
    #[error("cannot embed an empty batch")]
    EmptyBatch,
    #[error("nothing to pool")]
    EmptyPool,
    #[error("embedding transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("embedding server returned {returned} vectors for {requested} texts")]
    CountMismatch { requested: usize, returned: usize },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport { retryable: true, .. })
    }
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    /// Builds a vector and rescales it to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        Self::new(values)?.into_unit()
    }

    pub fn into_unit(mut self) -> Result<Self, EmbedError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        for v in &mut self.values {
            *v /= n;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.dot_unchecked(self).sqrt()
    }

    /// Index-ascending accumulation; symmetric in its operands bit for bit.
    fn dot_unchecked(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        acc
    }

    pub fn dot(&self, other: &Self) -> Result<f64, EmbedError> {
        check_dims(self, other)?;
        Ok(self.dot_unchecked(other))
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn check_dims(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<(), EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch { expected: u.dim(), actual: v.dim() });
    }
    Ok(())
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    check_dims(u, v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let cos = u.dot_unchecked(v) / (nu * nv);
    Ok(cos.clamp(-1.0, 1.0))
}

/// Concatenates `a` and `b` and rescales the result to unit norm.
pub fn concat_normalize(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
    let mut values = Vec::with_capacity(a.dim() + b.dim());
    values.extend_from_slice(&a.values);
    values.extend_from_slice(&b.values);
    EmbeddingVector::normalized(values)
}

/// Component-wise mean of same-dimension vectors, then L2-normalized.
pub fn mean_pool<'a, I>(vectors: I) -> Result<EmbeddingVector, EmbedError>
where
    I: IntoIterator<Item = &'a EmbeddingVector>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(EmbedError::EmptyPool)?;
    let mut sum = first.values.clone();
    let mut count = 1usize;
    for v in iter {
        check_dims(first, v)?;
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
        count += 1;
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    EmbeddingVector::normalized(sum)
}

/// Anything that can turn texts into unit vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One unit vector per input, in input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

fn check_texts(texts: &[&str]) -> Result<(), EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText { index });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hashing embedder
// ---------------------------------------------------------------------------

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_from(FNV_OFFSET, bytes)
}

fn fnv1a64_from(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Character 3-gram feature hashing over NFC-normalized lowercase text.
///
/// Each 3-gram is hashed with 64-bit FNV-1a (seed bytes first, little endian);
/// the bucket is `hash % dim` and bit 63 picks the sign. Texts shorter than
/// three characters count as a single gram. If signed counts cancel to zero,
/// the unsigned counts are used instead.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        Ok(HashingEmbedder { dim, seed })
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText { index: 0 });
        }
        let norm: Vec<char> = text.nfc().flat_map(char::to_lowercase).collect();
        let base = fnv1a64_from(FNV_OFFSET, &self.seed.to_le_bytes());
        let mut signed = vec![0.0f64; self.dim];
        let mut unsigned = vec![0.0f64; self.dim];
        let mut buf = [0u8; 12];
        let mut add = |gram: &[char]| {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a64_from(base, &buf[..len]);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            signed[bucket] += sign;
            unsigned[bucket] += 1.0;
        };
        if norm.len() < 3 {
            add(&norm);
        } else {
            for w in norm.windows(3) {
                add(w);
            }
        }
        if signed.iter().all(|&v| v == 0.0) {
            EmbeddingVector::normalized(unsigned)
        } else {
            EmbeddingVector::normalized(signed)
        }
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

// ---------------------------------------------------------------------------
// Remote embedder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    DeterministicLocal,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub batch_size: usize,
    /// Hash seed for the deterministic provider.
    pub seed: u64,
    /// Extra attempts on retryable transport failures.
    pub retries: u32,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: ProviderKind::DeterministicLocal,
            dim: DEFAULT_DIM,
            endpoint: None,
            model_name: None,
            timeout: Duration::from_secs(30),
            batch_size: 64,
            seed: 0,
            retries: 2,
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        if self.kind == ProviderKind::Remote {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(EmbedError::Config("remote provider requires an endpoint".into()));
            }
            if self.model_name.as_deref().is_none_or(str::is_empty) {
                return Err(EmbedError::Config("remote provider requires a model name".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::DeterministicLocal => Box::new(HashingEmbedder::new(self.dim, self.seed)?),
            ProviderKind::Remote => Box::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteEmbedder {
    config: EmbeddingProviderConfig,
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: config.endpoint.clone().unwrap_or_default(),
            model: config.model_name.clone().unwrap_or_default(),
            config,
            client,
        })
    }

    fn post_once(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { model: &self.model, texts })
            .send()
            .map_err(|e| EmbedError::Transport { message: e.to_string(), retryable: true })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EmbedError::Transport {
                message: format!("HTTP {status}: {body}"),
                retryable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| EmbedError::Transport { message: e.to_string(), retryable: false })?;
        if parsed.vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch { requested: texts.len(), returned: parsed.vectors.len() });
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.config.dim {
                    return Err(EmbedError::DimensionMismatch { expected: self.config.dim, actual: v.len() });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }

    fn post_with_retries(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut attempt = 0;
        loop {
            match self.post_once(texts) {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    log::warn!("embedding request failed (attempt {attempt}): {e}");
                    std::thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size) {
            out.extend(self.post_with_retries(chunk)?);
        }
        Ok(out)
    }
}

/// Memoizes another provider's outputs by exact text.
pub struct CachedProvider<P> {
    inner: P,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        CachedProvider { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().expect("embedding cache poisoned").len()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_texts(texts)?;
        let missing: Vec<&str> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            texts.iter().copied().filter(|t| !cache.contains_key(*t) && seen.insert(*t)).collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (t, v) in missing.into_iter().zip(fresh) {
                cache.insert(t.to_string(), v);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}
