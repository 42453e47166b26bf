//! Dense vector embeddings behind a pluggable provider.
//!
//! Two providers ship: a remote HTTP client for hosted embedding models and a
//! deterministic local hashed bag-of-words embedder that backs every offline
//! test. Both produce [`EmbeddingVector`]s of a fixed per-provider dimension.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::eval_tokenize;

/// Fixed seed for the hashed bag-of-words bucketing; part of the local
/// embedder's identity, so changing it invalidates existing indexes.
pub const HASH_EMBED_SEED: u64 = 0x7265_7472_6965_7665;

/// A dense embedding. Values are stored as `f32` (the persisted vector width)
/// so save/load round-trips are lossless; similarity math accumulates in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cosine similarity `dot(a,b) / (|a||b|)`.
///
/// The element-wise products and the index-order summation are symmetric in
/// the arguments, so `cosine_similarity(a, b) == cosine_similarity(b, a)`
/// bit-for-bit.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine similarity undefined for zero-norm vector".into(),
        ));
    }
    Ok((dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderProvider {
    RemoteApi,
    #[default]
    DeterministicLocal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub provider: EmbedderProvider,
    pub model_id: String,
    pub dimension: usize,
    pub batch_size: usize,
    /// Remote only: endpoint URL for the embeddings API.
    pub endpoint: Option<String>,
    /// Remote only: name of the environment variable holding the credential.
    pub credential_env_var: Option<String>,
    /// Remote only: cap on concurrently in-flight requests.
    pub max_in_flight: usize,
    /// Remote only: base backoff for transient-failure retries, in ms.
    pub retry_base_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            provider: EmbedderProvider::DeterministicLocal,
            model_id: "local-hash-v1".into(),
            dimension: 64,
            batch_size: 32,
            endpoint: None,
            credential_env_var: None,
            max_in_flight: 4,
            retry_base_ms: 1000,
        }
    }
}

/// Embedding provider. Immutable after construction and callable from many
/// threads; index and query texts must go through the same provider.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    fn dimension(&self) -> usize;

    /// One vector per input text, order preserved.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(std::slice::from_ref(&text.to_owned()))?;
        out.pop()
            .ok_or_else(|| Error::Internal("embed_batch returned no vector".into()))
    }
}

pub fn build_embedder(config: &EmbedderConfig) -> Result<Box<dyn Embedder>> {
    match config.provider {
        EmbedderProvider::DeterministicLocal => Ok(Box::new(HashEmbedder::new(config)?)),
        EmbedderProvider::RemoteApi => Ok(Box::new(RemoteEmbedder::new(config)?)),
    }
}

/// FNV-1a 64-bit, seeded. Hand-rolled so bucket assignment is stable across
/// platforms and releases (std hashers make no such promise).
fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET ^ seed;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Deterministic local embedder: hashed bag of words over the shared
/// lowercase-alphanumeric tokenization, L2-normalized. Pure function of the
/// text; duplicate-free of any model dependency, so tests can freeze vectors.
///
/// Empty (or tokenless) text maps to the first basis vector so cosine
/// similarity is always defined downstream.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    model_id: String,
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(config: &EmbedderConfig) -> Result<Self> {
        if config.dimension < 2 {
            return Err(Error::Config(format!(
                "embedder dimension must be >= 2, got {}",
                config.dimension
            )));
        }
        Ok(HashEmbedder {
            model_id: config.model_id.clone(),
            dimension: config.dimension,
        })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(HASH_EMBED_SEED, token.as_bytes()) % self.dimension as u64) as usize
    }

    fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0f64; self.dimension];
        let tokens = eval_tokenize(text);
        if tokens.is_empty() {
            counts[0] = 1.0;
        } else {
            for token in &tokens {
                counts[self.bucket(token)] += 1.0;
            }
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = counts.iter().map(|&v| (v / norm) as f32).collect();
        EmbeddingVector {
            values,
            model_id: self.model_id.clone(),
        }
    }
}

impl Embedder for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("embed_batch: empty input".into()));
        }
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    data: Vec<RemoteDatum>,
}

#[derive(Deserialize)]
struct RemoteDatum {
    embedding: Vec<f32>,
}

/// HTTP embedding client: `POST {"input": [...], "model": ...}` expecting
/// `{"data": [{"embedding": [...]}, ...]}`. Transient failures (transport
/// errors, 429/5xx) retry up to 3 times with exponential backoff.
pub struct RemoteEmbedder {
    config: EmbedderConfig,
    endpoint: String,
    credential: String,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: &EmbedderConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("remote embedder requires `endpoint`".into()))?;
        let env_var = config
            .credential_env_var
            .clone()
            .ok_or_else(|| Error::Config("remote embedder requires `credential_env_var`".into()))?;
        let credential = std::env::var(&env_var).map_err(|_| {
            Error::Config(format!("credential environment variable `{env_var}` not set"))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Http {
                url: endpoint.clone(),
                status: None,
                reason: e.to_string(),
                retryable: false,
            })?;
        Ok(RemoteEmbedder {
            config: config.clone(),
            endpoint,
            credential,
            client,
        })
    }

    fn post_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(e @ Error::Http {
                    retryable: true, ..
                }) if attempt < 3 => {
                    let backoff = self.config.retry_base_ms << attempt;
                    log::warn!("embedding request failed ({e}), retrying in {backoff}ms");
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let http_err = |status: Option<u16>, reason: String, retryable: bool| Error::Http {
            url: self.endpoint.clone(),
            status,
            reason,
            retryable,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.credential)
            .json(&RemoteRequest {
                input: texts,
                model: &self.config.model_id,
            })
            .send()
            .map_err(|e| http_err(None, e.to_string(), true))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(http_err(
                Some(status.as_u16()),
                "non-success status".into(),
                retryable,
            ));
        }
        let body: RemoteResponse = response
            .json()
            .map_err(|e| http_err(Some(status.as_u16()), format!("bad body: {e}"), false))?;
        if body.data.len() != texts.len() {
            return Err(http_err(
                Some(status.as_u16()),
                format!("expected {} embeddings, got {}", texts.len(), body.data.len()),
                false,
            ));
        }
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dimension {
                    return Err(Error::DimensionMismatch {
                        left: self.config.dimension,
                        right: d.embedding.len(),
                    });
                }
                if d.embedding.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Internal("non-finite embedding from provider".into()));
                }
                Ok(EmbeddingVector {
                    values: d.embedding,
                    model_id: self.config.model_id.clone(),
                })
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("embed_batch: empty input".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.post_batch(batch)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local(d: usize) -> HashEmbedder {
        HashEmbedder::new(&EmbedderConfig {
            dimension: d,
            ..EmbedderConfig::default()
        })
        .unwrap()
    }

    fn vecf(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector {
            values: values.to_vec(),
            model_id: "t".into(),
        }
    }

    #[test]
    fn same_text_twice_is_bitwise_identical() {
        let e = local(8);
        let a = e.embed_one("the quick brown fox").unwrap();
        let b = e.embed_one("the quick brown fox").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_token_normalizes_to_same_direction() {
        let e = local(8);
        let a = e.embed_one("a a").unwrap();
        let b = e.embed_one("a").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mass_lands_in_hashed_buckets() {
        // Independent recomputation of the seeded FNV-1a bucket assignment.
        fn oracle_bucket(token: &str, d: u64) -> usize {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ HASH_EMBED_SEED;
            for &b in token.as_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            (h % d) as usize
        }
        let e = local(8);
        let v = e.embed_one("alpha beta").unwrap();
        let expected: std::collections::BTreeSet<usize> =
            [oracle_bucket("alpha", 8), oracle_bucket("beta", 8)]
                .into_iter()
                .collect();
        let nonzero: std::collections::BTreeSet<usize> = v
            .values
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, expected);
    }

    #[test]
    fn empty_text_maps_to_first_basis_vector() {
        let e = local(4);
        let v = e.embed_one("").unwrap();
        assert_eq!(v.values, vec![1.0, 0.0, 0.0, 0.0]);
        // Punctuation-only text has no tokens either.
        assert_eq!(e.embed_one("!!!").unwrap().values, v.values);
    }

    #[test]
    fn cosine_identical() {
        let v = vecf(&[1.0, 0.0, 0.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_and_antiparallel() {
        let a = vecf(&[1.0, 0.0]);
        let b = vecf(&[0.0, 1.0]);
        let c = vecf(&[-1.0, 0.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&a, &c).unwrap(), -1.0);
    }

    #[test]
    fn cosine_rejects_mismatch_and_zero_norm() {
        let a = vecf(&[1.0, 0.0]);
        let b = vecf(&[1.0, 0.0, 0.0]);
        let z = vecf(&[0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(cosine_similarity(&a, &z).is_err());
    }

    #[test]
    fn batch_preserves_order_and_length() {
        let e = local(16);
        let texts: Vec<String> = (0..5).map(|i| format!("text number {i}")).collect();
        let vectors = e.embed_batch(&texts).unwrap();
        assert_eq!(vectors.len(), texts.len());
        for (text, v) in texts.iter().zip(&vectors) {
            assert_eq!(v, &e.embed_one(text).unwrap());
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(local(8).embed_batch(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn local_embeddings_unit_norm_and_order_invariant(
            words in proptest::collection::vec("[a-z]{1,6}", 1..12)
        ) {
            let e = local(32);
            let forward = e.embed_one(&words.join(" ")).unwrap();
            let mut reversed = words.clone();
            reversed.reverse();
            let backward = e.embed_one(&reversed.join(" ")).unwrap();
            proptest::prop_assert_eq!(&forward, &backward);
            // Values are stored at f32 (the persisted width), so unit norm
            // holds to f32 rounding, not f64.
            proptest::prop_assert!((forward.norm() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn cosine_self_is_one_and_symmetric(
            a in proptest::collection::vec(-100.0f32..100.0, 2..16),
            b in proptest::collection::vec(-100.0f32..100.0, 2..16),
        ) {
            let n = a.len().min(b.len());
            let va = vecf(&a[..n]);
            let vb = vecf(&b[..n]);
            if va.norm() > 0.0 {
                proptest::prop_assert!((cosine_similarity(&va, &va).unwrap() - 1.0).abs() < 1e-9);
            }
            if va.norm() > 0.0 && vb.norm() > 0.0 {
                let ab = cosine_similarity(&va, &vb).unwrap();
                let ba = cosine_similarity(&vb, &va).unwrap();
                proptest::prop_assert_eq!(ab, ba);
                proptest::prop_assert!((-1.0..=1.0).contains(&ab));
            }
        }
    }
}
