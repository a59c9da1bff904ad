//! Embedding providers and top-k similarity search over the bank.
//!
//! Providers must be deterministic: the same text always embeds to the same
//! vector. The shipped test provider hashes character n-grams into a fixed
//! number of signed buckets; the HTTP provider delegates to a real embedding
//! server; the caching wrapper makes any provider repeatable and persists its
//! cache keyed by provider id and text digest.

use crate::memory::{ExperienceRecord, MemoryBank, MemoryItem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cosine similarity of a zero vector")]
    ZeroVector,

    #[error("embedding backend failure: {0}")]
    Backend(String),
}

/// Deterministic text-to-vector contract. Implementations must be shareable
/// across concurrent rollouts and return unit-magnitude vectors of a fixed
/// dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
    /// Stable identifier used for cache keying.
    fn provider_id(&self) -> String;
}

/// Cosine similarity `dot(a,b) / (|a||b|)`. Symmetric, in [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    // Guards against zero and NaN norms in one comparison.
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// One search hit: a bank record and its cosine score against the query.
#[derive(Debug, Clone)]
pub struct RetrievalHit<'a> {
    pub record: &'a ExperienceRecord,
    pub score: f64,
}

/// Exact top-k by cosine similarity over a linear scan of the bank. Hits are
/// ordered by score descending with ties broken by ascending `created_seq`
/// (older first). An empty bank yields an empty list.
pub fn retrieve_top_k<'a>(
    bank: &'a MemoryBank,
    query_vec: &[f64],
    k: usize,
) -> Result<Vec<RetrievalHit<'a>>, RetrievalError> {
    // Bounded insertion into a sorted buffer; the property tests compare this
    // against an independent full-sort reference.
    let mut top: Vec<RetrievalHit<'a>> = Vec::with_capacity(k.saturating_add(1));
    for record in bank.records() {
        let score = cosine_similarity(query_vec, record.embedding())?;
        let candidate = RetrievalHit { record, score };
        let pos = top.partition_point(|held| {
            held.score > candidate.score
                || (held.score == candidate.score
                    && held.record.created_seq() < candidate.record.created_seq())
        });
        if pos < k {
            top.insert(pos, candidate);
            top.truncate(k);
        }
    }
    Ok(top)
}

/// Concatenate the items of each hit in hit order, preserving intra-record
/// order. No deduplication.
pub fn gather_items(hits: &[RetrievalHit<'_>]) -> Vec<MemoryItem> {
    hits.iter().flat_map(|hit| hit.record.items().iter().cloned()).collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = FNV_OFFSET ^ seed;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Test/offline embedding provider: seeded signed hashing of character
/// trigrams into a fixed bucket count, L2-normalized. Deterministic and
/// dependency-free; similar texts land on similar vectors coarsely enough
/// for desk-scale retrieval.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

/// Default bucket count for [`HashEmbedder`].
pub const HASH_EMBEDDER_DIM: usize = 64;

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(HASH_EMBEDDER_DIM, 0)
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedder dimension must be positive");
        HashEmbedder { dimension, seed }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let normalized: String = {
            let lowered = text.to_lowercase();
            let collapsed: Vec<&str> = lowered.split_whitespace().collect();
            format!("^{}$", collapsed.join(" "))
        };
        let chars: Vec<char> = normalized.chars().collect();
        let mut buckets = vec![0.0f64; self.dimension];
        let mut add = |gram: &str| {
            let h = fnv1a64(gram.as_bytes(), self.seed);
            let idx = ((h >> 1) % self.dimension as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            buckets[idx] += sign;
        };
        if chars.len() < 3 {
            add(&normalized);
        } else {
            for window in chars.windows(3) {
                add(&window.iter().collect::<String>());
            }
        }
        let norm = buckets.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut buckets {
                *x /= norm;
            }
        } else {
            // Grams cancelled out exactly; fall back to a fixed unit vector.
            buckets[(self.seed % self.dimension as u64) as usize] = 1.0;
        }
        Ok(buckets)
    }

    fn provider_id(&self) -> String {
        format!("hash-ngram-v1-d{}-s{}", self.dimension, self.seed)
    }
}

fn renormalize(mut v: Vec<f64>) -> Result<Vec<f64>, RetrievalError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(RetrievalError::ZeroVector);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

#[derive(Serialize, Deserialize)]
struct CacheDoc {
    version: u32,
    provider: String,
    entries: BTreeMap<String, Vec<f64>>,
}

/// Caching wrapper: memoizes embeddings in memory and, when given a path,
/// persists them keyed by `(provider id, sha256 of text)`. Normalizes the
/// inner provider's output, so any backend satisfies the unit-magnitude
/// contract behind this wrapper. Cache writes are serialized.
pub struct CachingEmbedder<P> {
    inner: P,
    cache: Mutex<BTreeMap<String, Vec<f64>>>,
    cache_path: Option<PathBuf>,
}

impl<P: EmbeddingProvider> CachingEmbedder<P> {
    pub fn new(inner: P) -> Self {
        CachingEmbedder { inner, cache: Mutex::new(BTreeMap::new()), cache_path: None }
    }

    /// Attach a persistent cache file; existing entries for the same provider
    /// id are loaded eagerly.
    pub fn with_cache_file(inner: P, path: PathBuf) -> Self {
        let mut cache = BTreeMap::new();
        if let Ok(text) = std::fs::read_to_string(&path) {
            match serde_json::from_str::<CacheDoc>(&text) {
                Ok(doc) if doc.provider == inner.provider_id() => cache = doc.entries,
                Ok(_) => log::warn!("embedding cache {} belongs to another provider", path.display()),
                Err(e) => log::warn!("ignoring unreadable embedding cache {}: {e}", path.display()),
            }
        }
        CachingEmbedder { inner, cache: Mutex::new(cache), cache_path: Some(path) }
    }

    fn persist(&self, entries: &BTreeMap<String, Vec<f64>>) {
        let Some(path) = &self.cache_path else { return };
        let doc = CacheDoc { version: 1, provider: self.inner.provider_id(), entries: entries.clone() };
        match serde_json::to_string(&doc) {
            Ok(json) => {
                if let Err(e) = std::fs::write(path, json) {
                    log::warn!("cannot persist embedding cache {}: {e}", path.display());
                }
            }
            Err(e) => log::warn!("cannot serialize embedding cache: {e}"),
        }
    }
}

fn text_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachingEmbedder<P> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let key = text_digest(text);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let vector = renormalize(self.inner.embed(text)?)?;
        let mut cache = self.cache.lock().unwrap();
        cache.insert(key, vector.clone());
        self.persist(&cache);
        Ok(vector)
    }

    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }
}

/// HTTP embedding backend: POST `{model, text}` to the endpoint, expect
/// `{"vector": [...]}`. Auth token comes from the environment variable named
/// in the config.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub auth_env: Option<String>,
    pub dimension: usize,
    pub timeout_secs: u64,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        HttpEmbedderConfig {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            dimension: 768,
            timeout_secs: 60,
        }
    }
}

#[derive(Serialize)]
struct EmbedWireRequest<'a> {
    model: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedWireResponse {
    vector: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .expect("client builder with static options");
        let token = config.auth_env.as_ref().and_then(|name| std::env::var(name).ok());
        HttpEmbedder { config, client, token }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let body = EmbedWireRequest { model: &self.config.model, text };
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| RetrievalError::Backend(e.to_string()))?;
        if !response.status().is_success() {
            return Err(RetrievalError::Backend(format!("status {}", response.status())));
        }
        let parsed: EmbedWireResponse =
            response.json().map_err(|e| RetrievalError::Backend(e.to_string()))?;
        if parsed.vector.len() != self.config.dimension {
            return Err(RetrievalError::DimensionMismatch {
                left: parsed.vector.len(),
                right: self.config.dimension,
            });
        }
        Ok(parsed.vector)
    }

    fn provider_id(&self) -> String {
        format!("http-{}", self.config.model)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dimension(&self) -> usize {
        (*self).dimension()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        (*self).embed(text)
    }
    fn provider_id(&self) -> String {
        (*self).provider_id()
    }
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn dimension(&self) -> usize {
        self.as_ref().dimension()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        self.as_ref().embed(text)
    }
    fn provider_id(&self) -> String {
        self.as_ref().provider_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Termination, Trajectory};
    use crate::judgment::{Verdict, VerdictLabel};
    use crate::memory::NewExperience;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        renormalize(v).unwrap()
    }

    fn bank_with(embeddings: Vec<Vec<f64>>) -> MemoryBank {
        let mut bank = MemoryBank::new();
        for (i, embedding) in embeddings.into_iter().enumerate() {
            bank.consolidate(NewExperience {
                task_id: format!("t{i}"),
                query: format!("q{i}"),
                trajectory: Trajectory {
                    steps: vec![],
                    final_answer: None,
                    termination: Termination::Stopped,
                },
                verdict: Verdict { label: VerdictLabel::Success, raw: "Success".into() },
                items: vec![MemoryItem::new(format!("i{i}"), "d.", "c.").unwrap()],
                embedding,
            })
            .unwrap();
        }
        bank
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let v = unit(vec![0.3, -0.4, 0.5]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-9);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(RetrievalError::DimensionMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(RetrievalError::ZeroVector)
        ));
    }

    #[test]
    fn cosine_matches_scalar_reference_on_random_pairs() {
        // Independent scalar-loop reference with a different accumulation
        // order.
        fn reference(a: &[f64], b: &[f64]) -> f64 {
            let dot: f64 = (0..a.len()).map(|i| a[i] * b[i]).sum();
            let na: f64 = (0..a.len()).map(|i| a[i] * a[i]).sum::<f64>().sqrt();
            let nb: f64 = (0..b.len()).map(|i| b[i] * b[i]).sum::<f64>().sqrt();
            dot / (na * nb)
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let dim = rng.gen_range(1..32);
            let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) + 0.01).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) + 0.01).collect();
            let got = cosine_similarity(&a, &b).unwrap();
            assert!((got - reference(&a, &b)).abs() < 1e-12);
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&got));
        }
    }

    #[test]
    fn retrieve_empty_bank_is_empty() {
        let bank = MemoryBank::new();
        assert!(retrieve_top_k(&bank, &[1.0, 0.0], 1).unwrap().is_empty());
    }

    #[test]
    fn retrieve_exact_match_scores_one() {
        let bank = bank_with(vec![
            unit(vec![1.0, 1.0, 0.0]),
            unit(vec![0.0, 1.0, 0.0]),
            unit(vec![1.0, 0.0, 0.0]),
        ]);
        let query = vec![0.0, 1.0, 0.0];
        let hits = retrieve_top_k(&bank, &query, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.task_id(), "t1");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn retrieve_breaks_ties_by_created_seq() {
        let same = unit(vec![1.0, 1.0]);
        let bank = bank_with(vec![same.clone(), same.clone(), same]);
        let hits = retrieve_top_k(&bank, &[1.0, 1.0], 2).unwrap();
        let seqs: Vec<u64> = hits.iter().map(|h| h.record.created_seq()).collect();
        assert_eq!(seqs, vec![0, 1]);
    }

    #[test]
    fn retrieve_clamps_k_to_bank_size_and_checks_dimensions() {
        let bank = bank_with(vec![unit(vec![1.0, 2.0])]);
        assert_eq!(retrieve_top_k(&bank, &[1.0, 0.0], 5).unwrap().len(), 1);
        assert!(matches!(
            retrieve_top_k(&bank, &[1.0, 0.0, 0.0], 1),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gather_preserves_hit_and_item_order() {
        let bank = bank_with(vec![unit(vec![1.0, 0.1]), unit(vec![0.1, 1.0])]);
        let hits = retrieve_top_k(&bank, &[1.0, 0.0], 2).unwrap();
        let items = gather_items(&hits);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].title(), "i0");
        assert_eq!(items[1].title(), "i1");
        assert!(gather_items(&[]).is_empty());
    }

    #[test]
    fn hash_embedder_is_deterministic_and_normalized() {
        let e = HashEmbedder::default();
        let a = e.embed("Find the storage code for Quantum Kettle QK-0098").unwrap();
        let b = e.embed("Find the storage code for Quantum Kettle QK-0098").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), HASH_EMBEDDER_DIM);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);

        // Different seeds give different spaces.
        let other = HashEmbedder::new(HASH_EMBEDDER_DIM, 99);
        assert_ne!(other.embed("abc").unwrap(), e.embed("abc").unwrap());
    }

    #[test]
    fn hash_embedder_ranks_similar_text_higher() {
        let e = HashEmbedder::default();
        let anchor = e.embed("Storage code for Zephyr Couch ZC-5521?").unwrap();
        let close = e.embed("Special stock count for Zephyr Couch ZC-5521?").unwrap();
        let far = e.embed("Weather in Lisbon tomorrow morning").unwrap();
        let close_sim = cosine_similarity(&anchor, &close).unwrap();
        let far_sim = cosine_similarity(&anchor, &far).unwrap();
        assert!(close_sim > far_sim, "close {close_sim} vs far {far_sim}");
    }

    #[test]
    fn hash_embedder_handles_degenerate_text() {
        let e = HashEmbedder::default();
        for text in ["", "a", "  ", "é"] {
            let v = e.embed(text).unwrap();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "text {text:?}");
        }
    }

    #[test]
    fn caching_embedder_hits_cache_and_persists() {
        struct Counting(HashEmbedder, std::sync::atomic::AtomicUsize);
        impl EmbeddingProvider for Counting {
            fn dimension(&self) -> usize {
                self.0.dimension()
            }
            fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
                self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                self.0.embed(text)
            }
            fn provider_id(&self) -> String {
                self.0.provider_id()
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let counting =
            Counting(HashEmbedder::default(), std::sync::atomic::AtomicUsize::new(0));
        let cached = CachingEmbedder::with_cache_file(counting, path.clone());
        let a = cached.embed("hello world").unwrap();
        let b = cached.embed("hello world").unwrap();
        assert_eq!(a, b);
        assert_eq!(cached.inner.1.load(std::sync::atomic::Ordering::SeqCst), 1);

        // A fresh wrapper over the same file starts warm.
        let counting2 =
            Counting(HashEmbedder::default(), std::sync::atomic::AtomicUsize::new(0));
        let cached2 = CachingEmbedder::with_cache_file(counting2, path);
        assert_eq!(cached2.embed("hello world").unwrap(), a);
        assert_eq!(cached2.inner.1.load(std::sync::atomic::Ordering::SeqCst), 0);
    }
}
