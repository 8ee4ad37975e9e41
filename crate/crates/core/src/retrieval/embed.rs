//! Embedding providers, the offline hash embedder and the embedding cache.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use sha2::{Digest, Sha256};

use super::RetrievalError;

pub type Embedding = Vec<f32>;

/// A deterministic text embedder.
pub trait EmbeddingProvider: Send + Sync {
    fn identity(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError>;

    fn embed(&self, text: &str) -> Result<Embedding, RetrievalError> {
        self.embed_batch(&[text])?
            .pop()
            .ok_or_else(|| RetrievalError::Backend("provider returned no vector".into()))
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for &T {
    fn identity(&self) -> &str {
        (**self).identity()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError> {
        (**self).embed_batch(texts)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<T> {
    fn identity(&self) -> &str {
        (**self).identity()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError> {
        (**self).embed_batch(texts)
    }
}

/// Checks shape and finiteness of provider output.
pub fn check_vectors(
    vectors: &[Embedding],
    expected_rows: usize,
    dimension: usize,
) -> Result<(), RetrievalError> {
    if vectors.len() != expected_rows {
        return Err(RetrievalError::Backend(format!(
            "expected {expected_rows} vectors, got {}",
            vectors.len()
        )));
    }
    for v in vectors {
        if v.len() != dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: dimension,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
    }
    Ok(())
}

/// Cosine similarity accumulated in `f64`. A zero vector has similarity 0
/// with everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Feature-hashing embedder over words, word bigrams and character
/// trigrams. Deterministic and dependency-free; used offline and in tests.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    identity: String,
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashEmbedder {
            identity: format!("hash-embedder-v1/{dimension}"),
            dimension,
        }
    }

    fn add(&self, v: &mut [f32], feature: &str, weight: f32) {
        let h = fnv1a(feature.as_bytes());
        let idx = (h % self.dimension as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        let mut v = vec![0.0f32; self.dimension];
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase())
            .collect();
        for w in &words {
            self.add(&mut v, &format!("w:{w}"), 1.0);
            let padded: Vec<char> = format!("#{w}#").chars().collect();
            for tri in padded.windows(3) {
                self.add(&mut v, &format!("c:{}", tri.iter().collect::<String>()), 0.5);
            }
        }
        for pair in words.windows(2) {
            self.add(&mut v, &format!("b:{} {}", pair[0], pair[1]), 0.7);
        }
        let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x = (*x as f64 / norm) as f32;
            }
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Content-addressed embedding cache: an in-memory map in front of an
/// optional directory of `<sha256>.vec` files.
///
/// A file holds a little-endian `u32` dimension followed by that many
/// little-endian `f32` values.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    memory: RwLock<HashMap<String, Embedding>>,
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn cache_key(identity: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(identity.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

pub fn encode_vector(v: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * v.len());
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vector(bytes: &[u8]) -> Option<Embedding> {
    let dim = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let body = &bytes[4..];
    if body.len() != dim * 4 {
        return None;
    }
    let v: Embedding = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    v.iter().all(|x| x.is_finite()).then_some(v)
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self, RetrievalError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| RetrievalError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(EmbeddingCache {
            dir: Some(dir),
            ..Default::default()
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn entry_path(&self, identity: &str, text: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.vec", cache_key(identity, text))))
    }

    fn lookup(&self, key: &str, path: Option<&PathBuf>, dimension: usize) -> Option<Embedding> {
        if let Some(v) = self.memory.read().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let bytes = fs::read(path?).ok()?;
        match decode_vector(&bytes) {
            Some(v) if v.len() == dimension => {
                self.memory.write().expect("cache lock").insert(key.to_string(), v.clone());
                Some(v)
            }
            _ => {
                log::warn!("discarding corrupt cache entry {key}");
                None
            }
        }
    }

    fn store(&self, key: String, path: Option<PathBuf>, v: &Embedding) -> Result<(), RetrievalError> {
        if let Some(p) = path {
            let tmp = p.with_extension("vec.tmp");
            fs::write(&tmp, encode_vector(v))
                .and_then(|_| fs::rename(&tmp, &p))
                .map_err(|e| RetrievalError::Cache(format!("{}: {e}", p.display())))?;
        }
        self.memory.write().expect("cache lock").insert(key, v.clone());
        Ok(())
    }

    /// Embeds a batch, calling the provider only for texts not yet cached.
    pub fn embed_many<P: EmbeddingProvider + ?Sized>(
        &self,
        texts: &[&str],
        provider: &P,
    ) -> Result<Vec<Embedding>, RetrievalError> {
        let identity = provider.identity();
        let dim = provider.dimension();
        let mut out: Vec<Option<Embedding>> = Vec::with_capacity(texts.len());
        let mut missing: Vec<usize> = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let key = cache_key(identity, t);
            let path = self.entry_path(identity, t);
            match self.lookup(&key, path.as_ref(), dim) {
                Some(v) => {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                    out.push(Some(v));
                }
                None => {
                    self.misses.fetch_add(1, Ordering::SeqCst);
                    missing.push(i);
                    out.push(None);
                }
            }
        }
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let vectors = provider.embed_batch(&batch)?;
            check_vectors(&vectors, batch.len(), dim)?;
            for (&i, v) in missing.iter().zip(vectors) {
                self.store(cache_key(identity, texts[i]), self.entry_path(identity, texts[i]), &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

/// Single-text cached embedding.
pub fn embed_cached<P: EmbeddingProvider + ?Sized>(
    text: &str,
    provider: &P,
    cache: &EmbeddingCache,
) -> Result<Embedding, RetrievalError> {
    Ok(cache.embed_many(&[text], provider)?.remove(0))
}
