//! Cosine similarity, the image/prompt score, and the embedding cache.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::image::ImageRef;
use crate::prompt::{render, TagPrompt};
use crate::providers::{estimate_tokens, ImageEmbedder, TextEmbedder, DEFAULT_TEXT_WINDOW};

pub const DEFAULT_CACHE_CAPACITY: usize = 100_000;

/// A similarity on the raw cosine scale; `reported()` is the ×100 figure used in tables.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "ScoreRepr", into = "ScoreRepr")]
pub struct ScoreValue {
    pub raw_cosine: f64,
}

#[derive(Serialize, Deserialize)]
struct ScoreRepr {
    raw_cosine: f64,
    #[serde(default)]
    reported: f64,
}

impl From<ScoreRepr> for ScoreValue {
    fn from(r: ScoreRepr) -> Self {
        Self::new(r.raw_cosine)
    }
}

impl From<ScoreValue> for ScoreRepr {
    fn from(s: ScoreValue) -> Self {
        Self {
            raw_cosine: s.raw_cosine,
            reported: s.reported(),
        }
    }
}

impl ScoreValue {
    pub fn new(raw_cosine: f64) -> Self {
        Self { raw_cosine }
    }

    pub fn reported(&self) -> f64 {
        self.raw_cosine * 100.0
    }
}

impl fmt::Display for ScoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.reported())
    }
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::DimensionMismatch {
            left: u.dimension(),
            right: v.dimension(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub role: String,
    pub hash: String,
}

impl CacheKey {
    pub fn text(role: &str, text: &str) -> Self {
        Self {
            role: role.to_string(),
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        }
    }

    pub fn image(role: &str, image: &ImageRef) -> Self {
        Self {
            role: role.to_string(),
            hash: image.id.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    role: String,
    hash: String,
    vector: EmbeddingVector,
}

/// Content-addressed LRU of embeddings.
pub struct EmbeddingCache {
    entries: Mutex<LruCache<CacheKey, EmbeddingVector>>,
}

impl fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingCache").field("len", &self.len()).finish()
    }
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl EmbeddingCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            entries: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn get(&self, key: &CacheKey) -> Option<EmbeddingVector> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, vector: EmbeddingVector) {
        self.entries.lock().unwrap().put(key, vector);
    }

    /// Returns the cached vector or computes and stores it. The lock is not held while computing.
    pub fn get_or_try_insert<E>(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> std::result::Result<EmbeddingVector, E>,
    ) -> std::result::Result<EmbeddingVector, E> {
        if let Some(v) = self.get(&key) {
            return Ok(v);
        }
        let v = compute()?;
        self.insert(key, v.clone());
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.lock().unwrap().clear();
    }

    /// Loads JSON-lines records (`role`, `hash`, `vector`), most recent last.
    pub fn load(&self, path: &Path) -> Result<usize> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut n = 0;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line)?;
            self.insert(
                CacheKey {
                    role: rec.role,
                    hash: rec.hash,
                },
                rec.vector,
            );
            n += 1;
        }
        Ok(n)
    }

    /// Writes all entries, least recently used first, so `load` restores recency order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let entries = self.entries.lock().unwrap();
        for (key, vector) in entries.iter().rev() {
            let rec = CacheRecord {
                role: key.role.clone(),
                hash: key.hash.clone(),
                vector: vector.clone(),
            };
            writeln!(file, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Anything that scores a prompt against a reference image.
pub trait PromptScorer: Send + Sync {
    fn score(&self, reference: &ImageRef, prompt: &TagPrompt) -> Result<ScoreValue>;
}

impl<F> PromptScorer for F
where
    F: Fn(&ImageRef, &TagPrompt) -> Result<ScoreValue> + Send + Sync,
{
    fn score(&self, reference: &ImageRef, prompt: &TagPrompt) -> Result<ScoreValue> {
        self(reference, prompt)
    }
}

const TEXT_ROLE: &str = "text_embedding";
const IMAGE_ROLE: &str = "image_embedding";

/// Cosine between the image embedding and the rendered prompt's text embedding.
#[derive(Clone)]
pub struct ClipScorer {
    text: Arc<dyn TextEmbedder>,
    image: Arc<dyn ImageEmbedder>,
    cache: Arc<EmbeddingCache>,
    text_window: usize,
}

impl ClipScorer {
    pub fn new(
        text: Arc<dyn TextEmbedder>,
        image: Arc<dyn ImageEmbedder>,
        cache: Arc<EmbeddingCache>,
    ) -> Self {
        Self {
            text,
            image,
            cache,
            text_window: DEFAULT_TEXT_WINDOW,
        }
    }

    pub fn with_text_window(mut self, tokens: usize) -> Self {
        self.text_window = tokens;
        self
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn text_window(&self) -> usize {
        self.text_window
    }

    /// Token estimate of the rendered prompt and whether it overflows the encoder window.
    pub fn token_estimate(&self, prompt: &TagPrompt) -> (usize, bool) {
        let n = estimate_tokens(&render(prompt));
        (n, n > self.text_window)
    }

    pub fn embed_image(&self, image: &ImageRef) -> Result<EmbeddingVector> {
        Ok(self
            .cache
            .get_or_try_insert(CacheKey::image(IMAGE_ROLE, image), || self.image.embed_image(image))?)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self
            .cache
            .get_or_try_insert(CacheKey::text(TEXT_ROLE, text), || self.text.embed_text(text))?)
    }

    pub fn clip_sim(&self, image: &ImageRef, prompt: &TagPrompt) -> Result<ScoreValue> {
        let text = render(prompt);
        if text.trim().is_empty() {
            return Err(Error::Precondition("cannot score an empty prompt".into()));
        }
        let iv = self.embed_image(image)?;
        let tv = self.embed_text(&text)?;
        Ok(ScoreValue::new(cosine(&iv, &tv)?))
    }
}

impl PromptScorer for ClipScorer {
    fn score(&self, reference: &ImageRef, prompt: &TagPrompt) -> Result<ScoreValue> {
        self.clip_sim(reference, prompt)
    }
}
