//! Embedding providers.
//!
//! [`HashEmbedder`] is a seeded bag-of-words hash projection: deterministic,
//! offline, and lexically meaningful. [`PlantedEmbedder`] lets tests dictate
//! the exact cosine similarity between chosen query texts and node texts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ModalPayload;

/// Failure reported by an external model provider (LLM or embedder).
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f32>);

impl Vector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Vector {
        let n = self.norm();
        if n > 0.0 {
            for x in &mut self.0 {
                *x = (*x as f64 / n) as f32;
            }
        }
        self
    }
}

/// Identifies the embedding model an index was built with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub provider: String,
    pub model: String,
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.provider, self.model)
    }
}

/// One item to embed. Images travel as a media reference plus caption; the
/// provider decides how to load pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbedInput {
    Text(String),
    Media {
        media_ref: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
}

impl EmbedInput {
    pub fn from_payload(p: &ModalPayload) -> Self {
        match p {
            ModalPayload::Paragraph(t) | ModalPayload::Table(t) => EmbedInput::Text(t.clone()),
            ModalPayload::Image { media_ref, caption } => {
                EmbedInput::Media { media_ref: media_ref.clone(), caption: caption.clone() }
            }
        }
    }

    /// Text used by the offline embedders.
    fn lexical_text(&self) -> String {
        match self {
            EmbedInput::Text(t) => t.clone(),
            EmbedInput::Media { media_ref, caption } => match caption {
                Some(c) => format!("{c} {media_ref}"),
                None => media_ref.clone(),
            },
        }
    }

    /// Exact key used by [`PlantedEmbedder`].
    fn key(&self) -> &str {
        match self {
            EmbedInput::Text(t) => t,
            EmbedInput::Media { media_ref, .. } => media_ref,
        }
    }
}

/// Deterministic mapping from inputs to fixed-dimension vectors.
pub trait EmbedderProvider: Send + Sync {
    fn fingerprint(&self) -> Fingerprint;
    fn dimension(&self) -> usize;
    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vector>, ProviderError>;

    fn embed_text(&self, text: &str) -> Result<Vector, ProviderError> {
        let mut v = self.embed(&[EmbedInput::Text(text.to_string())])?;
        v.pop().ok_or_else(|| ProviderError::BadResponse("empty embedding batch".into()))
    }

    fn embed_payload(&self, payload: &ModalPayload) -> Result<Vector, ProviderError> {
        let mut v = self.embed(&[EmbedInput::from_payload(payload)])?;
        v.pop().ok_or_else(|| ProviderError::BadResponse("empty embedding batch".into()))
    }
}

/// Function words dropped by [`tokenize`].
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "find", "for", "from", "has", "have",
    "how", "in", "is", "it", "its", "of", "on", "or", "the", "to", "was", "were", "what", "when", "where",
    "which", "who", "whom", "whose", "why", "with",
];

/// Lowercased alphanumeric runs, without [`STOPWORDS`].
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
}

/// Fills `out` with values in [-1, 1) derived from SHA-256 of (seed, token).
fn hash_direction(seed: u64, token: &str, out: &mut [f32]) {
    let mut block = 0u32;
    let mut filled = 0;
    while filled < out.len() {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(block.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        for chunk in digest.chunks_exact(4) {
            if filled == out.len() {
                break;
            }
            let u = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            out[filled] = (u as f64 / u32::MAX as f64 * 2.0 - 1.0) as f32;
            filled += 1;
        }
        block += 1;
    }
}

/// Bag-of-words embedder: each token maps to a seeded pseudo-random
/// direction, the text vector is the normalized sum. Texts sharing tokens
/// have positive cosine similarity.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }

    pub fn embed_str(&self, text: &str) -> Vector {
        let mut acc = vec![0f64; self.dim];
        let mut dir = vec![0f32; self.dim];
        for tok in tokenize(text) {
            hash_direction(self.seed, &tok, &mut dir);
            for (a, d) in acc.iter_mut().zip(&dir) {
                *a += *d as f64;
            }
        }
        Vector(acc.into_iter().map(|x| x as f32).collect()).normalized()
    }
}

impl EmbedderProvider for HashEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint { provider: "hash".into(), model: format!("bow2-d{}-s{}", self.dim, self.seed) }
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vector>, ProviderError> {
        Ok(inputs.iter().map(|i| self.embed_str(&i.lexical_text())).collect())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("unknown planted query `{0}`")]
    UnknownQuery(String),
    #[error("similarity {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("squared similarities planted on `{0}` exceed 1")]
    Overfull(String),
}

/// Embedder with exact, test-specified similarities.
///
/// Registered query texts get orthogonal unit vectors `e_j` in a planted
/// block. A node text planted with similarities `s_j` embeds as
/// `Σ s_j e_j + r·e_res` with `r = sqrt(1 - Σ s_j²)`, so its cosine with
/// query `j` is exactly `s_j`. Everything else embeds through a
/// [`HashEmbedder`] into a disjoint block and therefore has similarity 0
/// with every planted text.
#[derive(Debug, Clone)]
pub struct PlantedEmbedder {
    queries: Vec<String>,
    query_slot: HashMap<String, usize>,
    plants: HashMap<String, BTreeMap<usize, f64>>,
    capacity: usize,
    fallback: HashEmbedder,
}

impl PlantedEmbedder {
    /// `max_queries` fixes the planted block width so the dimension is known
    /// before all queries are registered.
    pub fn new(max_queries: usize, hash_dim: usize, seed: u64) -> Self {
        PlantedEmbedder {
            queries: Vec::with_capacity(max_queries),
            query_slot: HashMap::new(),
            plants: HashMap::new(),
            capacity: max_queries,
            fallback: HashEmbedder::new(hash_dim.max(1), seed),
        }
    }

    pub fn register_query(&mut self, text: &str) -> usize {
        if let Some(&j) = self.query_slot.get(text) {
            return j;
        }
        assert!(self.queries.len() < self.capacity, "planted query capacity exhausted");
        let j = self.queries.len();
        self.queries.push(text.to_string());
        self.query_slot.insert(text.to_string(), j);
        j
    }

    /// Plants `sim = cos(query, node_text)`. The query must be registered.
    pub fn plant(&mut self, query: &str, node_text: &str, sim: f64) -> Result<&mut Self, PlantError> {
        let j = *self.query_slot.get(query).ok_or_else(|| PlantError::UnknownQuery(query.to_string()))?;
        if !(-1.0..=1.0).contains(&sim) {
            return Err(PlantError::OutOfRange(sim));
        }
        let entry = self.plants.entry(node_text.to_string()).or_default();
        entry.insert(j, sim);
        if entry.values().map(|s| s * s).sum::<f64>() > 1.0 + 1e-12 {
            entry.remove(&j);
            return Err(PlantError::Overfull(node_text.to_string()));
        }
        Ok(self)
    }

    fn planted_dim(&self) -> usize {
        self.capacity + 1
    }

    fn embed_one(&self, input: &EmbedInput) -> Vector {
        let width = self.planted_dim();
        let mut v = vec![0f32; width + self.fallback.dimension()];
        let key = input.key();
        if let Some(&j) = self.query_slot.get(key) {
            v[j] = 1.0;
        } else if let Some(sims) = self.plants.get(key) {
            let mut sq = 0.0;
            for (&j, &s) in sims {
                v[j] = s as f32;
                sq += s * s;
            }
            v[width - 1] = (1.0 - sq).max(0.0).sqrt() as f32;
        } else {
            let h = self.fallback.embed_str(&input.lexical_text());
            v[width..].copy_from_slice(&h.0);
        }
        Vector(v)
    }
}

impl EmbedderProvider for PlantedEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint { provider: "planted".into(), model: format!("q{}-d{}", self.capacity, self.dimension()) }
    }

    fn dimension(&self) -> usize {
        self.planted_dim() + self.fallback.dimension()
    }

    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vector>, ProviderError> {
        Ok(inputs.iter().map(|i| self.embed_one(i)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::similarity;

    #[test]
    fn hash_embedder_is_deterministic_and_lexical() {
        let e = HashEmbedder::new(64, 7);
        let a = e.embed_str("The red fox jumps");
        assert_eq!(a, e.embed_str("The red fox jumps"));
        assert_eq!(a.dim(), 64);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let near = similarity(&a, &e.embed_str("red fox")).unwrap();
        let far = similarity(&a, &e.embed_str("quantum chromodynamics lattice")).unwrap();
        assert!(near > far, "{near} vs {far}");
        assert_ne!(a, HashEmbedder::new(64, 8).embed_str("The red fox jumps"));
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let v = HashEmbedder::new(8, 1).embed_str("  ,, ");
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn planted_similarities_are_exact() {
        let mut e = PlantedEmbedder::new(2, 16, 3);
        e.register_query("who directed F");
        e.register_query("where was X born");
        e.plant("who directed F", "node a", 0.9).unwrap();
        e.plant("where was X born", "node a", 0.3).unwrap();
        e.plant("who directed F", "node b", -0.2).unwrap();
        let q1 = e.embed_text("who directed F").unwrap();
        let q2 = e.embed_text("where was X born").unwrap();
        let a = e.embed_text("node a").unwrap();
        let b = e.embed_text("node b").unwrap();
        let other = e.embed_text("unrelated words").unwrap();
        assert!((similarity(&q1, &a).unwrap() - 0.9).abs() < 1e-6);
        assert!((similarity(&q2, &a).unwrap() - 0.3).abs() < 1e-6);
        assert!((similarity(&q1, &b).unwrap() + 0.2).abs() < 1e-6);
        assert_eq!(similarity(&q2, &b).unwrap(), 0.0);
        assert_eq!(similarity(&q1, &other).unwrap(), 0.0);
        assert_eq!(q1.dim(), e.dimension());
    }

    #[test]
    fn planting_rejects_overfull_and_unknown() {
        let mut e = PlantedEmbedder::new(2, 4, 0);
        e.register_query("a");
        e.register_query("b");
        e.plant("a", "n", 0.8).unwrap();
        assert_eq!(e.plant("b", "n", 0.7).unwrap_err(), PlantError::Overfull("n".into()));
        assert_eq!(e.plant("zzz", "n", 0.1).unwrap_err(), PlantError::UnknownQuery("zzz".into()));
        assert_eq!(e.plant("a", "m", 1.5).unwrap_err(), PlantError::OutOfRange(1.5));
    }
}
