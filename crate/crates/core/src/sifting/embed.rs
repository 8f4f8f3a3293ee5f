//! Stage B: embedding of query plus profile, cosine scoring and Top-k ranking.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::model::CapabilityProfile;

/// Norms below this are treated as zero by [`cosine`].
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedder backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding must be non-empty with finite components")]
    InvalidVector,
    #[error("query is empty")]
    EmptyQuery,
}

impl From<BackendError> for EmbedError {
    fn from(e: BackendError) -> Self {
        EmbedError::BackendUnavailable(match e {
            BackendError::Unavailable(m) | BackendError::InvalidResponse(m) => m,
        })
    }
}

/// Fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbedError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
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
        v.0
    }
}

/// Text → fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn dim(&self) -> usize;

    /// Identity of the embedder, recorded alongside cached vectors.
    fn tag(&self) -> String;

    fn probe(&self) -> bool {
        true
    }
}

/// Deterministic bag-of-tokens feature hashing.
///
/// Tokens are whitespace-separated and lowercased; each adds one to bucket
/// `fnv1a64(token) % dim`; the counts are then ℓ2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenHashEmbedder {
    dim: usize,
}

impl TokenHashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut hasher = FnvHasher::default();
        hasher.write(token.as_bytes());
        (hasher.finish() % self.dim as u64) as usize
    }
}

impl Default for TokenHashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for TokenHashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut counts = vec![0.0f64; self.dim];
        for token in text.split_whitespace() {
            counts[self.bucket(&token.to_lowercase())] += 1.0;
        }
        let norm = libm::sqrt(counts.iter().map(|c| c * c).sum());
        if norm > 0.0 {
            counts.iter_mut().for_each(|c| *c /= norm);
        }
        EmbeddingVector::new(counts)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("token-hash/fnv1a64/dim={}", self.dim)
    }
}

/// Canonical single-line rendering `S: a, b | K: x | D: D2` (reasons omitted).
pub fn profile_to_string(p: &CapabilityProfile) -> String {
    let join = |set: &crate::model::LabelSet| {
        set.iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "S: {} | K: {} | D: {}",
        join(p.skills()),
        join(p.knowledge()),
        p.difficulty()
    )
}

/// Text fed to the embedder for a query and its profile.
pub fn ranking_text(query: &str, p: &CapabilityProfile) -> String {
    format!("{query} || {}", profile_to_string(p))
}

pub fn embed_for_ranking(
    query: &str,
    p: &CapabilityProfile,
    embedder: &dyn Embedder,
) -> Result<EmbeddingVector, EmbedError> {
    if query.trim().is_empty() {
        return Err(EmbedError::EmptyQuery);
    }
    let v = embedder.embed(&ranking_text(query, p))?;
    if v.dim() != embedder.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: embedder.dim(),
            actual: v.dim(),
        });
    }
    Ok(v)
}

/// Cosine similarity; 0.0 when either vector has (near-)zero norm.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(0.0);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub entry_id: String,
    pub score_b: f64,
}

/// Top-`k` candidates by cosine to `user`, ties broken by ascending id.
pub fn stage_b_rank(
    user: &EmbeddingVector,
    candidates: &[(&str, &EmbeddingVector)],
    k: usize,
) -> Result<Vec<RankedCandidate>, EmbedError> {
    let mut scored = candidates
        .iter()
        .map(|(id, v)| {
            Ok(RankedCandidate {
                entry_id: String::from(*id),
                score_b: cosine(user, v)?,
            })
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    let by_rank = |a: &RankedCandidate, b: &RankedCandidate| {
        b.score_b
            .total_cmp(&a.score_b)
            .then_with(|| a.entry_id.cmp(&b.entry_id))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);
    Ok(scored)
}
