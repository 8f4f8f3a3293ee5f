//! Three-stage hierarchical log sifting.
//!
//! Stage A keeps entries whose capability overlap, scaled by the difficulty
//! weight, reaches `tau`. Stage B re-ranks the survivors by cosine similarity
//! of query-plus-profile embeddings and keeps the Top-k. Stage C asks an
//! [`Evaluator`] which of those actually represent the query. An empty
//! result at Stage A or Stage C marks the query out-of-distribution.

mod embed;
mod evaluate;
mod stage_a;

pub use embed::{
    cosine, embed_for_ranking, profile_to_string, ranking_text, stage_b_rank, EmbedError, Embedder,
    EmbeddingVector, RankedCandidate, TokenHashEmbedder, ZERO_NORM,
};
pub use evaluate::{
    candidate_label, parse_evaluator_output, render_evaluator_prompt, ChatEvaluator,
    CoverageOracle, EvaluateError, Evaluator, Verdict, EVALUATOR_SYSTEM_PROMPT,
    MAX_EVALUATOR_CANDIDATES,
};
pub use stage_a::{
    difficulty_weight, jaccard, stage_a_filter, stage_a_score, IndexError, InvertedIndex,
    StageACandidate, StageAOutcome, StageAScore,
};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CapabilityProfile, FailurePolicy, HistoryEntry, RoutingConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LibraryError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("vector cache has {vectors} vectors for {entries} entries")]
    IncompleteVectors { vectors: usize, entries: usize },
    #[error("cached vector for unknown entry `{0}`")]
    UnknownVector(String),
    #[error("cached vectors disagree on dimension ({0} vs {1})")]
    MixedDimensions(usize, usize),
}

/// The augmented history: indexed entries plus an optional Stage B vector
/// cache tagged with the embedder that produced it.
#[derive(Debug, Clone, Default)]
pub struct Library {
    index: InvertedIndex,
    vectors: BTreeMap<String, EmbeddingVector>,
    embedder_tag: Option<String>,
}

impl Library {
    pub fn new(index: InvertedIndex) -> Self {
        Self {
            index,
            vectors: BTreeMap::new(),
            embedder_tag: None,
        }
    }

    pub fn from_entries<I: IntoIterator<Item = HistoryEntry>>(entries: I) -> Result<Self, LibraryError> {
        Ok(Self::new(InvertedIndex::build(entries)?))
    }

    /// Attaches a vector cache; it must hold exactly one vector per entry.
    pub fn with_vectors(
        index: InvertedIndex,
        vectors: BTreeMap<String, EmbeddingVector>,
        embedder_tag: impl Into<String>,
    ) -> Result<Self, LibraryError> {
        if vectors.len() != index.len() {
            return Err(LibraryError::IncompleteVectors {
                vectors: vectors.len(),
                entries: index.len(),
            });
        }
        let mut dim = None;
        for (id, v) in &vectors {
            if index.get(id).is_none() {
                return Err(LibraryError::UnknownVector(id.clone()));
            }
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => return Err(LibraryError::MixedDimensions(d, v.dim())),
                _ => {}
            }
        }
        Ok(Self {
            index,
            vectors,
            embedder_tag: Some(embedder_tag.into()),
        })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn embedder_tag(&self) -> Option<&str> {
        self.embedder_tag.as_deref()
    }

    /// Cached vector for `id`, only if it was produced by `embedder_tag`.
    pub fn cached_vector(&self, id: &str, embedder_tag: &str) -> Option<&EmbeddingVector> {
        if self.embedder_tag.as_deref() != Some(embedder_tag) {
            return None;
        }
        self.vectors.get(id)
    }

    pub fn vectors(&self) -> &BTreeMap<String, EmbeddingVector> {
        &self.vectors
    }

    /// Vector for an entry: the cache when it matches `embedder`, else a fresh embedding.
    pub fn vector_for(
        &self,
        entry: &HistoryEntry,
        embedder: &dyn Embedder,
    ) -> Result<EmbeddingVector, EmbedError> {
        match self.cached_vector(&entry.id, &embedder.tag()) {
            Some(v) => Ok(v.clone()),
            None => embed_for_ranking(&entry.query, &entry.profile, embedder),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodReason {
    NoStageACandidates,
    EvaluatorEmpty,
}

/// Per-stage record of a sift.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftTrace {
    pub stage_a: Vec<StageACandidate>,
    pub top_k: Vec<RankedCandidate>,
    pub thought: Option<String>,
    /// Set when the evaluator failed and the fallback policy absorbed it.
    pub evaluator_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SiftOutcome {
    Matched {
        /// Valid representatives in Top-k order; never empty.
        valid_ids: Vec<String>,
        thought: String,
        trace: SiftTrace,
    },
    OutOfDistribution {
        reason: OodReason,
        trace: SiftTrace,
    },
}

impl SiftOutcome {
    pub fn trace(&self) -> &SiftTrace {
        match self {
            Self::Matched { trace, .. } | Self::OutOfDistribution { trace, .. } => trace,
        }
    }

    pub fn is_ood(&self) -> bool {
        matches!(self, Self::OutOfDistribution { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SiftError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
}

/// Borrowed Stage B and Stage C backends.
#[derive(Clone, Copy)]
pub struct SiftBackends<'a> {
    pub embedder: &'a dyn Embedder,
    pub evaluator: &'a dyn Evaluator,
}

/// Runs Stage A → Stage B → Stage C for one query.
pub fn sift(
    query: &str,
    user: &CapabilityProfile,
    library: &Library,
    cfg: &RoutingConfig,
    backends: SiftBackends<'_>,
) -> Result<SiftOutcome, SiftError> {
    let mut trace = SiftTrace::default();

    let stage_a = match stage_a_filter(user, library.index(), cfg.tau) {
        StageAOutcome::OutOfDistribution => {
            return Ok(SiftOutcome::OutOfDistribution {
                reason: OodReason::NoStageACandidates,
                trace,
            })
        }
        StageAOutcome::Candidates(c) => c,
    };
    trace.stage_a = stage_a;

    let user_vec = embed_for_ranking(query, user, backends.embedder)?;
    let mut vectors = Vec::with_capacity(trace.stage_a.len());
    for c in &trace.stage_a {
        let entry = library
            .index()
            .get(&c.entry_id)
            .expect("stage A only yields indexed ids");
        vectors.push((entry.id.as_str(), library.vector_for(entry, backends.embedder)?));
    }
    let borrowed: Vec<(&str, &EmbeddingVector)> = vectors.iter().map(|(id, v)| (*id, v)).collect();
    trace.top_k = stage_b_rank(&user_vec, &borrowed, cfg.top_k)?;

    let top: Vec<&HistoryEntry> = trace
        .top_k
        .iter()
        .filter_map(|r| library.index().get(&r.entry_id))
        .collect();
    let verdict = match backends.evaluator.evaluate(query, user, &top) {
        Ok(v) => v,
        Err(e) if cfg.failure_policy == FailurePolicy::Fallback => {
            trace.evaluator_error = Some(e.to_string());
            return Ok(SiftOutcome::OutOfDistribution {
                reason: OodReason::EvaluatorEmpty,
                trace,
            });
        }
        Err(e) => return Err(e.into()),
    };
    trace.thought = Some(verdict.thought.clone());

    if verdict.valid.is_empty() {
        return Ok(SiftOutcome::OutOfDistribution {
            reason: OodReason::EvaluatorEmpty,
            trace,
        });
    }
    let valid_ids = verdict
        .valid
        .iter()
        .map(|&pos| top[pos].id.clone())
        .collect();
    Ok(SiftOutcome::Matched {
        valid_ids,
        thought: verdict.thought,
        trace,
    })
}
