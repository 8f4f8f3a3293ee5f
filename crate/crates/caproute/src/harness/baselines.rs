use std::fmt;
use std::str::FromStr;

use caproute_core::decision::aggregate_records;
use caproute_core::sifting::{embed_for_ranking, stage_b_rank, EmbeddingVector};
use caproute_core::{CapabilityProfile, Embedder, HistoryEntry, Library};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, TestCase};

/// A routing policy the harness can replay.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Decor,
    Random { seed: u64 },
    Knn { k: usize },
    Fixed(String),
    Oracle,
}

impl Policy {
    pub const DEFAULT_SEED: u64 = 0;
    pub const DEFAULT_K: usize = 5;
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Decor => f.write_str("decor"),
            Policy::Random { seed } => write!(f, "random:{seed}"),
            Policy::Knn { k } => write!(f, "knn:{k}"),
            Policy::Fixed(m) => write!(f, "fixed:{m}"),
            Policy::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for Policy {
    type Err = HarnessError;

    /// `decor`, `oracle`, `random[:seed]`, `knn[:k]`, `fixed:<model>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::InvalidPolicy(s.to_string());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        Ok(match (head, arg) {
            ("decor", None) => Policy::Decor,
            ("oracle", None) => Policy::Oracle,
            ("random", None) => Policy::Random { seed: Self::DEFAULT_SEED },
            ("random", Some(a)) => Policy::Random { seed: a.parse().map_err(|_| bad())? },
            ("knn", None) => Policy::Knn { k: Self::DEFAULT_K },
            ("knn", Some(a)) => match a.parse() {
                Ok(k) if k > 0 => Policy::Knn { k },
                _ => return Err(bad()),
            },
            ("fixed", Some(m)) if !m.is_empty() => Policy::Fixed(m.to_string()),
            _ => return Err(bad()),
        })
    }
}

/// Uniform draw over `models`, reproducible per `(seed, case_index)`.
pub fn random_baseline(case_index: usize, seed: u64, models: &[String]) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case_index as u64);
    models[rng.random_range(0..models.len())].clone()
}

/// Best recorded score, ties to the lower cost, then to `models` order.
pub fn oracle_choice(case: &TestCase, models: &[String]) -> Result<String, HarnessError> {
    let mut best: Option<(&String, f64, f64)> = None;
    for m in models {
        let r = case
            .record_for(m)
            .ok_or_else(|| HarnessError::MissingRecord { case: case.id.clone(), model: m.clone() })?;
        let better = match best {
            None => true,
            Some((_, s, c)) => r.score > s || (r.score == s && r.cost < c),
        };
        if better {
            best = Some((m, r.score, r.cost));
        }
    }
    best.map(|(m, _, _)| m.clone()).ok_or_else(|| HarnessError::NoEligibleModels(case.id.clone()))
}

/// Averages each model's scores over the `k` store entries nearest to the
/// query by cosine, then picks the best mean (ties to lower mean cost, then
/// `models` order).
pub fn knn_baseline(
    query: &str,
    profile: &CapabilityProfile,
    library: &Library,
    embedder: &dyn Embedder,
    models: &[String],
    k: usize,
) -> Result<String, HarnessError> {
    if library.is_empty() {
        return Err(HarnessError::EmptyStore);
    }
    let user = embed_for_ranking(query, profile, embedder)?;
    let vectors: Vec<(&str, EmbeddingVector)> = library
        .index()
        .entries()
        .map(|e| Ok((e.id.as_str(), library.vector_for(e, embedder)?)))
        .collect::<Result<_, HarnessError>>()?;
    let refs: Vec<(&str, &EmbeddingVector)> = vectors.iter().map(|(id, v)| (*id, v)).collect();
    let neighbors: Vec<&HistoryEntry> = stage_b_rank(&user, &refs, k)?
        .iter()
        .filter_map(|r| library.index().get(&r.entry_id))
        .collect();
    let aggs = aggregate_records(&neighbors, models).map_err(|_| HarnessError::NoEligibleModels(query.to_string()))?;
    let mut best = &aggs[0];
    for a in &aggs[1..] {
        if a.mean_score > best.mean_score || (a.mean_score == best.mean_score && a.mean_cost < best.mean_cost) {
            best = a;
        }
    }
    Ok(best.model.clone())
}
