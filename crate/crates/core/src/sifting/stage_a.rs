//! Stage A: capability filtering over an inverted label index.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CapabilityProfile, DifficultyLevel, HistoryEntry, Label, ModelError};

/// `|a ∩ b| / |a ∪ b|`; two empty sets are defined to be identical (1.0).
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// Full weight when the historical query is at least as hard as the user's,
/// minus 0.25 per level of shortfall otherwise.
pub fn difficulty_weight(historical: DifficultyLevel, user: DifficultyLevel) -> f64 {
    if historical >= user {
        1.0
    } else {
        1.0 - 0.25 * f64::from(user.level() - historical.level())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageAScore {
    pub sim_sk: f64,
    pub weight: f64,
    pub score_a: f64,
}

/// Skill Jaccard plus knowledge Jaccard, scaled by the difficulty weight.
pub fn stage_a_score(user: &CapabilityProfile, historical: &CapabilityProfile) -> StageAScore {
    let sim_sk = jaccard(user.skills(), historical.skills())
        + jaccard(user.knowledge(), historical.knowledge());
    let weight = difficulty_weight(historical.difficulty(), user.difficulty());
    StageAScore {
        sim_sk,
        weight,
        score_a: sim_sk * weight,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageACandidate {
    pub entry_id: String,
    pub score_a: f64,
    pub sim_sk: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("entry `{id}` is invalid: {source}")]
    InvalidEntry { id: String, source: ModelError },
}

/// Label → entry-id postings for skills and knowledge, plus the entries.
#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    skill_postings: BTreeMap<Label, BTreeSet<String>>,
    knowledge_postings: BTreeMap<Label, BTreeSet<String>>,
    by_id: BTreeMap<String, HistoryEntry>,
}

impl InvertedIndex {
    pub fn build<I>(entries: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = HistoryEntry>,
    {
        let mut index = Self::default();
        for entry in entries {
            index.insert(entry)?;
        }
        Ok(index)
    }

    pub fn insert(&mut self, entry: HistoryEntry) -> Result<(), IndexError> {
        entry.validate().map_err(|source| IndexError::InvalidEntry {
            id: entry.id.clone(),
            source,
        })?;
        if self.by_id.contains_key(&entry.id) {
            return Err(IndexError::DuplicateId(entry.id));
        }
        for label in entry.profile.skills() {
            self.skill_postings
                .entry(label.clone())
                .or_default()
                .insert(entry.id.clone());
        }
        for label in entry.profile.knowledge() {
            self.knowledge_postings
                .entry(label.clone())
                .or_default()
                .insert(entry.id.clone());
        }
        self.by_id.insert(entry.id.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&HistoryEntry> {
        self.by_id.get(id)
    }

    /// Entries in ascending id order.
    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.by_id.values()
    }

    pub fn skill_postings(&self, label: &Label) -> Option<&BTreeSet<String>> {
        self.skill_postings.get(label)
    }

    pub fn knowledge_postings(&self, label: &Label) -> Option<&BTreeSet<String>> {
        self.knowledge_postings.get(label)
    }

    /// Ids of entries sharing at least one skill or knowledge label with `profile`.
    pub fn candidate_ids(&self, profile: &CapabilityProfile) -> BTreeSet<&str> {
        let skills = profile
            .skills()
            .iter()
            .filter_map(|l| self.skill_postings.get(l));
        let knowledge = profile
            .knowledge()
            .iter()
            .filter_map(|l| self.knowledge_postings.get(l));
        skills
            .chain(knowledge)
            .flat_map(|ids| ids.iter().map(String::as_str))
            .collect()
    }
}

/// Result of Stage A: surviving candidates, or an out-of-distribution signal.
#[derive(Debug, Clone, PartialEq)]
pub enum StageAOutcome {
    Candidates(Vec<StageACandidate>),
    OutOfDistribution,
}

impl StageAOutcome {
    pub fn candidates(&self) -> &[StageACandidate] {
        match self {
            Self::Candidates(c) => c,
            Self::OutOfDistribution => &[],
        }
    }

    pub fn is_ood(&self) -> bool {
        matches!(self, Self::OutOfDistribution)
    }
}

/// Orders candidates by score descending, then id ascending.
pub(crate) fn sort_stage_a(candidates: &mut [StageACandidate]) {
    candidates.sort_by(|a, b| {
        b.score_a
            .total_cmp(&a.score_a)
            .then_with(|| a.entry_id.cmp(&b.entry_id))
    });
}

/// Keeps entries with `score_a >= tau`.
///
/// Only entries reachable through the postings are scored: any other entry
/// shares no label with the user and scores 0, below every valid `tau > 0`.
pub fn stage_a_filter(user: &CapabilityProfile, index: &InvertedIndex, tau: f64) -> StageAOutcome {
    let mut kept: Vec<StageACandidate> = index
        .candidate_ids(user)
        .into_iter()
        .filter_map(|id| {
            let entry = index.get(id)?;
            let s = stage_a_score(user, &entry.profile);
            (s.score_a >= tau).then(|| StageACandidate {
                entry_id: entry.id.clone(),
                score_a: s.score_a,
                sim_sk: s.sim_sk,
                weight: s.weight,
            })
        })
        .collect();
    if kept.is_empty() {
        return StageAOutcome::OutOfDistribution;
    }
    sort_stage_a(&mut kept);
    StageAOutcome::Candidates(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{label_set, ExecutionRecord};
    use alloc::vec;
    use DifficultyLevel::*;

    fn set(items: &[&str]) -> BTreeSet<Label> {
        label_set(items).unwrap()
    }

    fn profile(s: &[&str], k: &[&str], d: DifficultyLevel) -> CapabilityProfile {
        CapabilityProfile::from_labels(s, k, d).unwrap()
    }

    fn entry(id: &str, p: CapabilityProfile) -> HistoryEntry {
        HistoryEntry {
            id: id.into(),
            query: id.into(),
            profile: p,
            records: vec![ExecutionRecord::new("m", 1.0, 1.0).unwrap()],
        }
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&set(&["x", "y"]), &set(&["x", "y"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn difficulty_weight_cases() {
        assert_eq!(difficulty_weight(D3, D1), 1.0);
        assert_eq!(difficulty_weight(D0, D3), 0.25);
        assert_eq!(difficulty_weight(D1, D2), 0.75);
        assert_eq!(difficulty_weight(D1, D3), 0.5);
    }

    #[test]
    fn stage_a_score_cases() {
        let p = profile(&["a"], &["k"], D2);
        let s = stage_a_score(&p, &p);
        assert_eq!((s.sim_sk, s.weight, s.score_a), (2.0, 1.0, 2.0));

        let user = profile(&["a", "b"], &["m", "n"], D2);
        let hist = profile(&["a", "b"], &["m"], D1);
        let s = stage_a_score(&user, &hist);
        assert_eq!((s.sim_sk, s.weight, s.score_a), (1.5, 0.75, 1.125));

        let other = profile(&["z"], &["q"], D0);
        assert_eq!(stage_a_score(&user, &other).score_a, 0.0);
    }

    #[test]
    fn index_postings_and_duplicates() {
        let mut idx = InvertedIndex::build([
            entry("1", profile(&["a", "b"], &["k"], D1)),
            entry("2", profile(&["b"], &["none"], D2)),
        ])
        .unwrap();
        let b = Label::new("b").unwrap();
        assert_eq!(idx.skill_postings(&b).unwrap().len(), 2);
        assert_eq!(
            idx.insert(entry("1", profile(&["c"], &["k"], D1))),
            Err(IndexError::DuplicateId("1".into()))
        );
    }

    #[test]
    fn filter_keeps_threshold_and_orders() {
        let user = profile(&["a", "b"], &["k"], D1);
        let idx = InvertedIndex::build([
            entry("e1", profile(&["a", "b"], &["k"], D1)),
            entry("e2", profile(&["a", "x", "y"], &["q"], D1)),
            entry("e3", profile(&["a"], &["q"], D1)),
        ])
        .unwrap();
        let scores: Vec<f64> = idx
            .entries()
            .map(|e| stage_a_score(&user, &e.profile).score_a)
            .collect();
        assert_eq!(scores, vec![2.0, 0.25, 0.5]);
        let out = stage_a_filter(&user, &idx, 0.5);
        let ids: Vec<&str> = out.candidates().iter().map(|c| c.entry_id.as_str()).collect();
        assert_eq!(ids, vec!["e1", "e3"]);
    }

    #[test]
    fn empty_store_and_low_scores_are_ood() {
        let user = profile(&["a"], &["k"], D1);
        assert!(stage_a_filter(&user, &InvertedIndex::default(), 0.5).is_ood());
        let idx = InvertedIndex::build([entry("e", profile(&["a", "b", "c"], &["z"], D0))]).unwrap();
        // 1/3 * 0.75 = 0.25
        assert!(stage_a_filter(&user, &idx, 0.5).is_ood());
    }
}
