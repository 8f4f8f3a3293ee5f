//! Offline replay of routing policies over labeled test cases.

mod baselines;
mod replay;
mod sweep;
mod synth;

use std::path::Path;

use caproute_core::sifting::EmbedError;
use caproute_core::{CapabilityProfile, ExecutionRecord, HistoryEntry, RouteError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{knn_baseline, oracle_choice, random_baseline, Policy};
pub use replay::{replay, CaseDecision, DatasetSummary, PolicySummary, ReplayReport};
pub use sweep::{parse_grid, read_sweep_csv, sweep, write_sweep_csv, SweepParam, SweepRow};
pub use synth::{generate_synthetic_corpus, OodKind, OodQuery, SynthSpec, SyntheticCorpus, FAMILY_NAMES};

use crate::store::{read_lines, EntryLine, StoreError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("test case `{case}` has no record for model `{model}`")]
    MissingRecord { case: String, model: String },
    #[error("store is empty")]
    EmptyStore,
    #[error("no candidate model has records near case `{0}`")]
    NoEligibleModels(String),
    #[error("{param} value {value} is out of range")]
    InvalidGridValue { param: &'static str, value: f64 },
    #[error("cannot parse grid `{0}` (expected `start:stop:step` or a comma list)")]
    InvalidGrid(String),
    #[error("unknown policy `{0}`")]
    InvalidPolicy(String),
    #[error("routing failed on case `{case}`: {source}")]
    Route { case: String, source: RouteError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A replayable query with ground-truth outcomes for every candidate model.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub id: String,
    pub query: String,
    pub profile: CapabilityProfile,
    pub records: Vec<ExecutionRecord>,
    /// Optional grouping label for per-dataset averages.
    pub dataset: Option<String>,
}

impl TestCase {
    pub fn record_for(&self, model: &str) -> Option<&ExecutionRecord> {
        self.records.iter().find(|r| r.model == model)
    }

    pub fn to_entry(&self) -> HistoryEntry {
        HistoryEntry { id: self.id.clone(), query: self.query.clone(), profile: self.profile.clone(), records: self.records.clone() }
    }
}

#[derive(Serialize, Deserialize)]
struct CaseLine {
    #[serde(flatten)]
    line: EntryLine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
}

/// Errors with `MissingRecord` unless every case covers every model.
pub fn check_dense(cases: &[TestCase], models: &[String]) -> Result<(), HarnessError> {
    for c in cases {
        if let Some(m) = models.iter().find(|m| c.record_for(m).is_none()) {
            return Err(HarnessError::MissingRecord { case: c.id.clone(), model: m.clone() });
        }
    }
    Ok(())
}

/// Testset JSONL: the store line schema plus an optional `"dataset"` key.
pub fn load_testset(path: &Path) -> Result<Vec<TestCase>, HarnessError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (n, text) in read_lines(path)? {
        let line: CaseLine =
            serde_json::from_str(&text).map_err(|e| StoreError::Parse { line: n, message: e.to_string() })?;
        let dataset = line.dataset;
        let (entry, _) = line.line.into_entry(n)?;
        if !seen.insert(entry.id.clone()) {
            return Err(StoreError::DuplicateId { id: entry.id, line: n }.into());
        }
        out.push(TestCase { id: entry.id, query: entry.query, profile: entry.profile, records: entry.records, dataset });
    }
    Ok(out)
}

pub fn testset_to_jsonl(cases: &[TestCase]) -> String {
    let mut out = String::new();
    for c in cases {
        let line = CaseLine { line: EntryLine::from_entry(&c.to_entry(), None), dataset: c.dataset.clone() };
        out.push_str(&serde_json::to_string(&line).expect("case serializes"));
        out.push('\n');
    }
    out
}
