//! Empirical decision: per-model aggregation over the valid set, min-max
//! normalization, λ-weighted utility and argmax with OOD fallback.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CapabilityProfile, HistoryEntry, RoutingConfig};
use crate::sifting::{InvertedIndex, OodReason, RankedCandidate, SiftOutcome, StageACandidate};

/// Utilities closer than this to the maximum are treated as tied.
///
/// The `epsilon` in the normalization denominators perturbs utilities by
/// about `epsilon / range`; this band absorbs that so the tie rule applies.
pub const UTILITY_TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("no candidate model has a record in the matched entries")]
    NoEligibleModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model: String,
    pub mean_score: f64,
    pub mean_cost: f64,
    /// Number of records that contributed.
    pub support: usize,
}

/// Mean score and cost per candidate model over the entries where it has a
/// record. Models without any record are omitted; output follows `models` order.
pub fn aggregate_records(
    entries: &[&HistoryEntry],
    models: &[String],
) -> Result<Vec<ModelAggregate>, DecisionError> {
    let aggregates: Vec<ModelAggregate> = models
        .iter()
        .filter_map(|model| {
            let (mut score, mut cost, mut support) = (0.0, 0.0, 0usize);
            for record in entries.iter().filter_map(|e| e.record_for(model)) {
                score += record.score;
                cost += record.cost;
                support += 1;
            }
            (support > 0).then(|| ModelAggregate {
                model: model.clone(),
                mean_score: score / support as f64,
                mean_cost: cost / support as f64,
                support,
            })
        })
        .collect();
    if aggregates.is_empty() {
        return Err(DecisionError::NoEligibleModels);
    }
    Ok(aggregates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Higher is better.
    Benefit,
    /// Lower is better.
    Cost,
}

/// Min-max normalization with `epsilon` added to the range.
pub fn normalize_min_max(values: &[f64], direction: Direction, epsilon: f64) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom = max - min + epsilon;
    values
        .iter()
        .map(|&x| match direction {
            Direction::Benefit => (x - min) / denom,
            Direction::Cost => (max - x) / denom,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub model: String,
    pub v_norm: f64,
    pub c_norm: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: String,
    /// One row per aggregate, in aggregate order.
    pub rows: Vec<UtilityRow>,
}

/// Computes the utility rows and picks the best model.
///
/// Every model within [`UTILITY_TIE_TOLERANCE`] of the best utility is a
/// contender; among those the higher mean score wins, then the lower mean
/// cost, then the earlier aggregate.
pub fn select_model(aggregates: &[ModelAggregate], lambda: f64, epsilon: f64) -> Selection {
    assert!(!aggregates.is_empty(), "select_model needs at least one aggregate");
    let scores: Vec<f64> = aggregates.iter().map(|a| a.mean_score).collect();
    let costs: Vec<f64> = aggregates.iter().map(|a| a.mean_cost).collect();
    let v_norm = normalize_min_max(&scores, Direction::Benefit, epsilon);
    let c_norm = normalize_min_max(&costs, Direction::Cost, epsilon);
    let rows: Vec<UtilityRow> = aggregates
        .iter()
        .zip(v_norm.iter().zip(&c_norm))
        .map(|(a, (&v, &c))| UtilityRow {
            model: a.model.clone(),
            v_norm: v,
            c_norm: c,
            utility: lambda * v + (1.0 - lambda) * c,
        })
        .collect();

    let best = rows.iter().map(|r| r.utility).fold(f64::NEG_INFINITY, f64::max);
    let chosen = aggregates
        .iter()
        .zip(&rows)
        .enumerate()
        .filter(|(_, (_, r))| best - r.utility <= UTILITY_TIE_TOLERANCE)
        .min_by(|(i, (a, _)), (j, (b, _))| {
            b.mean_score
                .total_cmp(&a.mean_score)
                .then_with(|| a.mean_cost.total_cmp(&b.mean_cost))
                .then_with(|| i.cmp(j))
        })
        .map(|(_, (a, _))| a.model.clone())
        .expect("non-empty");
    Selection { chosen, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackReason {
    NoStageACandidates,
    EvaluatorEmpty,
    NoEligibleModels,
    DeconstructionFailed,
    EmbeddingFailed,
}

impl From<OodReason> for FallbackReason {
    fn from(r: OodReason) -> Self {
        match r {
            OodReason::NoStageACandidates => Self::NoStageACandidates,
            OodReason::EvaluatorEmpty => Self::EvaluatorEmpty,
        }
    }
}

/// Everything the pipeline saw on the way to a decision. Aggregate and
/// utility rows are sorted by model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub profile: Option<CapabilityProfile>,
    pub stage_a: Vec<StageACandidate>,
    pub top_k: Vec<RankedCandidate>,
    pub valid_set: Vec<String>,
    pub thought: Option<String>,
    pub aggregates: Vec<ModelAggregate>,
    pub utilities: Vec<UtilityRow>,
    pub fallback_reason: Option<FallbackReason>,
    pub backend_error: Option<String>,
    pub config: RoutingConfig,
}

impl DecisionTrace {
    pub fn empty(config: &RoutingConfig) -> Self {
        Self {
            profile: None,
            stage_a: Vec::new(),
            top_k: Vec::new(),
            valid_set: Vec::new(),
            thought: None,
            aggregates: Vec::new(),
            utilities: Vec::new(),
            fallback_reason: None,
            backend_error: None,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub chosen_model: String,
    pub ood: bool,
    pub fallback_used: bool,
    pub trace: DecisionTrace,
}

impl RoutingDecision {
    /// Routes to the fallback model without having sifted anything.
    pub fn fallback(cfg: &RoutingConfig, reason: FallbackReason, error: Option<String>) -> Self {
        let mut trace = DecisionTrace::empty(cfg);
        trace.fallback_reason = Some(reason);
        trace.backend_error = error;
        Self {
            chosen_model: cfg.fallback_model.clone(),
            ood: false,
            fallback_used: true,
            trace,
        }
    }
}

/// Turns a sift outcome into a routing decision. Total: every input maps to a model.
pub fn decide(outcome: SiftOutcome, index: &InvertedIndex, cfg: &RoutingConfig) -> RoutingDecision {
    let mut trace = DecisionTrace::empty(cfg);
    let (valid_ids, sift_trace) = match outcome {
        SiftOutcome::OutOfDistribution { reason, trace: st } => {
            trace.stage_a = st.stage_a;
            trace.top_k = st.top_k;
            trace.thought = st.thought;
            trace.backend_error = st.evaluator_error;
            trace.fallback_reason = Some(reason.into());
            return RoutingDecision {
                chosen_model: cfg.fallback_model.clone(),
                ood: true,
                fallback_used: true,
                trace,
            };
        }
        SiftOutcome::Matched {
            valid_ids,
            thought,
            trace: mut st,
        } => {
            st.thought = Some(thought);
            (valid_ids, st)
        }
    };
    trace.stage_a = sift_trace.stage_a;
    trace.top_k = sift_trace.top_k;
    trace.thought = sift_trace.thought;

    let entries: Vec<&HistoryEntry> = valid_ids.iter().filter_map(|id| index.get(id)).collect();
    trace.valid_set = valid_ids;

    let aggregates = match aggregate_records(&entries, &cfg.candidate_models) {
        Ok(a) => a,
        Err(DecisionError::NoEligibleModels) => {
            trace.fallback_reason = Some(FallbackReason::NoEligibleModels);
            return RoutingDecision {
                chosen_model: cfg.fallback_model.clone(),
                ood: false,
                fallback_used: true,
                trace,
            };
        }
    };
    let selection = select_model(&aggregates, cfg.lambda_, cfg.epsilon);

    let mut aggregates = aggregates;
    let mut rows = selection.rows;
    aggregates.sort_by(|a, b| a.model.cmp(&b.model));
    rows.sort_by(|a, b| a.model.cmp(&b.model));
    trace.aggregates = aggregates;
    trace.utilities = rows;
    RoutingDecision {
        chosen_model: selection.chosen,
        ood: false,
        fallback_used: false,
        trace,
    }
}
