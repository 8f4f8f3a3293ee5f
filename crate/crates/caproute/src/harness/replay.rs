use std::collections::BTreeMap;

use caproute_core::{Router, RoutingConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dense, knn_baseline, oracle_choice, random_baseline, HarnessError, Policy, TestCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDecision {
    pub case_id: String,
    pub policy: String,
    pub model: String,
    pub score: f64,
    pub cost: f64,
    pub ood: bool,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub cases: usize,
    pub mean_perf: f64,
    pub mean_cost: f64,
    /// Mean cost over the cheapest policy's mean cost on this dataset.
    pub norm_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub mean_perf: f64,
    pub mean_cost: f64,
    /// Per-query averaging: overall mean cost over the cheapest policy's.
    pub norm_cost: Option<f64>,
    /// Per-dataset averaging: mean of the per-dataset multipliers.
    pub norm_cost_dataset_avg: Option<f64>,
    pub ood_rate: f64,
    pub datasets: Vec<DatasetSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub policies: Vec<PolicySummary>,
    pub cases: Vec<CaseDecision>,
}

const DEFAULT_DATASET: &str = "default";

fn decide_case(
    i: usize,
    case: &TestCase,
    policy: &Policy,
    router: &Router,
    cfg: &RoutingConfig,
) -> Result<CaseDecision, HarnessError> {
    let models = &cfg.candidate_models;
    let (model, ood, fallback_used) = match policy {
        Policy::Decor => {
            let d = router
                .route_with(&case.query, cfg, |_| {})
                .map_err(|source| HarnessError::Route { case: case.id.clone(), source })?;
            (d.chosen_model, d.ood, d.fallback_used)
        }
        Policy::Random { seed } => (random_baseline(i, *seed, models), false, false),
        Policy::Knn { k } => {
            (knn_baseline(&case.query, &case.profile, router.library(), router.embedder(), models, *k)?, false, false)
        }
        Policy::Fixed(m) => (m.clone(), false, false),
        Policy::Oracle => (oracle_choice(case, models)?, false, false),
    };
    let r = case
        .record_for(&model)
        .ok_or_else(|| HarnessError::MissingRecord { case: case.id.clone(), model: model.clone() })?;
    Ok(CaseDecision {
        case_id: case.id.clone(),
        policy: policy.to_string(),
        score: r.score,
        cost: r.cost,
        model,
        ood,
        fallback_used,
    })
}

/// `cost / min(costs)`; exactly 1.0 for the cheapest, `None` when undefined.
fn normalize_by_min(costs: &[f64]) -> Vec<Option<f64>> {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    costs
        .iter()
        .map(|&c| {
            if c == min {
                Some(1.0)
            } else if min > 0.0 {
                Some(c / min)
            } else {
                None
            }
        })
        .collect()
}

fn means(decisions: &[&CaseDecision]) -> (f64, f64) {
    if decisions.is_empty() {
        return (0.0, 0.0);
    }
    let n = decisions.len() as f64;
    let perf: f64 = decisions.iter().map(|d| d.score).sum();
    let cost: f64 = decisions.iter().map(|d| d.cost).sum();
    (perf / n, cost / n)
}

/// Routes every case under every policy and looks up the chosen model's
/// recorded outcome. Cases run in parallel; aggregation follows case order.
pub fn replay(
    cases: &[TestCase],
    policies: &[Policy],
    router: &Router,
    cfg: &RoutingConfig,
) -> Result<ReplayReport, HarnessError> {
    check_dense(cases, &cfg.candidate_models)?;
    for p in policies {
        if let Policy::Fixed(m) = p {
            if !cfg.candidate_models.contains(m) {
                return Err(HarnessError::InvalidPolicy(p.to_string()));
            }
        }
    }
    let mut per_policy: Vec<Vec<CaseDecision>> = Vec::new();
    for p in policies {
        let decisions: Vec<CaseDecision> = cases
            .par_iter()
            .enumerate()
            .map(|(i, c)| decide_case(i, c, p, router, cfg))
            .collect::<Result<_, _>>()?;
        per_policy.push(decisions);
    }

    let dataset_of: BTreeMap<&str, &str> = cases
        .iter()
        .map(|c| (c.id.as_str(), c.dataset.as_deref().unwrap_or(DEFAULT_DATASET)))
        .collect();
    let datasets: Vec<&str> = {
        let mut d: Vec<&str> = dataset_of.values().copied().collect();
        d.sort_unstable();
        d.dedup();
        d
    };

    let overall: Vec<(f64, f64)> = per_policy.iter().map(|ds| means(&ds.iter().collect::<Vec<_>>())).collect();
    let overall_norm = normalize_by_min(&overall.iter().map(|m| m.1).collect::<Vec<_>>());

    // [dataset][policy] -> (count, perf, cost)
    let by_dataset: Vec<Vec<(usize, f64, f64)>> = datasets
        .iter()
        .map(|name| {
            per_policy
                .iter()
                .map(|ds| {
                    let subset: Vec<&CaseDecision> = ds.iter().filter(|d| dataset_of[d.case_id.as_str()] == *name).collect();
                    let (p, c) = means(&subset);
                    (subset.len(), p, c)
                })
                .collect()
        })
        .collect();
    let dataset_norm: Vec<Vec<Option<f64>>> =
        by_dataset.iter().map(|row| normalize_by_min(&row.iter().map(|r| r.2).collect::<Vec<_>>())).collect();

    let summaries = policies
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let ds: Vec<DatasetSummary> = datasets
                .iter()
                .enumerate()
                .map(|(d, name)| DatasetSummary {
                    dataset: name.to_string(),
                    cases: by_dataset[d][j].0,
                    mean_perf: by_dataset[d][j].1,
                    mean_cost: by_dataset[d][j].2,
                    norm_cost: dataset_norm[d][j],
                })
                .collect();
            let norm_cost_dataset_avg = ds
                .iter()
                .map(|d| d.norm_cost)
                .collect::<Option<Vec<f64>>>()
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            let n = per_policy[j].len().max(1) as f64;
            PolicySummary {
                policy: p.to_string(),
                mean_perf: overall[j].0,
                mean_cost: overall[j].1,
                norm_cost: overall_norm[j],
                norm_cost_dataset_avg,
                ood_rate: per_policy[j].iter().filter(|d| d.ood).count() as f64 / n,
                datasets: ds,
            }
        })
        .collect();
    Ok(ReplayReport { policies: summaries, cases: per_policy.into_iter().flatten().collect() })
}
