use std::collections::BTreeMap;

use caproute_core::deconstruct::{keyword_rule, KeywordRulesSpec, ProfileTemplate};
use caproute_core::{Deconstructor, DifficultyLevel, ExecutionRecord, HistoryEntry, KeywordRules, RoutingConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TestCase;
use crate::store::LogStore;

pub const FAMILY_NAMES: [&str; 8] =
    ["astronomy", "botany", "cartography", "dentistry", "economics", "forestry", "geology", "horology"];

const VERBS: [&str; 6] = ["summarize", "explain", "compare", "outline", "review", "classify"];
const NOUNS: [&str; 6] = ["report", "sample", "record", "survey", "dataset", "note"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub families: usize,
    pub entries_per_family: usize,
    pub tests_per_family: usize,
    /// Queries generated for each out-of-distribution kind.
    pub ood_per_kind: usize,
    pub models: Vec<String>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            families: 3,
            entries_per_family: 5,
            tests_per_family: 20,
            ood_per_kind: 20,
            models: ["model-a", "model-b", "model-c", "model-d"].map(String::from).to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodKind {
    /// Labels share nothing with the store.
    DisjointLabels,
    /// Labels match a family but the difficulty exceeds every stored entry.
    TooDifficult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodQuery {
    pub query: String,
    pub kind: OodKind,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub store: LogStore,
    pub testset: Vec<TestCase>,
    pub ood: Vec<OodQuery>,
    pub rules: KeywordRulesSpec,
    pub routing: RoutingConfig,
    /// Family name to its designed-best model.
    pub best: BTreeMap<String, String>,
}

pub fn family_name(i: usize) -> String {
    FAMILY_NAMES.get(i).map_or_else(|| format!("family{i}"), |n| n.to_string())
}

fn family_rules(name: &str) -> Vec<caproute_core::deconstruct::KeywordRule> {
    let skills = [format!("{name} analysis"), format!("{name} synthesis")];
    let skills: Vec<&str> = skills.iter().map(String::as_str).collect();
    let domain = format!("{name} domain");
    [("routine", DifficultyLevel::D1), ("standard", DifficultyLevel::D2), ("expert", DifficultyLevel::D3)]
        .into_iter()
        .map(|(tier, d)| keyword_rule(&format!("{name} {tier}"), &skills, &[domain.as_str()], d))
        .collect()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Outcomes where `best` scores in [0.9, 1.0] at cost below 2 and every
/// other model scores at most 0.85 at cost at least 2.5.
fn records(rng: &mut ChaCha8Rng, models: &[String], best: &str) -> Vec<ExecutionRecord> {
    models
        .iter()
        .map(|m| {
            let (score, cost) = if m == best {
                (rng.random_range(0.9..=1.0), rng.random_range(1.0..2.0))
            } else {
                (rng.random_range(0.3..=0.85), rng.random_range(2.5..10.0))
            };
            ExecutionRecord::new(m.clone(), round4(score), round4(cost)).expect("generated record is valid")
        })
        .collect()
}

fn phrase(rng: &mut ChaCha8Rng) -> String {
    format!("{} the {} {}", VERBS.choose(rng).unwrap(), NOUNS.choose(rng).unwrap(), rng.random_range(100..1000))
}

/// A corpus whose optimal route is known by construction. Deterministic per seed.
///
/// # Panics
/// With fewer than two families or two models.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> SyntheticCorpus {
    assert!(spec.families >= 2, "need at least two families");
    assert!(spec.models.len() >= 2, "need at least two models");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names: Vec<String> = (0..spec.families).map(family_name).collect();
    let rules = KeywordRulesSpec {
        rules: names.iter().flat_map(|n| family_rules(n)).collect(),
        default: ProfileTemplate {
            skills: vec!["general assistance".into()],
            knowledge: vec!["none".into()],
            difficulty: DifficultyLevel::D0,
        },
    };
    let deconstructor = KeywordRules::new(rules.clone()).expect("generated rules are valid");
    let profile = |q: &str| deconstructor.deconstruct(q).expect("keyword rules are total");

    let offset = rng.random_range(0..spec.models.len());
    let best: BTreeMap<String, String> = names
        .iter()
        .enumerate()
        .map(|(f, n)| (n.clone(), spec.models[(f + offset) % spec.models.len()].clone()))
        .collect();

    let mut entries = Vec::new();
    let mut testset = Vec::new();
    for name in &names {
        let winner = &best[name];
        for i in 0..spec.entries_per_family {
            let query = format!("{name} standard task {i}: {}", phrase(&mut rng));
            entries.push(HistoryEntry {
                id: format!("{name}-{i:03}"),
                profile: profile(&query),
                query,
                records: records(&mut rng, &spec.models, winner),
            });
        }
        for i in 0..spec.tests_per_family {
            let tier = if i % 2 == 0 { "routine" } else { "standard" };
            let query = format!("{name} {tier} request {i}: {}", phrase(&mut rng));
            testset.push(TestCase {
                id: format!("t-{name}-{i:03}"),
                profile: profile(&query),
                query,
                records: records(&mut rng, &spec.models, winner),
                dataset: Some(name.clone()),
            });
        }
    }

    let mut ood = Vec::new();
    for i in 0..spec.ood_per_kind {
        ood.push(OodQuery { query: format!("general assistance request {i}: {}", phrase(&mut rng)), kind: OodKind::DisjointLabels });
    }
    for i in 0..spec.ood_per_kind {
        let name = &names[i % names.len()];
        ood.push(OodQuery { query: format!("{name} expert challenge {i}: {}", phrase(&mut rng)), kind: OodKind::TooDifficult });
    }

    SyntheticCorpus {
        store: LogStore::from_entries(entries).expect("generated ids are unique"),
        testset,
        ood,
        rules,
        routing: RoutingConfig::new(spec.models.clone(), spec.models[0].clone()),
        best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use caproute_core::sifting::stage_a_score;

    #[test]
    fn sizes_and_determinism() {
        let c = generate_synthetic_corpus(&SynthSpec::default());
        assert_eq!(c.store.len(), 15);
        assert_eq!(c.testset.len(), 60);
        assert_eq!(c.ood.len(), 40);
        let again = generate_synthetic_corpus(&SynthSpec::default());
        assert_eq!(c.store, again.store);
        assert_eq!(c.testset, again.testset);
        let other = generate_synthetic_corpus(&SynthSpec { seed: 1, ..SynthSpec::default() });
        assert_ne!(c.store, other.store);
    }

    #[test]
    fn families_do_not_overlap() {
        let c = generate_synthetic_corpus(&SynthSpec { families: 2, ..SynthSpec::default() });
        let a = c.store.get("astronomy-000").unwrap();
        let b = c.store.get("botany-000").unwrap();
        assert_eq!(stage_a_score(&a.profile, &b.profile).score_a, 0.0);
    }
}
