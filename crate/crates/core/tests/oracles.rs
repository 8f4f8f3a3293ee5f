//! Implementation-vs-oracle checks. Every oracle here is written from the
//! definitions, independently of the code paths it checks.

use std::collections::{BTreeMap, BTreeSet};

use caproute_core::decision::{aggregate_records, select_model, ModelAggregate};
use caproute_core::model::{CapabilityProfile, DifficultyLevel, ExecutionRecord, HistoryEntry, RoutingConfig};
use caproute_core::sifting::{
    cosine, sift, stage_a_filter, stage_b_rank, CoverageOracle, Embedder, EmbeddingVector, InvertedIndex,
    Library, SiftBackends, SiftOutcome, TokenHashEmbedder,
};
use caproute_core::{decide, Router};
use proptest::prelude::*;

const SKILLS: [&str; 6] = ["s0", "s1", "s2", "s3", "s4", "s5"];
const DOMAINS: [&str; 5] = ["k0", "k1", "k2", "k3", "none"];

fn pick(pool: &[&'static str], mask: u32) -> Vec<&'static str> {
    pool.iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, s)| *s)
        .collect()
}

prop_compose! {
    fn small_profile()(smask in 1u32..64, kmask in 1u32..16, none in prop::bool::weighted(0.2), d in 0u8..4) -> CapabilityProfile {
        let knowledge = if none { vec!["none"] } else { pick(&DOMAINS[..4], kmask) };
        CapabilityProfile::from_labels(&pick(&SKILLS, smask), &knowledge, DifficultyLevel::from_level(d).unwrap()).unwrap()
    }
}

fn entry(id: usize, p: CapabilityProfile) -> HistoryEntry {
    HistoryEntry {
        id: format!("e{id:03}"),
        query: format!("query number {id}"),
        profile: p,
        records: vec![ExecutionRecord::new("m", 0.5, 1.0).unwrap()],
    }
}

fn oracle_jaccard(a: &[String], b: &[String]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.iter().filter(|x| !a.contains(x)).count();
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

fn labels(set: &caproute_core::LabelSet) -> Vec<String> {
    set.iter().map(|l| l.as_str().to_string()).collect()
}

/// Naive full scan: score every entry from the formulas, keep >= tau, sort.
fn full_scan(user: &CapabilityProfile, entries: &[HistoryEntry], tau: f64) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = entries
        .iter()
        .filter_map(|e| {
            let sim = oracle_jaccard(&labels(user.skills()), &labels(e.profile.skills()))
                + oracle_jaccard(&labels(user.knowledge()), &labels(e.profile.knowledge()));
            let (di, du) = (e.profile.difficulty().level() as i32, user.difficulty().level() as i32);
            let w = if di >= du { 1.0 } else { 1.0 - 0.25 * (du - di) as f64 };
            let score = sim * w;
            (score >= tau).then(|| (e.id.clone(), score))
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stage_a_index_matches_full_scan(
        user in small_profile(),
        profiles in prop::collection::vec(small_profile(), 0..40),
        tau in prop::sample::select(vec![0.1, 0.25, 0.5, 0.9, 1.5, 2.0]),
    ) {
        let entries: Vec<HistoryEntry> = profiles.into_iter().enumerate().map(|(i, p)| entry(i, p)).collect();
        let index = InvertedIndex::build(entries.clone()).unwrap();
        let got: Vec<(String, f64)> = stage_a_filter(&user, &index, tau)
            .candidates().iter().map(|c| (c.entry_id.clone(), c.score_a)).collect();
        prop_assert_eq!(got, full_scan(&user, &entries, tau));
    }

    #[test]
    fn stage_a_shrinks_as_tau_grows(
        user in small_profile(),
        profiles in prop::collection::vec(small_profile(), 0..40),
        t1 in 0.01f64..2.0, t2 in 0.01f64..2.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let index = InvertedIndex::build(profiles.into_iter().enumerate().map(|(i, p)| entry(i, p))).unwrap();
        let a: BTreeSet<String> = stage_a_filter(&user, &index, lo).candidates().iter().map(|c| c.entry_id.clone()).collect();
        let b: BTreeSet<String> = stage_a_filter(&user, &index, hi).candidates().iter().map(|c| c.entry_id.clone()).collect();
        prop_assert!(b.is_subset(&a));
    }

    #[test]
    fn stage_b_matches_brute_force_sort(
        vectors in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5, 1.0]), 4), 1..30),
        user in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..8,
    ) {
        let user = EmbeddingVector::new(user).unwrap();
        let vs: Vec<(String, EmbeddingVector)> = vectors.into_iter().enumerate()
            .map(|(i, v)| (format!("id{:02}", 29 - i), EmbeddingVector::new(v).unwrap())).collect();
        let refs: Vec<(&str, &EmbeddingVector)> = vs.iter().map(|(id, v)| (id.as_str(), v)).collect();
        let got: Vec<String> = stage_b_rank(&user, &refs, k).unwrap().into_iter().map(|r| r.entry_id).collect();

        let mut brute: Vec<(String, f64)> = vs.iter().map(|(id, v)| {
            let dot: f64 = user.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
            let nu = user.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = if nu < 1e-12 || nv < 1e-12 { 0.0 } else { (dot / (nu * nv)).clamp(-1.0, 1.0) };
            (id.clone(), c)
        }).collect();
        // insertion sort keeps the oracle independent of slice::sort
        for i in 1..brute.len() {
            let mut j = i;
            while j > 0 && (brute[j].1 > brute[j - 1].1 || (brute[j].1 == brute[j - 1].1 && brute[j].0 < brute[j - 1].0)) {
                brute.swap(j, j - 1);
                j -= 1;
            }
        }
        let expected: Vec<String> = brute.into_iter().take(k).map(|(id, _)| id).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn chosen_score_grows_with_lambda(
        rows in prop::collection::vec((0.0f64..=1.0, 0.0f64..20.0), 1..7),
        l1 in 0.0f64..=1.0, l2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let aggs: Vec<ModelAggregate> = rows.iter().enumerate().map(|(i, (s, c))| ModelAggregate {
            model: format!("m{i}"), mean_score: *s, mean_cost: *c, support: 1,
        }).collect();
        let score_of = |name: &str| aggs.iter().find(|a| a.model == name).unwrap().mean_score;
        let a = select_model(&aggs, lo, 1e-9).chosen;
        let b = select_model(&aggs, hi, 1e-9).chosen;
        prop_assert!(score_of(&b) >= score_of(&a));
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bucket_counts(text: &str, dim: usize) -> Vec<f64> {
    let mut counts = vec![0.0; dim];
    for tok in text.split_whitespace() {
        counts[(fnv1a64(tok.to_lowercase().as_bytes()) % dim as u64) as usize] += 1.0;
    }
    counts
}

#[test]
fn token_hash_cosine_equals_bucket_collision_overlap() {
    let cases = [
        ("alpha beta gamma", "delta epsilon zeta eta"),
        ("one two three four five", "six seven eight nine ten eleven"),
        ("red green", "blue"),
    ];
    for dim in [4usize, 16, 256] {
        let e = TokenHashEmbedder::new(dim);
        for (a, b) in cases {
            let ca = bucket_counts(a, dim);
            let cb = bucket_counts(b, dim);
            let dot: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
            let na = ca.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = cb.iter().map(|x| x * x).sum::<f64>().sqrt();
            let expected = dot / (na * nb);
            let got = cosine(&e.embed(a).unwrap(), &e.embed(b).unwrap()).unwrap();
            assert!((got - expected).abs() < 1e-12, "dim {dim}: {got} vs {expected}");
        }
    }
}

#[test]
fn sift_is_pure_with_deterministic_backends() {
    let entries: Vec<HistoryEntry> = (0..20)
        .map(|i| {
            let p = CapabilityProfile::from_labels(&[SKILLS[i % 3]], &[DOMAINS[i % 2]], DifficultyLevel::from_level((i % 4) as u8).unwrap()).unwrap();
            entry(i, p)
        })
        .collect();
    let lib = Library::from_entries(entries).unwrap();
    let cfg = RoutingConfig::new(vec!["m".into()], "m");
    let e = TokenHashEmbedder::default();
    let user = CapabilityProfile::from_labels(&["s0"], &["k0"], DifficultyLevel::D1).unwrap();
    let b = SiftBackends { embedder: &e, evaluator: &CoverageOracle };
    let first = sift("query number 3", &user, &lib, &cfg, b).unwrap();
    for _ in 0..5 {
        assert_eq!(sift("query number 3", &user, &lib, &cfg, b).unwrap(), first);
    }
    if let SiftOutcome::Matched { valid_ids, trace, .. } = &first {
        let top: BTreeSet<&String> = trace.top_k.iter().map(|r| &r.entry_id).collect();
        assert!(valid_ids.iter().all(|id| top.contains(id)));
        assert!(trace.top_k.len() <= cfg.top_k);
    } else {
        panic!("expected a match: {first:?}");
    }
}

#[test]
fn decision_utilities_match_recomputation_from_raw_records() {
    let models = ["a", "b", "c"];
    let entries: Vec<HistoryEntry> = (0..6)
        .map(|i| HistoryEntry {
            id: format!("h{i}"),
            query: format!("q{i}"),
            profile: CapabilityProfile::from_labels(&["s"], &["k"], DifficultyLevel::D1).unwrap(),
            records: models
                .iter()
                .enumerate()
                .filter(|(j, _)| (i + j) % 4 != 0)
                .map(|(j, m)| ExecutionRecord::new(*m, ((i * 7 + j * 3) % 10) as f64 / 10.0, (1 + i + 2 * j) as f64).unwrap())
                .collect(),
        })
        .collect();
    let index = InvertedIndex::build(entries.clone()).unwrap();
    let valid: Vec<String> = vec!["h1".into(), "h2".into(), "h4".into()];
    let mut cfg = RoutingConfig::new(models.iter().map(|s| s.to_string()).collect(), "a");
    cfg.lambda_ = 0.3;
    let d = decide(
        SiftOutcome::Matched { valid_ids: valid.clone(), thought: String::new(), trace: Default::default() },
        &index,
        &cfg,
    );

    // brute force from raw records
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for e in entries.iter().filter(|e| valid.contains(&e.id)) {
        for r in &e.records {
            let s = sums.entry(models.iter().find(|m| **m == r.model).unwrap()).or_default();
            s.0 += r.score;
            s.1 += r.cost;
            s.2 += 1;
        }
    }
    let means: BTreeMap<&str, (f64, f64)> = sums.iter().map(|(m, (s, c, n))| (*m, (s / *n as f64, c / *n as f64))).collect();
    let vmax = means.values().map(|v| v.0).fold(f64::MIN, f64::max);
    let vmin = means.values().map(|v| v.0).fold(f64::MAX, f64::min);
    let cmax = means.values().map(|v| v.1).fold(f64::MIN, f64::max);
    let cmin = means.values().map(|v| v.1).fold(f64::MAX, f64::min);
    assert_eq!(d.trace.utilities.len(), means.len());
    for row in &d.trace.utilities {
        let (v, c) = means[row.model.as_str()];
        let u = 0.3 * (v - vmin) / (vmax - vmin + 1e-9) + 0.7 * (cmax - c) / (cmax - cmin + 1e-9);
        assert!((row.utility - u).abs() <= 1e-9);
    }
    let agg = aggregate_records(&valid.iter().map(|id| index.get(id).unwrap()).collect::<Vec<_>>(), &cfg.candidate_models).unwrap();
    assert_eq!(agg.len(), 3);
}

#[test]
fn router_is_total_over_empty_library() {
    use caproute_core::deconstruct::{KeywordRules, KeywordRulesSpec, ProfileTemplate};
    let rules = KeywordRules::new(KeywordRulesSpec {
        rules: vec![],
        default: ProfileTemplate { skills: vec!["x".into()], knowledge: vec!["none".into()], difficulty: DifficultyLevel::D0 },
    })
    .unwrap();
    let r = Router::new(
        Library::default(),
        RoutingConfig::new(vec!["m".into()], "m"),
        Box::new(rules),
        Box::new(TokenHashEmbedder::default()),
        Box::new(CoverageOracle),
    )
    .unwrap();
    let d = r.route("anything").unwrap();
    assert!(d.ood && d.fallback_used);
    assert_eq!(d.chosen_model, "m");
}
