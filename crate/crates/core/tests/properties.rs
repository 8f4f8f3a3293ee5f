use std::collections::BTreeSet;

use caproute_core::deconstruct::{parse_profile_json, profile_to_json, render_deconstruction_prompt, DECONSTRUCTION_TEMPLATE};
use caproute_core::decision::{select_model, ModelAggregate};
use caproute_core::model::{normalize_label, parse_difficulty, CapabilityProfile, DifficultyLevel};
use caproute_core::reward::reward;
use caproute_core::sifting::{cosine, difficulty_weight, stage_a_score, EmbeddingVector};
use proptest::prelude::*;

fn subsets(universe: u32) -> Vec<BTreeSet<u32>> {
    (0..1u32 << universe)
        .map(|mask| (0..universe).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

#[test]
fn reward_is_six_exactly_on_equality() {
    for n in 0..=5 {
        let all = subsets(n);
        for v in &all {
            for g in &all {
                assert_eq!(reward(v, g) == 6.0, v == g, "{v:?} {g:?}");
            }
        }
    }
}

#[test]
fn reward_bounds() {
    let n = 5;
    let all = subsets(n);
    for v in &all {
        for g in &all {
            let r = reward(v, g);
            assert!(r <= 6.0);
            if g.is_empty() {
                assert!(r >= -2.0 * n as f64);
            } else {
                // worst partial case: one hit among |G| = 1 and every other label a false positive
                assert!(r >= 6.0 * (2.0 - n as f64), "{v:?} {g:?} -> {r}");
            }
        }
    }
}

#[test]
fn reward_partial_case_moves_with_hits_and_false_positives() {
    let universe: BTreeSet<u32> = (0..5).collect();
    for v in subsets(5) {
        for g in subsets(5) {
            let in_partial_case = v != g && !g.is_empty() && v.intersection(&g).next().is_some();
            if !in_partial_case {
                continue;
            }
            let base = reward(&v, &g);
            for x in &universe {
                if v.contains(x) {
                    continue;
                }
                let mut grown = v.clone();
                grown.insert(*x);
                if grown == g {
                    continue;
                }
                let r = reward(&grown, &g);
                if g.contains(x) {
                    assert!(r > base);
                } else {
                    assert!(r < base);
                }
            }
        }
    }
}

fn difficulty() -> impl Strategy<Value = DifficultyLevel> {
    (0u8..4).prop_map(|l| DifficultyLevel::from_level(l).unwrap())
}

fn label() -> impl Strategy<Value = String> {
    "[a-zA-Z]{1,6}( {1,3}[a-z]{1,4})?"
}

prop_compose! {
    fn profile()(
        skills in prop::collection::vec(label(), 1..4),
        knowledge in prop::collection::vec(label(), 1..3),
        no_knowledge in any::<bool>(),
        d in difficulty(),
        sr in ".{0,20}", kr in ".{0,20}", dr in ".{0,20}",
    ) -> CapabilityProfile {
        let knowledge = if no_knowledge { vec!["none".to_string()] } else {
            knowledge.into_iter().filter(|k| normalize_label(k).unwrap() != "none").collect::<Vec<_>>()
        };
        let knowledge = if knowledge.is_empty() { vec!["domain".to_string()] } else { knowledge };
        CapabilityProfile::new(
            caproute_core::model::label_set(&skills).unwrap(), sr,
            caproute_core::model::label_set(&knowledge).unwrap(), kr,
            d, dr,
        ).unwrap()
    }
}

proptest! {
    #[test]
    fn profile_json_round_trips(p in profile()) {
        prop_assert_eq!(parse_profile_json(&profile_to_json(&p)).unwrap(), p);
    }

    #[test]
    fn normalize_label_is_idempotent(s in "\\PC{0,30}") {
        if let Ok(once) = normalize_label(&s) {
            prop_assert_eq!(normalize_label(&once).unwrap(), once);
        }
    }

    #[test]
    fn prompt_only_substitutes_the_query(q in "\\PC{1,80}") {
        prop_assume!(!q.trim().is_empty());
        let p = render_deconstruction_prompt(&q).unwrap();
        prop_assert_eq!(p.len(), DECONSTRUCTION_TEMPLATE.len() - "${query}".len() + q.len());
        prop_assert!(p.contains(q.as_str()));
    }

    #[test]
    fn stage_a_score_ranges(u in profile(), h in profile()) {
        let s = stage_a_score(&u, &h);
        prop_assert!((0.0..=2.0).contains(&s.score_a));
        prop_assert!([0.25, 0.5, 0.75, 1.0].contains(&s.weight));
        prop_assert!((s.score_a - s.sim_sk * s.weight).abs() <= 1e-12);
    }

    #[test]
    fn cosine_is_scale_invariant(
        v in prop::collection::vec(-10.0f64..10.0, 8),
        w in prop::collection::vec(-10.0f64..10.0, 8),
        a in 0.01f64..100.0,
        b in 0.01f64..100.0,
    ) {
        let u = EmbeddingVector::new(v).unwrap();
        let w = EmbeddingVector::new(w).unwrap();
        let base = cosine(&u, &w).unwrap();
        let scaled = cosine(&u.scaled(a).unwrap(), &w.scaled(b).unwrap()).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn cost_rescaling_keeps_the_choice(
        rows in prop::collection::vec((0.0f64..=1.0, 0.0f64..100.0), 2..6),
        lambda in 0.0f64..=1.0,
        factor in 0.1f64..10.0,
    ) {
        let costs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let range = costs.iter().cloned().fold(f64::MIN, f64::max) - costs.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(range >= 1e-3);
        let aggs: Vec<ModelAggregate> = rows.iter().enumerate().map(|(i, (s, c))| ModelAggregate {
            model: format!("m{i}"), mean_score: *s, mean_cost: *c, support: 1,
        }).collect();
        let scaled: Vec<ModelAggregate> = aggs.iter().map(|a| ModelAggregate { mean_cost: a.mean_cost * factor, ..a.clone() }).collect();
        prop_assert_eq!(select_model(&aggs, lambda, 1e-9).chosen, select_model(&scaled, lambda, 1e-9).chosen);
    }
}

#[test]
fn difficulty_text_round_trip_and_weights() {
    for d in DifficultyLevel::ALL {
        assert_eq!(parse_difficulty(d.as_str()).unwrap(), d);
        for u in DifficultyLevel::ALL {
            let expected = if d >= u { 1.0 } else { 1.0 - 0.25 * (u.level() - d.level()) as f64 };
            assert_eq!(difficulty_weight(d, u), expected);
        }
    }
}
