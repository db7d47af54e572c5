mod common;

use std::collections::HashSet;

use bevtrack::association::{best_assignment, kbest, kbest_partitioned, prune_and_cap};
use bevtrack::moupdate::{Hypothesis, HypothesisSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::RawCosts;

#[test]
fn kbest_matches_enumeration() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(0..=4), rng.random_range(0..=4));
        let raw = RawCosts::random(&mut rng, n, m);
        let mut reference = raw.enumerate();
        reference.sort_by(|a, b| a.1.total_cmp(&b.1));
        let got = kbest(&raw.matrix(), 10_000);
        assert_eq!(got.len(), reference.len(), "seed {seed}");
        for (e, (_, c)) in got.iter().zip(&reference) {
            assert!((e.cost - c).abs() < 1e-9, "seed {seed}: {} vs {c}", e.cost);
            assert!((raw.cost(&e.assignment) - e.cost).abs() < 1e-9);
        }
        let all: HashSet<_> = reference.iter().map(|r| r.0.clone()).collect();
        let seen: HashSet<_> = got.iter().map(|e| e.assignment.clone()).collect();
        assert_eq!(all, seen, "seed {seed}");
    }
}

#[test]
fn prune_renormalizes_survivors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut h = HypothesisSet::empty();
    let ids: Vec<u64> = (0..3)
        .map(|_| {
            let mut c = common::random_component(&mut rng, 0.0, 0.0);
            c.existence = 0.9;
            h.insert_new(c)
        })
        .collect();
    h.hypotheses = ids
        .iter()
        .zip([0.5f64, 0.3, 0.2])
        .map(|(id, w)| Hypothesis {
            log_weight: w.ln(),
            members: vec![*id],
        })
        .collect();
    let out = prune_and_cap(&h, 10, 0.25, 1e-6);
    let w = out.weights();
    assert_eq!(w.len(), 2);
    assert!((w[0] - 0.625).abs() < 1e-12 && (w[1] - 0.375).abs() < 1e-12);
    assert!(!out.components.contains_key(&ids[2]));

    let capped = prune_and_cap(&h, 1, 0.0, 1e-6);
    assert_eq!(capped.hypotheses.len(), 1);
    assert!((capped.weights()[0] - 1.0).abs() < 1e-12);
    assert_eq!(capped.hypotheses[0].members, vec![ids[0]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kbest_is_sorted_and_distinct(seed in any::<u64>(), k in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(0..=6), rng.random_range(0..=6));
        let raw = RawCosts::random(&mut rng, n, m);
        let events = kbest(&raw.matrix(), k);
        prop_assert!(events.len() <= k);
        prop_assert!(events.windows(2).all(|w| w[0].cost <= w[1].cost + 1e-9));
        let distinct: HashSet<_> = events.iter().map(|e| e.assignment.clone()).collect();
        prop_assert_eq!(distinct.len(), events.len());
        let split = kbest_partitioned(&raw.matrix(), k);
        prop_assert_eq!(split.len(), events.len());
        for (a, b) in events.iter().zip(&split) {
            prop_assert!((a.cost - b.cost).abs() < 1e-9);
        }
    }

    #[test]
    fn best_beats_random_feasible_events(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.random_range(0..=8), rng.random_range(0..=8));
        let raw = RawCosts::random(&mut rng, n, m);
        let best = best_assignment(&raw.matrix()).unwrap();
        for _ in 0..20 {
            let mut cols: Vec<usize> = (0..m).collect();
            let a: Vec<Option<usize>> = (0..n)
                .map(|_| {
                    if cols.is_empty() || rng.random_bool(0.3) {
                        None
                    } else {
                        Some(cols.swap_remove(rng.random_range(0..cols.len())))
                    }
                })
                .collect();
            let c = raw.cost(&a);
            if c.is_finite() {
                prop_assert!(best.cost <= c + 1e-9);
            }
        }
    }

    #[test]
    fn prune_keeps_order_and_argmax(seed in any::<u64>(), cap in 1usize..8, floor in 0.0..0.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = HypothesisSet::empty();
        let ids: Vec<u64> = (0..4).map(|_| h.insert_new(common::random_component(&mut rng, 0.0, 0.0))).collect();
        // Distinct member subsets, so nothing merges.
        let count = rng.random_range(1..=16);
        h.hypotheses = (0..count)
            .map(|mask: usize| Hypothesis {
                log_weight: rng.random_range(-6.0..0.0),
                members: ids.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, id)| *id).collect(),
            })
            .collect();
        h.normalize();
        let out = prune_and_cap(&h, cap, floor, 0.0);
        let total: f64 = out.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(!out.hypotheses.is_empty() && out.hypotheses.len() <= cap);
        let argmax = h.hypotheses.iter().max_by(|a, b| a.log_weight.total_cmp(&b.log_weight)).unwrap();
        prop_assert_eq!(&out.hypotheses[out.best_hypothesis().unwrap()].members, &argmax.members);
        // Surviving hypotheses keep their relative order by weight.
        let before = |m: &Vec<u64>| h.hypotheses.iter().find(|x| &x.members == m).unwrap().log_weight;
        for a in &out.hypotheses {
            for b in &out.hypotheses {
                if before(&a.members) < before(&b.members) {
                    prop_assert!(a.log_weight <= b.log_weight);
                }
            }
        }
        out.check_invariants().unwrap();
    }
}
