mod common;

use ariiha::corpus::Split;
use ariiha::target::{
    normalize_target, target_prioritized_retrieve, target_similarity, DefaultMatcher, Priority, TargetMatch,
};
use common::{example, oracle_priority, random_group, random_pool, random_text};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn selection_matches_brute_force(seed in any::<u64>(), k in 0usize..10, from_pool in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rp = random_pool(&mut rng, 25);
        let query = if from_pool {
            rp.pool.examples()[rng.gen_range(0..rp.pool.len())].clone()
        } else {
            example("query", &random_text(&mut rng, 8), ariiha::corpus::Label::Hate, None, Split::Test)
        };
        let predicted = rng.gen_bool(0.8).then(|| random_group(&mut rng));
        let nt = predicted.map(|p| normalize_target(p).unwrap());
        let got = target_prioritized_retrieve(&rp.pool, &rp.index, &rp.targets, &DefaultMatcher, &query, nt.as_ref(), k);
        let want = oracle_priority(&rp, &query, predicted, k);

        let eligible = rp.pool.len() - usize::from(from_pool);
        prop_assert_eq!(got.len(), k.min(eligible));
        prop_assert!(got.iter().all(|d| d.id != query.id));
        prop_assert!(got.windows(2).all(|w| w[0].priority <= w[1].priority));
        for (g, (id, prio, score)) in got.iter().zip(&want) {
            prop_assert_eq!(&g.id, id);
            prop_assert_eq!(g.priority, *prio);
            prop_assert!((g.bm25_score - score).abs() <= 1e-9);
        }
        if nt.is_none() {
            prop_assert!(got.iter().all(|d| d.priority == Priority::P3));
        }
    }

    #[test]
    fn matcher_is_symmetric(a in "[a-z]{1,6}( [a-z]{1,6}){0,2}", b in "[a-z]{1,6}( [a-z]{1,6}){0,2}") {
        let (na, nb) = (normalize_target(&a).unwrap(), normalize_target(&b).unwrap());
        prop_assert_eq!(target_similarity(&na, &nb), target_similarity(&nb, &na));
        prop_assert_eq!(target_similarity(&na, &na), TargetMatch::Exact);
    }
}

#[test]
fn normalization_examples() {
    let t = normalize_target("  Black  PEOPLE, women ").unwrap();
    assert_eq!(t.canonical(), "black people");
    assert!(t.content_tokens().contains("black"));
    assert!(!t.content_tokens().contains("people"));
    assert!(normalize_target(" ... ").is_err());
}

#[test]
fn similarity_levels() {
    let m = |a: &str, b: &str| target_similarity(&normalize_target(a).unwrap(), &normalize_target(b).unwrap());
    assert_eq!(m("Jews", "jews"), TargetMatch::Exact);
    assert_eq!(m("black people", "black women"), TargetMatch::Similar);
    assert_eq!(m("immigrants", "illegal immigrants"), TargetMatch::Similar);
    assert_eq!(m("black people", "white people"), TargetMatch::Unrelated);
    assert_eq!(m("men", "women"), TargetMatch::Unrelated);
}
