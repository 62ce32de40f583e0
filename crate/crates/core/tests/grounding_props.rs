mod common;

use bounded_core::ground::{filter_candidates, ground_in_pool, retrieve};
use bounded_core::model::{EmotionState, PoolKind};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn grounding_respects_filters_and_threshold(
        catalog in common::catalog(50),
        pool in common::pool(),
        emotion in common::emotion(),
        config in common::grounding_config(),
        intent in common::phrase(),
    ) {
        let embedder = common::embedder();
        let g = ground_in_pool(&intent, pool, &catalog, emotion, &embedder, &config).unwrap();
        prop_assert!(g.chosen.bundle.pglv <= config.max_pglv);
        prop_assert!(g.ranked.iter().all(|m| m.bundle.pglv <= config.max_pglv));
        prop_assert_eq!(g.fell_back(), g.top1_similarity() < config.fallback_threshold);
        if g.fell_back() {
            prop_assert!(g.chosen.bundle.is_safe_default);
        } else {
            prop_assert_eq!(&g.chosen, &g.ranked[0]);
        }
        if emotion == EmotionState::Happy {
            prop_assert!(!g.chosen.bundle.emotion_valence.iter().any(|v| matches!(v, EmotionState::Sad | EmotionState::Angry)));
        }
        prop_assert!(g.ranked.len() <= config.top_k);
    }

    #[test]
    fn retrieve_matches_brute_force(
        catalog in common::catalog(50),
        pool in common::pool(),
        emotion in common::emotion(),
        config in common::grounding_config(),
        intent in common::phrase(),
    ) {
        let embedder = common::embedder();
        let expected = common::brute_force_ranking(&intent, &catalog, pool, emotion, &config, &embedder);
        let candidates = filter_candidates(&catalog.pool(pool), emotion, &config);
        let got = retrieve(&intent, &candidates, &embedder, candidates.len()).unwrap();
        prop_assert_eq!(got.len(), expected.len());
        for (i, (m, (id, sim))) in got.iter().zip(&expected).enumerate() {
            prop_assert_eq!(&m.bundle.id, id);
            prop_assert!((m.similarity - sim).abs() < 1e-12);
            prop_assert_eq!(m.rank, i + 1);
        }
    }

    #[test]
    fn happy_filter_removes_negative_valence(catalog in common::catalog(50), max_pglv in 1u8..=3) {
        let config = bounded_core::ground::GroundingConfig { max_pglv, ..Default::default() };
        for pool in PoolKind::ALL {
            for b in filter_candidates(&catalog.pool(pool), EmotionState::Happy, &config) {
                prop_assert!(b.is_safe_default || !b.emotion_valence.iter().any(|v| matches!(v, EmotionState::Sad | EmotionState::Angry)));
                prop_assert!(b.pglv <= max_pglv);
            }
        }
    }

    #[test]
    fn neutral_full_pglv_keeps_pool(catalog in common::catalog(50)) {
        let config = bounded_core::ground::GroundingConfig::default();
        for pool in PoolKind::ALL {
            let p = catalog.pool(pool);
            prop_assert_eq!(filter_candidates(&p, EmotionState::Neutral, &config), p);
        }
    }
}
