#![allow(dead_code)]

use std::collections::BTreeMap;

use bounded_core::catalog::BundleCatalog;
use bounded_core::embed::{cosine, Embedder, FixtureEmbedder};
use bounded_core::ground::{filter_candidates, GroundingConfig};
use bounded_core::model::{BehaviorBundle, BundleId, EmotionState, PoolKind};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "praise", "joke", "hug", "wave", "dance", "read", "sit", "argue", "comfort", "laugh", "sigh", "shrug", "smile",
    "frown", "jump", "sing", "debate", "tease", "listen", "stretch", "whistle", "nod", "point", "clap",
];

pub fn phrase() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(WORDS), 1..4).prop_map(|w| w.join(" "))
}

pub fn emotion() -> impl Strategy<Value = EmotionState> {
    prop_oneof![
        Just(EmotionState::Happy),
        Just(EmotionState::Sad),
        Just(EmotionState::Angry),
        Just(EmotionState::Neutral),
    ]
}

fn valence() -> impl Strategy<Value = Vec<EmotionState>> {
    proptest::collection::btree_set(emotion(), 0..3).prop_map(|s| s.into_iter().collect())
}

fn pool_bundles(pool: PoolKind, max: usize) -> impl Strategy<Value = Vec<BehaviorBundle>> {
    proptest::collection::vec((phrase(), valence(), 1u8..=3, -2i64..=2), 1..max).prop_flat_map(move |specs| {
        let n = specs.len();
        (Just(specs), 0..n).prop_map(move |(specs, default_at)| {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (name, valence, pglv, delta))| {
                    let safe = i == default_at;
                    BehaviorBundle {
                        id: BundleId::new(format!("{}.b{i:02}", pool.as_str())),
                        name,
                        pool,
                        emotion_valence: if safe { Vec::new() } else { valence },
                        pglv: if safe { 1 } else { pglv },
                        relationship_delta: delta,
                        is_safe_default: safe,
                        metadata: BTreeMap::new(),
                    }
                })
                .collect()
        })
    })
}

/// Random valid catalogs with at most `max` bundles per pool.
pub fn catalog(max: usize) -> impl Strategy<Value = BundleCatalog> {
    (
        pool_bundles(PoolKind::Talk, max),
        pool_bundles(PoolKind::NonTalk, max),
        pool_bundles(PoolKind::ToSelf, max),
    )
        .prop_map(|(a, b, c)| BundleCatalog::new([a, b, c].concat()).expect("generated catalog is valid"))
}

pub fn pool() -> impl Strategy<Value = PoolKind> {
    prop_oneof![Just(PoolKind::Talk), Just(PoolKind::NonTalk), Just(PoolKind::ToSelf)]
}

pub fn grounding_config() -> impl Strategy<Value = GroundingConfig> {
    (0.0f64..=1.0, 1u8..=3, 1usize..5).prop_map(|(t, m, k)| GroundingConfig {
        fallback_threshold: t,
        max_pglv: m,
        top_k: k,
        pool_thresholds: BTreeMap::new(),
    })
}

pub fn embedder() -> FixtureEmbedder {
    FixtureEmbedder::new("prop-fixture", 0, 16)
}

/// Candidates after filtering, ranked the slow obvious way.
pub fn brute_force_ranking(
    intent: &str,
    catalog: &BundleCatalog,
    pool: PoolKind,
    emotion: EmotionState,
    config: &GroundingConfig,
    embedder: &dyn Embedder,
) -> Vec<(BundleId, f64)> {
    let q = embedder.embed(intent).unwrap();
    let mut all: Vec<(BundleId, f64)> = filter_candidates(&catalog.pool(pool), emotion, config)
        .into_iter()
        .map(|b| {
            let sim = cosine(&q, &embedder.embed(&b.name).unwrap()).unwrap();
            (b.id, sim)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all
}
