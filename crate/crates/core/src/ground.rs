//! Embedding-based grounding of intent text onto executable bundles.
//!
//! Candidates are first pruned by emotion contradiction and content level,
//! then ranked by cosine similarity to the intent. A top-1 score below the
//! pool's threshold executes the pool's safe default instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::BundleCatalog;
use crate::embed::{cosine, Embedder, EmbedderError};
use crate::model::{BehaviorBundle, EmotionState, PoolKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("intent text is empty")]
    EmptyIntent,
    #[error("candidate pool is empty")]
    EmptyCandidates,
    #[error("top_k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    /// Applied to every pool unless overridden in `pool_thresholds`.
    pub fallback_threshold: f64,
    pub max_pglv: u8,
    pub top_k: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pool_thresholds: BTreeMap<PoolKind, f64>,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            fallback_threshold: 0.3,
            max_pglv: 3,
            top_k: 3,
            pool_thresholds: BTreeMap::new(),
        }
    }
}

impl GroundingConfig {
    pub fn threshold_for(&self, pool: PoolKind) -> f64 {
        self.pool_thresholds.get(&pool).copied().unwrap_or(self.fallback_threshold)
    }

    pub fn validate(&self) -> Result<(), String> {
        let thresholds = std::iter::once(self.fallback_threshold).chain(self.pool_thresholds.values().copied());
        for t in thresholds {
            if !(0.0..=1.0).contains(&t) {
                return Err(format!("threshold {t} outside [0, 1]"));
            }
        }
        if !(1..=3).contains(&self.max_pglv) {
            return Err(format!("max_pglv {} outside 1..=3", self.max_pglv));
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingMatch {
    pub bundle: BehaviorBundle,
    pub similarity: f64,
    /// 1-based position in the similarity ranking of the filtered pool.
    pub rank: usize,
    pub fell_back: bool,
}

/// Result of grounding one intent: the executed match plus the ranked top-k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub intent: String,
    pub pool: PoolKind,
    pub chosen: GroundingMatch,
    pub ranked: Vec<GroundingMatch>,
    pub threshold: f64,
}

impl Grounding {
    pub fn top1_similarity(&self) -> f64 {
        self.ranked.first().map_or(f64::NEG_INFINITY, |m| m.similarity)
    }

    pub fn fell_back(&self) -> bool {
        self.chosen.fell_back
    }
}

/// Drops emotionally contradictory bundles and bundles above `max_pglv`.
/// The pool's safe default always survives.
pub fn filter_candidates(pool: &[BehaviorBundle], emotion: EmotionState, config: &GroundingConfig) -> Vec<BehaviorBundle> {
    let excluded = emotion.excluded_valences();
    pool.iter()
        .filter(|b| {
            b.is_safe_default
                || (b.pglv <= config.max_pglv && !b.emotion_valence.iter().any(|v| excluded.contains(v)))
        })
        .cloned()
        .collect()
}

/// Full similarity ranking: descending similarity, ties by ascending id.
fn rank_all(
    intent: &str,
    candidates: &[BehaviorBundle],
    embedder: &dyn Embedder,
) -> Result<Vec<GroundingMatch>, GroundingError> {
    if candidates.is_empty() {
        return Err(GroundingError::EmptyCandidates);
    }
    let query = embedder.embed(intent)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for b in candidates {
        let v = embedder.embed(&b.name)?;
        let sim = cosine(&query, &v).map_err(EmbedderError::from)?;
        scored.push((sim, b));
    }
    scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| a.id.cmp(&b.id)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (similarity, b))| GroundingMatch {
            bundle: b.clone(),
            similarity,
            rank: i + 1,
            fell_back: false,
        })
        .collect())
}

/// The `k` nearest candidates to `intent`.
pub fn retrieve(
    intent: &str,
    candidates: &[BehaviorBundle],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<GroundingMatch>, GroundingError> {
    if k == 0 {
        return Err(GroundingError::ZeroK);
    }
    let mut all = rank_all(intent, candidates, embedder)?;
    all.truncate(k);
    Ok(all)
}

/// Filter, rank and threshold one pool.
pub fn ground_in_pool(
    intent: &str,
    pool: PoolKind,
    catalog: &BundleCatalog,
    emotion: EmotionState,
    embedder: &dyn Embedder,
    config: &GroundingConfig,
) -> Result<Grounding, GroundingError> {
    ground_inner(intent, pool, catalog, emotion, embedder, config, false)
}

/// Ranks the pool as usual but always executes the safe default.
pub fn ground_to_safe_default(
    intent: &str,
    pool: PoolKind,
    catalog: &BundleCatalog,
    emotion: EmotionState,
    embedder: &dyn Embedder,
    config: &GroundingConfig,
) -> Result<Grounding, GroundingError> {
    ground_inner(intent, pool, catalog, emotion, embedder, config, true)
}

fn ground_inner(
    intent: &str,
    pool: PoolKind,
    catalog: &BundleCatalog,
    emotion: EmotionState,
    embedder: &dyn Embedder,
    config: &GroundingConfig,
    force_fallback: bool,
) -> Result<Grounding, GroundingError> {
    if intent.trim().is_empty() {
        return Err(GroundingError::EmptyIntent);
    }
    let candidates = filter_candidates(&catalog.pool(pool), emotion, config);
    let all = rank_all(intent, &candidates, embedder)?;
    let threshold = config.threshold_for(pool);
    let top = &all[0];
    let chosen = if force_fallback || top.similarity < threshold {
        let default_id = &catalog.safe_default(pool).id;
        let mut m = all
            .iter()
            .find(|m| &m.bundle.id == default_id)
            .expect("safe default survives filtering")
            .clone();
        m.fell_back = true;
        m
    } else {
        top.clone()
    };
    let ranked = all.into_iter().take(config.top_k.max(1)).collect();
    Ok(Grounding {
        intent: intent.to_owned(),
        pool,
        chosen,
        ranked,
        threshold,
    })
}

impl Grounding {
    /// A bundle invoked directly by id, bypassing retrieval.
    pub fn direct(bundle: BehaviorBundle) -> Self {
        let m = GroundingMatch {
            bundle: bundle.clone(),
            similarity: 1.0,
            rank: 1,
            fell_back: false,
        };
        Self {
            intent: bundle.name.clone(),
            pool: bundle.pool,
            chosen: m.clone(),
            ranked: vec![m],
            threshold: 0.0,
        }
    }
}

/// Grounds a self-directed intent against the to-self pool.
pub fn ground_self(
    intent: &str,
    catalog: &BundleCatalog,
    emotion: EmotionState,
    embedder: &dyn Embedder,
    config: &GroundingConfig,
) -> Result<Grounding, GroundingError> {
    ground_in_pool(intent, PoolKind::ToSelf, catalog, emotion, embedder, config)
}

/// Grounds a proposed talk name and optional non-talk name independently.
pub fn ground_pair(
    talk_name: &str,
    nontalk_name: Option<&str>,
    catalog: &BundleCatalog,
    emotion: EmotionState,
    embedder: &dyn Embedder,
    config: &GroundingConfig,
) -> Result<(Grounding, Option<Grounding>), GroundingError> {
    let talk = ground_in_pool(talk_name, PoolKind::Talk, catalog, emotion, embedder, config)?;
    let nontalk = match nontalk_name.filter(|n| !n.trim().is_empty()) {
        Some(name) => Some(ground_in_pool(name, PoolKind::NonTalk, catalog, emotion, embedder, config)?),
        None => None,
    };
    Ok((talk, nontalk))
}
