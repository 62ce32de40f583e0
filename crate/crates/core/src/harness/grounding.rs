use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::catalog::BundleCatalog;
use crate::embed::Embedder;
use crate::ground::{filter_candidates, ground_in_pool, GroundingConfig};
use crate::model::{BundleId, EmotionState, PoolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Paraphrase,
    Indirect,
    Adjacent,
    OutOfScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCase {
    pub intent: String,
    pub pool: PoolKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<BundleId>,
    #[serde(default)]
    pub expected_fallback: bool,
    pub difficulty: Difficulty,
}

#[derive(Deserialize)]
struct RawProbe {
    intent: String,
    pool: String,
    #[serde(default)]
    expected: Option<BundleId>,
    #[serde(default)]
    expected_fallback: bool,
    difficulty: Difficulty,
}

fn parse_pool(s: &str) -> Option<PoolKind> {
    PoolKind::ALL.into_iter().find(|p| p.as_str() == s)
}

/// Parses a JSONL probe file.
pub fn parse_probes(text: &str) -> Result<Vec<ProbeCase>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawProbe = serde_json::from_str(line).map_err(|e| HarnessError::Case {
            line: i + 1,
            message: e.to_string(),
        })?;
        let pool = parse_pool(&raw.pool).ok_or(HarnessError::UnknownPool(raw.pool))?;
        if raw.expected.is_some() == raw.expected_fallback {
            return Err(HarnessError::Case {
                line: i + 1,
                message: "a probe needs exactly one of expected or expected_fallback".into(),
            });
        }
        out.push(ProbeCase {
            intent: raw.intent,
            pool,
            expected: raw.expected,
            expected_fallback: raw.expected_fallback,
            difficulty: raw.difficulty,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub intent: String,
    pub pool: PoolKind,
    pub difficulty: Difficulty,
    pub expected: Option<BundleId>,
    pub chosen: BundleId,
    pub fell_back: bool,
    pub top1_similarity: f64,
    pub top1_correct: bool,
    pub top3_correct: bool,
    pub ranked: Vec<(BundleId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolAccuracy {
    pub n: usize,
    pub top1: f64,
    pub top3: f64,
    pub mean_top1_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub embedder_model: String,
    pub max_pglv: u8,
    /// Candidate counts per pool after filtering for a neutral agent.
    pub pool_sizes: BTreeMap<PoolKind, usize>,
    pub pools: BTreeMap<PoolKind, PoolAccuracy>,
    pub overall: PoolAccuracy,
    pub by_difficulty: BTreeMap<Difficulty, PoolAccuracy>,
    /// Probes whose top-1 pick was wrong.
    pub confusions: Vec<ProbeResult>,
    pub cases: Vec<ProbeResult>,
}

impl GroundingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# embedder {}; max_pglv {}\n{:<9} {:>5} {:>4} {:>7} {:>7} {:>9}\n",
            self.embedder_model, self.max_pglv, "pool", "size", "N", "top-1", "top-3", "mean sim"
        );
        let row = |out: &mut String, name: &str, size: String, a: &PoolAccuracy| {
            out.push_str(&format!(
                "{:<9} {:>5} {:>4} {:>6.1}% {:>6.1}% {:>9.3}\n",
                name,
                size,
                a.n,
                a.top1 * 100.0,
                a.top3 * 100.0,
                a.mean_top1_similarity
            ));
        };
        for (pool, acc) in &self.pools {
            row(&mut out, pool.as_str(), self.pool_sizes[pool].to_string(), acc);
        }
        row(&mut out, "all", "-".into(), &self.overall);
        for c in &self.confusions {
            out.push_str(&format!(
                "confusion: {:?} expected {} got {}{}\n",
                c.intent,
                c.expected.as_ref().map_or("fallback".to_string(), |b| b.to_string()),
                c.chosen,
                if c.fell_back { " (fallback)" } else { "" }
            ));
        }
        out
    }
}

fn accuracy<'a>(results: impl Iterator<Item = &'a ProbeResult>) -> PoolAccuracy {
    let (mut n, mut t1, mut t3, mut sim) = (0usize, 0usize, 0usize, 0.0);
    for r in results {
        n += 1;
        t1 += r.top1_correct as usize;
        t3 += r.top3_correct as usize;
        sim += r.top1_similarity;
    }
    let d = n.max(1) as f64;
    PoolAccuracy {
        n,
        top1: t1 as f64 / d,
        top3: t3 as f64 / d,
        mean_top1_similarity: sim / d,
    }
}

/// Grounds every probe as a neutral agent. Fallback counts as correct only
/// for probes that expect it.
pub fn run_grounding_benchmark(
    probes: &[ProbeCase],
    embedder: &dyn Embedder,
    catalog: &BundleCatalog,
    config: &GroundingConfig,
) -> Result<GroundingReport, HarnessError> {
    let config = GroundingConfig {
        top_k: config.top_k.max(3),
        ..config.clone()
    };
    for p in probes {
        if let Some(id) = &p.expected {
            if catalog.get(id).is_none_or(|b| b.pool != p.pool) {
                return Err(HarnessError::UnknownExpectedBundle(id.clone()));
            }
        }
    }
    let mut cases = Vec::with_capacity(probes.len());
    for p in probes {
        let g = ground_in_pool(&p.intent, p.pool, catalog, EmotionState::Neutral, embedder, &config)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let ranked: Vec<(BundleId, f64)> = g.ranked.iter().map(|m| (m.bundle.id.clone(), m.similarity)).collect();
        let (top1_correct, top3_correct) = match &p.expected {
            Some(id) => (
                !g.fell_back() && &g.chosen.bundle.id == id,
                ranked.iter().take(3).any(|(b, _)| b == id),
            ),
            None => (g.fell_back(), g.fell_back()),
        };
        cases.push(ProbeResult {
            intent: p.intent.clone(),
            pool: p.pool,
            difficulty: p.difficulty,
            expected: p.expected.clone(),
            chosen: g.chosen.bundle.id.clone(),
            fell_back: g.fell_back(),
            top1_similarity: g.top1_similarity(),
            top1_correct,
            top3_correct,
            ranked,
        });
    }
    let pool_sizes = PoolKind::ALL
        .into_iter()
        .map(|pool| (pool, filter_candidates(&catalog.pool(pool), EmotionState::Neutral, &config).len()))
        .collect();
    let pools = PoolKind::ALL
        .into_iter()
        .filter(|pool| cases.iter().any(|c| c.pool == *pool))
        .map(|pool| (pool, accuracy(cases.iter().filter(|c| c.pool == pool))))
        .collect();
    let mut by_difficulty = BTreeMap::new();
    for d in [Difficulty::Paraphrase, Difficulty::Indirect, Difficulty::Adjacent, Difficulty::OutOfScope] {
        if cases.iter().any(|c| c.difficulty == d) {
            by_difficulty.insert(d, accuracy(cases.iter().filter(|c| c.difficulty == d)));
        }
    }
    Ok(GroundingReport {
        embedder_model: embedder.model_id().to_string(),
        max_pglv: config.max_pglv,
        pool_sizes,
        pools,
        overall: accuracy(cases.iter()),
        by_difficulty,
        confusions: cases.iter().filter(|c| !c.top1_correct).cloned().collect(),
        cases,
    })
}
