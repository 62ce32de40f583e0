//! Behavior bundle catalog: JSONL loading, validation and serialization.
//!
//! One bundle per line:
//!
//! ```text
//! {"id":"talk.praise","name":"Praise/Compliment","pool":"talk","emotion_valence":["happy"],"pglv":1}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::model::{BehaviorBundle, BundleId, EmotionState, PoolKind};

/// Pool sizes of the full production catalog. Used as a validation profile,
/// not as a hard requirement.
pub const FULL_PROFILE: PoolCounts = PoolCounts {
    talk: 258,
    non_talk: 90,
    to_self: 30,
};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid catalog: {0}")]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("duplicate bundle id {0}")]
    DuplicateId(BundleId),
    #[error("bundle {bundle}: pglv {pglv} outside 1..=3")]
    PglvOutOfRange { bundle: BundleId, pglv: u8 },
    #[error("pool {0} is empty")]
    EmptyPool(PoolKind),
    #[error("pool {0} has no safe default")]
    MissingSafeDefault(PoolKind),
    #[error("pool {pool} has several safe defaults: {first} and {second}")]
    MultipleSafeDefaults {
        pool: PoolKind,
        first: BundleId,
        second: BundleId,
    },
    #[error("safe default {0} must have pglv 1 and no emotion valence")]
    UnsafeDefault(BundleId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PoolCounts {
    pub talk: usize,
    pub non_talk: usize,
    pub to_self: usize,
}

impl PoolCounts {
    pub fn get(&self, pool: PoolKind) -> usize {
        match pool {
            PoolKind::Talk => self.talk,
            PoolKind::NonTalk => self.non_talk,
            PoolKind::ToSelf => self.to_self,
        }
    }

    pub fn total(&self) -> usize {
        self.talk + self.non_talk + self.to_self
    }
}

/// A validated set of bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleCatalog {
    bundles: Vec<BehaviorBundle>,
    index: BTreeMap<BundleId, usize>,
}

impl BundleCatalog {
    pub fn new(bundles: Vec<BehaviorBundle>) -> Result<Self, ValidationError> {
        let mut index = BTreeMap::new();
        for (i, b) in bundles.iter().enumerate() {
            if index.insert(b.id.clone(), i).is_some() {
                return Err(ValidationError::DuplicateId(b.id.clone()));
            }
            if !(1..=3).contains(&b.pglv) {
                return Err(ValidationError::PglvOutOfRange {
                    bundle: b.id.clone(),
                    pglv: b.pglv,
                });
            }
        }
        for pool in PoolKind::ALL {
            let mut defaults = bundles.iter().filter(|b| b.pool == pool && b.is_safe_default);
            let first = defaults.next();
            if let Some(second) = defaults.next() {
                return Err(ValidationError::MultipleSafeDefaults {
                    pool,
                    first: first.unwrap().id.clone(),
                    second: second.id.clone(),
                });
            }
            if !bundles.iter().any(|b| b.pool == pool) {
                return Err(ValidationError::EmptyPool(pool));
            }
            match first {
                None => return Err(ValidationError::MissingSafeDefault(pool)),
                // the default is exempt from filtering, so it must pass every filter
                Some(d) if d.pglv != 1 || !d.emotion_valence.is_empty() => {
                    return Err(ValidationError::UnsafeDefault(d.id.clone()))
                }
                Some(_) => {}
            }
        }
        Ok(Self { bundles, index })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, CatalogError> {
        let mut bundles = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bundle: BehaviorBundle = serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            bundles.push(bundle);
        }
        Ok(Self::new(bundles)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for b in &self.bundles {
            out.push_str(&serde_json::to_string(b).expect("bundle serializes"));
            out.push('\n');
        }
        out
    }

    pub fn bundles(&self) -> &[BehaviorBundle] {
        &self.bundles
    }

    pub fn get(&self, id: &BundleId) -> Option<&BehaviorBundle> {
        self.index.get(id).map(|&i| &self.bundles[i])
    }

    pub fn pool(&self, pool: PoolKind) -> Vec<BehaviorBundle> {
        self.bundles.iter().filter(|b| b.pool == pool).cloned().collect()
    }

    pub fn safe_default(&self, pool: PoolKind) -> &BehaviorBundle {
        self.bundles
            .iter()
            .find(|b| b.pool == pool && b.is_safe_default)
            .expect("validated catalog has a safe default per pool")
    }

    pub fn counts(&self) -> PoolCounts {
        let mut c = PoolCounts::default();
        for b in &self.bundles {
            match b.pool {
                PoolKind::Talk => c.talk += 1,
                PoolKind::NonTalk => c.non_talk += 1,
                PoolKind::ToSelf => c.to_self += 1,
            }
        }
        c
    }

    /// True when the pool sizes match the full production profile.
    pub fn matches_full_profile(&self) -> bool {
        self.counts() == FULL_PROFILE
    }

    /// Distinct emotion tags used anywhere in the catalog.
    pub fn valence_tags(&self) -> BTreeSet<EmotionState> {
        self.bundles.iter().flat_map(|b| b.emotion_valence.iter().copied()).collect()
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<BundleCatalog, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    BundleCatalog::parse_jsonl(&text)
}

/// A synthetic catalog with the full production pool sizes. The shipped
/// sample catalog fills the front of each pool; the rest are numbered
/// placeholders. Twenty non-talk bundles sit at pglv 3, so restricting to
/// pglv <= 2 leaves 70 of 90.
pub fn synthetic_full_profile(sample: &BundleCatalog) -> BundleCatalog {
    let mut bundles: Vec<BehaviorBundle> = sample.bundles().to_vec();
    for pool in PoolKind::ALL {
        let mut have = bundles.iter().filter(|b| b.pool == pool).count();
        let mut n = 0;
        while have < FULL_PROFILE.get(pool) {
            n += 1;
            bundles.push(BehaviorBundle {
                id: BundleId::new(format!("{}.synthetic_{n:03}", pool.as_str())),
                name: format!("{} action {n}", pool.as_str().replace('_', " ")),
                pool,
                emotion_valence: Vec::new(),
                pglv: 1,
                relationship_delta: 0,
                is_safe_default: false,
                metadata: BTreeMap::new(),
            });
            have += 1;
        }
    }
    let target_high = 20;
    let mut high = bundles.iter().filter(|b| b.pool == PoolKind::NonTalk && b.pglv == 3).count();
    for b in bundles.iter_mut().rev() {
        if high >= target_high {
            break;
        }
        if b.pool == PoolKind::NonTalk && b.pglv != 3 && !b.is_safe_default {
            b.pglv = 3;
            high += 1;
        }
    }
    BundleCatalog::new(bundles).expect("synthetic catalog is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = include_str!("../fixtures/sample_catalog.jsonl");

    #[test]
    fn sample_catalog_counts() {
        let cat = BundleCatalog::parse_jsonl(SAMPLE).unwrap();
        assert_eq!(
            cat.counts(),
            PoolCounts {
                talk: 12,
                non_talk: 8,
                to_self: 6
            }
        );
        assert!(!cat.matches_full_profile());
        assert_eq!(cat.safe_default(PoolKind::ToSelf).id.as_str(), "self.idle");
    }

    #[test]
    fn synthetic_full_profile_sizes() {
        let full = synthetic_full_profile(&BundleCatalog::parse_jsonl(SAMPLE).unwrap());
        assert!(full.matches_full_profile());
        let low = full.pool(PoolKind::NonTalk).iter().filter(|b| b.pglv <= 2).count();
        assert_eq!(low, 70);
    }

    #[test]
    fn missing_self_default_names_the_pool() {
        let text = SAMPLE.replace(
            r#""id":"self.idle","name":"Stand idle","pool":"to_self","emotion_valence":[],"pglv":1,"safe_default":true"#,
            r#""id":"self.idle","name":"Stand idle","pool":"to_self","emotion_valence":[],"pglv":1"#,
        );
        let err = BundleCatalog::parse_jsonl(&text).unwrap_err();
        assert!(matches!(
            err,
            CatalogError::Validation(ValidationError::MissingSafeDefault(PoolKind::ToSelf))
        ));
        assert!(err.to_string().contains("ToSelf"));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = format!("{SAMPLE}{}\n", SAMPLE.lines().next().unwrap());
        let err = BundleCatalog::parse_jsonl(&text).unwrap_err();
        assert!(err.to_string().contains("talk.debate"), "{err}");
    }

    #[test]
    fn pglv_out_of_range_names_bundle() {
        let text = SAMPLE.replace(r#""id":"nontalk.grab_arm","name":"Grab their arm","pool":"non_talk","emotion_valence":["angry"],"pglv":3"#,
            r#""id":"nontalk.grab_arm","name":"Grab their arm","pool":"non_talk","emotion_valence":["angry"],"pglv":4"#);
        let err = BundleCatalog::parse_jsonl(&text).unwrap_err();
        assert!(matches!(
            err,
            CatalogError::Validation(ValidationError::PglvOutOfRange { pglv: 4, .. })
        ));
        assert!(err.to_string().contains("nontalk.grab_arm"));
    }

    #[test]
    fn empty_pool_rejected() {
        let text: String = SAMPLE
            .lines()
            .filter(|l| !l.contains(r#""pool":"non_talk""#))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = BundleCatalog::parse_jsonl(&text).unwrap_err();
        assert!(matches!(
            err,
            CatalogError::Validation(ValidationError::EmptyPool(PoolKind::NonTalk))
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", SAMPLE.lines().next().unwrap());
        match BundleCatalog::parse_jsonl(&text).unwrap_err() {
            CatalogError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn optional_fields_default() {
        let cat = BundleCatalog::parse_jsonl(SAMPLE).unwrap();
        let ask = cat.get(&"talk.ask_opinion".into()).unwrap();
        assert_eq!(ask.relationship_delta, 0);
        assert!(!ask.is_safe_default);
    }
}
