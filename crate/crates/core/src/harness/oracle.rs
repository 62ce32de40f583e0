use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trial::{run_trial, Setup, TrialConfig};
use super::{Fixtures, HarnessError};
use crate::converge::{reply_probability, DecayConfig};
use crate::model::Source;

/// Probability table over the terminal max source of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthDistribution {
    pub alpha: f64,
    pub depth_cap: u32,
    pub samples: Option<usize>,
    pub probs: BTreeMap<u32, f64>,
}

impl DepthDistribution {
    pub fn mean(&self) -> f64 {
        self.probs.iter().map(|(d, p)| *d as f64 * p).sum()
    }

    pub fn prob(&self, depth: u32) -> f64 {
        self.probs.get(&depth).copied().unwrap_or(0.0)
    }

    pub fn total_variation(&self, other: &DepthDistribution) -> f64 {
        let depths: std::collections::BTreeSet<u32> = self.probs.keys().chain(other.probs.keys()).copied().collect();
        0.5 * depths.iter().map(|d| (self.prob(*d) - other.prob(*d)).abs()).sum::<f64>()
    }
}

/// Terminal depth distribution of a single pairwise chain. The chain reaches
/// depth `d` by surviving the draws at sources 2..d-1 and failing at `d`;
/// whatever survives to `depth_cap` is halted there.
pub fn depth_distribution_oracle(alpha: f64, depth_cap: u32) -> DepthDistribution {
    let config = DecayConfig {
        alpha,
        enabled: alpha > 0.0,
    };
    let mut probs = BTreeMap::new();
    let mut survive = 1.0;
    let mut d = Source::FIRST_REPLY.get();
    loop {
        if d >= depth_cap {
            if survive > 0.0 {
                probs.insert(depth_cap, survive);
            }
            break;
        }
        let p = reply_probability(Source(d), &config);
        let stop = survive * (1.0 - p);
        if stop > 0.0 {
            probs.insert(d, stop);
        }
        survive *= p;
        if survive == 0.0 {
            break;
        }
        d += 1;
    }
    DepthDistribution {
        alpha,
        depth_cap,
        samples: None,
        probs,
    }
}

/// Runs `n` baseline chains through the room engine, stopping each when its
/// chain ends, and tabulates terminal depths.
pub fn empirical_depth_distribution(
    n: usize,
    alpha: f64,
    base_seed: u64,
    fixtures: &Fixtures,
) -> Result<DepthDistribution, HarnessError> {
    let mut config = TrialConfig::for_setup(Setup::Baseline, alpha > 0.0, n);
    config.alpha = alpha;
    config.base_seed = base_seed;
    config.stop_at_chain_end = true;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for seed in config.seeds() {
        let m = run_trial(&config, fixtures, seed)?.metrics;
        *counts.entry(m.max_depth).or_insert(0) += 1;
    }
    Ok(DepthDistribution {
        alpha,
        depth_cap: config.room.depth_cap,
        samples: Some(n),
        probs: counts.into_iter().map(|(d, c)| (d, c as f64 / n as f64)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_point_two_table() {
        let o = depth_distribution_oracle(0.2, 10);
        let expected = [(2, 0.2), (3, 0.32), (4, 0.288), (5, 0.1536), (6, 0.0384)];
        assert_eq!(o.probs.len(), expected.len());
        for (d, p) in expected {
            assert!((o.prob(d) - p).abs() < 1e-12, "depth {d}: {}", o.prob(d));
        }
        assert!((o.mean() - 3.5104).abs() < 1e-9);
    }

    #[test]
    fn degenerate_alphas() {
        let zero = depth_distribution_oracle(0.0, 10);
        assert_eq!(zero.probs, BTreeMap::from([(10, 1.0)]));
        let one = depth_distribution_oracle(1.0, 10);
        assert_eq!(one.probs, BTreeMap::from([(2, 1.0)]));
    }

    #[test]
    fn small_alpha_leaves_mass_at_cap() {
        let o = depth_distribution_oracle(0.05, 10);
        assert!(o.prob(10) > 0.0);
        assert!((o.probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_variation_is_half_l1() {
        let a = depth_distribution_oracle(1.0, 10);
        let b = depth_distribution_oracle(0.0, 10);
        assert_eq!(a.total_variation(&b), 1.0);
        assert_eq!(a.total_variation(&a), 0.0);
    }

    #[test]
    fn small_engine_sample_stays_in_support() {
        let e = empirical_depth_distribution(50, 0.2, 100, &Fixtures::shipped()).unwrap();
        assert!(e.probs.keys().all(|d| (2..=6).contains(d)));
        assert!((e.probs.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
