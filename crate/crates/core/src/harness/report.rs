use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};
use statrs::statistics::Statistics;

use super::trial::{run_trial, Setup, Termination, TrialConfig, TrialMetrics};
use super::{Fixtures, HarnessError};

/// Two-sided exact binomial test: the total probability of outcomes no more
/// likely than `k` successes in `n` trials under success probability `p`.
pub fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    let dist = Binomial::new(p, n).expect("valid binomial parameters");
    let observed = dist.pmf(k);
    let tol = observed * 1e-7;
    (0..=n)
        .map(|i| dist.pmf(i))
        .filter(|q| *q <= observed + tol)
        .sum::<f64>()
        .min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub setup: Setup,
    pub decay_enabled: bool,
    pub n: usize,
    pub depth_mean: f64,
    pub depth_sd: f64,
    pub depth_min: u32,
    pub depth_max: u32,
    pub natural: usize,
    pub depth_cap: usize,
    pub other: usize,
    /// Two-sided binomial p-value of the expected termination count
    /// (natural with decay, cap without) against a 50/50 split.
    pub binomial_p: f64,
    pub autonomy_mean: f64,
    pub autonomy_min: f64,
    pub autonomy_max: f64,
    pub trials: Vec<TrialMetrics>,
}

impl ConditionSummary {
    fn from_trials(config: &TrialConfig, trials: Vec<TrialMetrics>) -> Self {
        let depths: Vec<f64> = trials.iter().map(|m| m.max_depth as f64).collect();
        let shares: Vec<f64> = trials.iter().map(|m| m.autonomy_share).collect();
        let count = |t: Termination| trials.iter().filter(|m| m.termination == t).count();
        let natural = count(Termination::Natural);
        let depth_cap = count(Termination::DepthCap);
        let expected = if config.decay_enabled { natural } else { depth_cap };
        let n = trials.len();
        Self {
            setup: config.setup,
            decay_enabled: config.decay_enabled,
            n,
            depth_mean: depths.iter().mean(),
            depth_sd: if n > 1 { depths.iter().std_dev() } else { 0.0 },
            depth_min: trials.iter().map(|m| m.max_depth).min().unwrap_or(0),
            depth_max: trials.iter().map(|m| m.max_depth).max().unwrap_or(0),
            natural,
            depth_cap,
            other: n - natural - depth_cap,
            binomial_p: binomial_two_sided(expected as u64, n as u64, 0.5),
            autonomy_mean: shares.iter().mean(),
            autonomy_min: shares.iter().copied().fold(f64::INFINITY, f64::min),
            autonomy_max: shares.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            trials,
        }
    }

    pub fn termination_count(&self) -> usize {
        if self.decay_enabled {
            self.natural
        } else {
            self.depth_cap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub horizon: u64,
    pub autonomy_window: String,
    pub conditions: Vec<ConditionSummary>,
}

impl BatchReport {
    pub fn condition(&self, setup: Setup, decay_enabled: bool) -> Option<&ConditionSummary> {
        self.conditions
            .iter()
            .find(|c| c.setup == setup && c.decay_enabled == decay_enabled)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per condition, aligned columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# horizon {} ticks; autonomy share = {}", self.horizon, self.autonomy_window).unwrap();
        writeln!(
            out,
            "{:<9} {:<5} {:>3}  {:<12} {:<6} {:>8} {:>6} {:>6} {:>9}  autonomy mean [range]",
            "setup", "decay", "N", "depth (sd)", "range", "natural", "cap", "other", "p(binom)"
        )
        .unwrap();
        for c in &self.conditions {
            writeln!(
                out,
                "{:<9} {:<5} {:>3}  {:<12} {:<6} {:>8} {:>6} {:>6} {:>9.2e}  {:.3} [{:.3}-{:.3}]",
                c.setup.to_string(),
                if c.decay_enabled { "on" } else { "off" },
                c.n,
                format!("{:.2} ({:.2})", c.depth_mean, c.depth_sd),
                format!("{}-{}", c.depth_min, c.depth_max),
                format!("{}/{}", c.natural, c.n),
                c.depth_cap,
                c.other,
                c.binomial_p,
                c.autonomy_mean,
                c.autonomy_min,
                c.autonomy_max,
            )
            .unwrap();
        }
        out
    }
}

/// Runs every condition sequentially and summarizes each.
pub fn run_trial_batch(configs: &[TrialConfig], fixtures: &Fixtures) -> Result<BatchReport, HarnessError> {
    let mut conditions = Vec::with_capacity(configs.len());
    let mut horizon = 0;
    for config in configs {
        config.validate()?;
        horizon = horizon.max(config.horizon);
        let trials = config
            .seeds()
            .map(|seed| run_trial(config, fixtures, seed).map(|r| r.metrics))
            .collect::<Result<Vec<_>, _>>()?;
        conditions.push(ConditionSummary::from_trials(config, trials));
    }
    Ok(BatchReport {
        horizon,
        autonomy_window: "source-1 events / all events over the full fixed horizon, chain and post-chain heartbeats included".into(),
        conditions,
    })
}
