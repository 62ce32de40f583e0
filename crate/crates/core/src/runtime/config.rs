use serde::{Deserialize, Serialize};

use crate::converge::DecayConfig;
use crate::ground::GroundingConfig;
use crate::policy::{DedupConfig, HISTORY_WINDOW};

/// One tick models one second; heartbeats fire every 40 ticks by default.
pub const DEFAULT_HEARTBEAT_TICKS: u64 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomConfig {
    pub alpha: f64,
    pub decay_enabled: bool,
    /// A chain is halted at round end once its max source reaches this.
    pub depth_cap: u32,
    /// The room halts at round end once its history holds this many events.
    pub event_ceiling: usize,
    pub heartbeat_period: u64,
    pub dedup_window: u64,
    pub dedup_threshold: f64,
    pub grounding: GroundingConfig,
    /// Chance that a non-target agent adopts an event as a reply stimulus.
    pub bystander_reply_prob: f64,
    pub history_window: usize,
    pub master_seed: u64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            decay_enabled: true,
            depth_cap: 10,
            event_ceiling: 100,
            heartbeat_period: DEFAULT_HEARTBEAT_TICKS,
            dedup_window: 60,
            dedup_threshold: 0.9,
            grounding: GroundingConfig::default(),
            bystander_reply_prob: 0.0,
            history_window: HISTORY_WINDOW,
            master_seed: 0,
        }
    }
}

impl RoomConfig {
    pub fn decay(&self) -> DecayConfig {
        DecayConfig {
            alpha: self.alpha,
            enabled: self.decay_enabled,
        }
    }

    pub fn dedup(&self) -> DedupConfig {
        DedupConfig {
            window: self.dedup_window,
            threshold: self.dedup_threshold,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.depth_cap < 1 {
            return Err("depth_cap must be >= 1".into());
        }
        if self.event_ceiling < 1 {
            return Err("event_ceiling must be >= 1".into());
        }
        if self.heartbeat_period < 1 {
            return Err("heartbeat_period must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.dedup_threshold) {
            return Err(format!("dedup_threshold {} outside [0, 1]", self.dedup_threshold));
        }
        if !(0.0..=1.0).contains(&self.bystander_reply_prob) {
            return Err(format!("bystander_reply_prob {} outside [0, 1]", self.bystander_reply_prob));
        }
        self.grounding.validate()
    }
}
