use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Fixtures, HarnessError};
use crate::model::{AgentId, BundleId, BundlePair, Event, EventKind, Source};
use crate::runtime::{ChainStatus, RoomConfig};

/// Ticks per trial when measuring autonomy share; 15 heartbeats per agent.
pub const TRIAL_HORIZON: u64 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setup {
    #[serde(rename = "baseline")]
    Baseline,
    S1,
    S2,
    S3,
    S4,
}

impl Setup {
    pub const ALL: [Setup; 5] = [Setup::Baseline, Setup::S1, Setup::S2, Setup::S3, Setup::S4];
    pub const ROBUSTNESS: [Setup; 4] = [Setup::S1, Setup::S2, Setup::S3, Setup::S4];

    /// Actor, target and trigger bundle of the injected event.
    pub fn trigger(self) -> (&'static str, &'static str, &'static str) {
        match self {
            Setup::Baseline => ("A", "B", "talk.debate"),
            Setup::S1 => ("B", "C", "talk.debate"),
            Setup::S2 => ("C", "D", "talk.debate"),
            Setup::S3 => ("E", "A", "talk.debate"),
            Setup::S4 => ("A", "B", "talk.discuss"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(Setup::Baseline),
            "s1" => Some(Setup::S1),
            "s2" => Some(Setup::S2),
            "s3" => Some(Setup::S3),
            "s4" => Some(Setup::S4),
            _ => None,
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setup::Baseline => "baseline",
            Setup::S1 => "S1",
            Setup::S2 => "S2",
            Setup::S3 => "S3",
            Setup::S4 => "S4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Natural,
    DepthCap,
    EventCeiling,
    /// The chain was still active when the horizon ran out.
    HorizonElapsed,
    PolicyFailure,
}

impl From<ChainStatus> for Termination {
    fn from(s: ChainStatus) -> Self {
        match s {
            ChainStatus::Active => Termination::HorizonElapsed,
            ChainStatus::Natural => Termination::Natural,
            ChainStatus::DepthCap => Termination::DepthCap,
            ChainStatus::EventCeiling => Termination::EventCeiling,
            ChainStatus::PolicyFailure => Termination::PolicyFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub setup: Setup,
    pub actor: AgentId,
    pub target: AgentId,
    pub trigger_bundle: BundleId,
    pub decay_enabled: bool,
    pub alpha: f64,
    pub n_trials: usize,
    /// Trial `i` runs with master seed `base_seed + i`.
    pub base_seed: u64,
    pub horizon: u64,
    /// Stop as soon as the chain ends instead of running out the horizon.
    pub stop_at_chain_end: bool,
    pub room: RoomConfig,
}

impl TrialConfig {
    pub fn for_setup(setup: Setup, decay_enabled: bool, n_trials: usize) -> Self {
        let (actor, target, bundle) = setup.trigger();
        Self {
            setup,
            actor: AgentId::from(actor),
            target: AgentId::from(target),
            trigger_bundle: BundleId::from(bundle),
            decay_enabled,
            alpha: 0.2,
            n_trials,
            base_seed: 0,
            horizon: TRIAL_HORIZON,
            stop_at_chain_end: false,
            room: RoomConfig::default(),
        }
    }

    pub fn room_config(&self, seed: u64) -> RoomConfig {
        RoomConfig {
            alpha: self.alpha,
            decay_enabled: self.decay_enabled,
            master_seed: seed,
            ..self.room.clone()
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_trials as u64).map(|i| self.base_seed + i)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_trials == 0 {
            return Err(HarnessError::Config("n_trials must be >= 1".into()));
        }
        if self.actor == self.target {
            return Err(HarnessError::Config("actor and target must differ".into()));
        }
        self.room_config(0).validate().map_err(HarnessError::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub max_depth: u32,
    pub termination: Termination,
    pub autonomy_share: f64,
    pub events_by_source: BTreeMap<u32, usize>,
    pub n_events: usize,
    pub rounds: u64,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub metrics: TrialMetrics,
    pub trace: String,
}

/// Share of self-initiated (source 1) events over every event in the window.
pub fn compute_autonomy_share(events: &[Event]) -> Result<f64, HarnessError> {
    if events.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let autonomous = events.iter().filter(|e| e.source == Source::AUTONOMOUS).count();
    Ok(autonomous as f64 / events.len() as f64)
}

pub fn run_trial(config: &TrialConfig, fixtures: &Fixtures, seed: u64) -> Result<TrialRun, HarnessError> {
    config.validate()?;
    let (mut room, sink) = fixtures.room(config.room_config(seed))?;
    let root = room.inject_event(Event {
        event_id: 0,
        logical_time: 0,
        actor: config.actor.clone(),
        target: Some(config.target.clone()),
        source: Source::INJECTED,
        kind: EventKind::InjectedSocial,
        bundle_pair: Some(BundlePair {
            primary: config.trigger_bundle.clone(),
            accompanying: None,
        }),
        dialogue: None,
        whisper_text: None,
        reply_to: None,
        chain_root: None,
        fell_back: false,
        superseded: false,
    })?;

    let mut rounds = 0;
    while rounds < config.horizon && !room.is_halted() {
        let ended = room.chain(root).is_some_and(|c| c.status != ChainStatus::Active);
        if ended && config.stop_at_chain_end {
            break;
        }
        if let Err(source) = room.advance_round() {
            return Err(HarnessError::TrialAborted {
                seed,
                partial_trace: sink.lock().expect("sink lock").text(),
                source,
            });
        }
        rounds += 1;
    }

    let history = &room.state().history;
    let chain = room.chain(root).copied().expect("root chain exists");
    let mut events_by_source = BTreeMap::new();
    for e in history {
        *events_by_source.entry(e.source.get()).or_insert(0) += 1;
    }
    let metrics = TrialMetrics {
        seed,
        max_depth: chain.max_source,
        termination: chain.status.into(),
        autonomy_share: compute_autonomy_share(history)?,
        events_by_source,
        n_events: history.len(),
        rounds,
    };
    let trace = sink.lock().expect("sink lock").text();
    Ok(TrialRun { metrics, trace })
}
