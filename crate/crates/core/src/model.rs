//! Domain types shared across the engine: bundles, events, agents and rooms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::RoomConfig;

/// A precondition or invariant was violated by the caller.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("contract violation: {0}")]
pub struct ContractViolation(pub String);

impl ContractViolation {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BundleId(pub String);

impl BundleId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BundleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BundleId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionState {
    Happy,
    Sad,
    Angry,
    #[default]
    Neutral,
}

impl EmotionState {
    /// Valence tags that contradict this emotion and must be filtered out.
    pub fn excluded_valences(self) -> &'static [EmotionState] {
        match self {
            EmotionState::Happy => &[EmotionState::Sad, EmotionState::Angry],
            EmotionState::Sad | EmotionState::Angry => &[EmotionState::Happy],
            EmotionState::Neutral => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Talk,
    NonTalk,
    ToSelf,
}

impl PoolKind {
    pub const ALL: [PoolKind; 3] = [PoolKind::Talk, PoolKind::NonTalk, PoolKind::ToSelf];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Talk => "talk",
            PoolKind::NonTalk => "non_talk",
            PoolKind::ToSelf => "to_self",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Talk => "Talk",
            PoolKind::NonTalk => "NonTalk",
            PoolKind::ToSelf => "ToSelf",
        })
    }
}

/// One executable unit of character behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorBundle {
    pub id: BundleId,
    pub name: String,
    pub pool: PoolKind,
    #[serde(default)]
    pub emotion_valence: Vec<EmotionState>,
    pub pglv: u8,
    #[serde(default)]
    pub relationship_delta: i64,
    #[serde(default, rename = "safe_default")]
    pub is_safe_default: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl BehaviorBundle {
    /// Talk-pool bundles carry generated dialogue.
    pub fn is_dialogue_action(&self) -> bool {
        self.pool == PoolKind::Talk
    }
}

/// Decision priority. `A` outranks `B`, which outranks `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorityClass {
    A,
    B,
    C,
}

impl PriorityClass {
    fn rank(self) -> u8 {
        match self {
            PriorityClass::A => 2,
            PriorityClass::B => 1,
            PriorityClass::C => 0,
        }
    }
}

impl PartialOrd for PriorityClass {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PriorityClass {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

/// Reply-depth encoding carried by every event.
///
/// 0 is an injected or player input, 1 an autonomous action, and 2.. are
/// reply hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Source(pub u32);

impl Source {
    pub const INJECTED: Source = Source(0);
    pub const AUTONOMOUS: Source = Source(1);
    pub const FIRST_REPLY: Source = Source(2);

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<i64> for Source {
    type Error = ContractViolation;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        u32::try_from(value)
            .map(Source)
            .map_err(|_| ContractViolation::new(format!("source must be a non-negative integer, got {value}")))
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Source assigned to a reply answering an event with `incoming` source.
///
/// A reply to an injected source-0 event is a first-hop reply (2), since
/// source 1 is reserved for autonomous actions.
pub fn next_source(incoming: Source) -> Source {
    match incoming.0 {
        0 => Source::FIRST_REPLY,
        s => Source(s + 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    InjectedSocial,
    AutonomousAction,
    Reply,
    Whisper,
    Trigger,
    SelfAction,
    Fallback,
}

impl EventKind {
    pub fn is_source_zero(self) -> bool {
        matches!(self, EventKind::InjectedSocial | EventKind::Whisper | EventKind::Trigger)
    }
}

/// Bundles executed by one event: the talk (or self) bundle plus an optional
/// accompanying non-talk bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundlePair {
    pub primary: BundleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accompanying: Option<BundleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub logical_time: u64,
    pub actor: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<AgentId>,
    pub source: Source,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_pair: Option<BundlePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whisper_text: Option<String>,
    /// Event this one answers, for replies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    /// Root event of the interaction chain this event belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_root: Option<u64>,
    #[serde(default)]
    pub fell_back: bool,
    /// Set when a source-0 input interrupted this talk action.
    #[serde(default)]
    pub superseded: bool,
}

impl Event {
    /// Checks the source/kind encoding invariants.
    pub fn validate(&self) -> Result<(), ContractViolation> {
        let s = self.source.get();
        if (s == 0) != self.kind.is_source_zero() {
            return Err(ContractViolation::new(format!(
                "event {}: source 0 iff kind is injected/whisper/trigger (source {s}, kind {:?})",
                self.event_id, self.kind
            )));
        }
        if self.kind == EventKind::Reply && s < 2 {
            return Err(ContractViolation::new(format!("event {}: reply with source {s} < 2", self.event_id)));
        }
        if self.kind == EventKind::AutonomousAction && s != 1 {
            return Err(ContractViolation::new(format!(
                "event {}: autonomous action with source {s} != 1",
                self.event_id
            )));
        }
        if self.target.as_ref() == Some(&self.actor) {
            return Err(ContractViolation::new(format!("event {}: actor targets itself", self.event_id)));
        }
        Ok(())
    }
}

/// Priority class of an event as a stimulus.
pub fn classify_priority(event: &Event) -> PriorityClass {
    match event.kind {
        EventKind::Whisper | EventKind::Trigger | EventKind::InjectedSocial if event.source == Source::INJECTED => {
            PriorityClass::A
        }
        EventKind::AutonomousAction => PriorityClass::C,
        _ => PriorityClass::B,
    }
}

pub const TALK_EXECUTING: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: AgentId,
    pub display_name: String,
    pub emotion: EmotionState,
    pub relationship: BTreeMap<AgentId, i64>,
    /// Bit 0 is [`TALK_EXECUTING`]; higher bits are reserved.
    pub talk_state: u32,
    pub heartbeat_period: u64,
    pub next_heartbeat: u64,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    /// Event id of the talk action currently holding the lock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_flight: Option<u64>,
}

impl AgentState {
    pub fn new(agent_id: AgentId, display_name: impl Into<String>) -> Self {
        Self {
            agent_id,
            display_name: display_name.into(),
            emotion: EmotionState::Neutral,
            relationship: BTreeMap::new(),
            talk_state: 0,
            heartbeat_period: crate::runtime::DEFAULT_HEARTBEAT_TICKS,
            next_heartbeat: crate::runtime::DEFAULT_HEARTBEAT_TICKS,
            rng_seed: 0,
            owner: None,
            in_flight: None,
        }
    }

    pub fn is_talking(&self) -> bool {
        self.talk_state & TALK_EXECUTING != 0
    }

    pub fn relationship_to(&self, peer: &AgentId) -> i64 {
        self.relationship.get(peer).copied().unwrap_or(0)
    }

    /// Applies a relationship delta; self-entries are never stored.
    pub fn adjust_relationship(&mut self, peer: &AgentId, delta: i64) {
        if peer == &self.agent_id || delta == 0 {
            return;
        }
        *self.relationship.entry(peer.clone()).or_insert(0) += delta;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomState {
    pub room_id: String,
    pub agents: BTreeMap<AgentId, AgentState>,
    pub history: Vec<Event>,
    pub logical_clock: u64,
    pub rng_seed: u64,
    pub config: RoomConfig,
}

impl RoomState {
    pub fn new(room_id: impl Into<String>, config: RoomConfig) -> Self {
        Self {
            room_id: room_id.into(),
            agents: BTreeMap::new(),
            history: Vec::new(),
            logical_clock: 0,
            rng_seed: config.master_seed,
            config,
        }
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentState> {
        self.agents.get(id)
    }

    /// The last `n` events, oldest first.
    pub fn recent_history(&self, n: usize) -> &[Event] {
        let start = self.history.len().saturating_sub(n);
        &self.history[start..]
    }

    pub fn event(&self, id: u64) -> Option<&Event> {
        // ids are dense and assigned in history order
        self.history
            .binary_search_by_key(&id, |e| e.event_id)
            .ok()
            .map(|i| &self.history[i])
    }
}
