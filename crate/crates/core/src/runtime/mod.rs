//! The room engine: a logical clock advanced in rounds by a single writer.
//!
//! Each round delivers pending external inputs (priority A), then lets every
//! agent answer at most one reply stimulus (priority B, agents in id order,
//! later agents see replies emitted earlier in the same round), then fires
//! due heartbeats (priority C). Safety bounds are checked once, at round end.

pub mod config;
pub mod scenario;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{mpsc, Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{RoomConfig, DEFAULT_HEARTBEAT_TICKS};
pub use scenario::{Scenario, ScenarioAgent, ScenarioError};
pub use trace::{
    replay, ChainStatus, Decision, DecisionRecord, GroundingNote, JsonlSink, MemorySink, RelationshipUpdate,
    ReplayError, ReplayState, TraceHeader, TraceLine, TraceRecord, TraceSink, TRACE_SCHEMA_VERSION,
};

use crate::catalog::BundleCatalog;
use crate::converge::{
    draw_continuation, release_talk_lock, select_reply_stimulus, try_acquire_talk_lock, DecayDraw, LockDecision,
    StimulusCandidate,
};
use crate::embed::Embedder;
use crate::ground::{filter_candidates, ground_pair, ground_self, Grounding};
use crate::model::{
    classify_priority, next_source, AgentId, BundleId, BundlePair, ContractViolation, Event, EventKind, PoolKind,
    PriorityClass, RoomState, Source,
};
use crate::policy::{
    generate_dialogue_dedup, DialoguePair, PolicyBackend, PolicyContext, PolicyFailure, Stimulus, StimulusKind,
};
use crate::rng::DrawStream;
use crate::whisper::{plan_whisper, DialogueRequest, PlannedAction, PlannedBehavior, Whisper, WhisperError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown bundle {0}")]
    UnknownBundle(BundleId),
    #[error("bundle {0} is not allowed for this agent")]
    BundleFiltered(BundleId),
    #[error(transparent)]
    Contract(#[from] ContractViolation),
    #[error(transparent)]
    Whisper(#[from] WhisperError),
    #[error("invalid room config: {0}")]
    Config(String),
    #[error("trace write failed: {0}")]
    Trace(#[from] std::io::Error),
}

/// A player trigger invoking a bundle directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player_id: Option<String>,
    pub agent_id: AgentId,
    pub bundle_id: BundleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq)]
enum ExternalInput {
    Injected(Event),
    Whisper { event_id: u64, whisper: Whisper },
    Trigger { event_id: u64, trigger: Trigger },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub root: u64,
    pub max_source: u32,
    /// Stimuli of this chain waiting to be answered.
    pub pending: u32,
    pub status: ChainStatus,
}

/// How an executed plan is recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecMeta {
    pub kind: EventKind,
    pub event_id: Option<u64>,
    pub reply_to: Option<u64>,
    pub chain_root: Option<u64>,
    pub whisper_text: Option<String>,
    pub decay: Option<DecayDraw>,
    pub lock: Option<LockDecision>,
    /// The event starts a new interaction chain.
    pub starts_chain: bool,
}

impl ExecMeta {
    pub fn new(kind: EventKind) -> Self {
        Self {
            kind,
            event_id: None,
            reply_to: None,
            chain_root: None,
            whisper_text: None,
            decay: None,
            lock: None,
            starts_chain: false,
        }
    }
}

/// What a newly joined client sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSnapshot {
    pub room_id: String,
    pub logical_clock: u64,
    pub agents: BTreeMap<AgentId, crate::model::AgentState>,
    pub recent_events: Vec<Event>,
    pub halted: bool,
}

impl<T: TraceSink> TraceSink for Arc<Mutex<T>> {
    fn append(&mut self, line: &TraceLine) -> std::io::Result<()> {
        self.lock().expect("trace sink poisoned").append(line)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.lock().expect("trace sink poisoned").flush()
    }
}

pub struct Room {
    state: RoomState,
    catalog: Arc<BundleCatalog>,
    embedder: Arc<dyn Embedder>,
    policy: Arc<dyn PolicyBackend>,
    inputs: VecDeque<ExternalInput>,
    stimuli: BTreeMap<AgentId, Vec<u64>>,
    rngs: BTreeMap<AgentId, DrawStream>,
    chains: BTreeMap<u64, ChainState>,
    /// Chains whose last stimulus was consumed this round, with the status
    /// they end with unless a safety bound applies.
    ending: BTreeMap<u64, ChainStatus>,
    utterances: BTreeMap<AgentId, Vec<(String, u64)>>,
    next_event_id: u64,
    halted: bool,
    buffer: Vec<TraceLine>,
    sink: Option<Box<dyn TraceSink>>,
    subscribers: Vec<mpsc::Sender<Event>>,
    round_events: Vec<Event>,
}

impl Room {
    pub fn new(
        state: RoomState,
        catalog: Arc<BundleCatalog>,
        embedder: Arc<dyn Embedder>,
        policy: Arc<dyn PolicyBackend>,
    ) -> Result<Self, RuntimeError> {
        state.config.validate().map_err(RuntimeError::Config)?;
        let rngs = state
            .agents
            .values()
            .map(|a| (a.agent_id.clone(), DrawStream::from_seed(a.rng_seed)))
            .collect();
        let next_event_id = state.history.last().map_or(1, |e| e.event_id + 1);
        Ok(Self {
            state,
            catalog,
            embedder,
            policy,
            inputs: VecDeque::new(),
            stimuli: BTreeMap::new(),
            rngs,
            chains: BTreeMap::new(),
            ending: BTreeMap::new(),
            utterances: BTreeMap::new(),
            next_event_id,
            halted: false,
            buffer: Vec::new(),
            sink: None,
            subscribers: Vec::new(),
            round_events: Vec::new(),
        })
    }

    /// Attaches a trace sink and writes the header. Attach before the first
    /// round so replay starts from the initial state.
    pub fn with_sink(mut self, mut sink: Box<dyn TraceSink>) -> Result<Self, RuntimeError> {
        sink.append(&TraceLine::Header(self.header()))?;
        sink.flush()?;
        self.sink = Some(sink);
        Ok(self)
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            room_id: self.state.room_id.clone(),
            config: self.state.config.clone(),
            agents: self.state.agents.clone(),
            policy_id: self.policy.id().to_string(),
            embedder_model: self.embedder.model_id().to_string(),
        }
    }

    pub fn state(&self) -> &RoomState {
        &self.state
    }

    pub fn catalog(&self) -> &BundleCatalog {
        &self.catalog
    }

    pub fn chains(&self) -> &BTreeMap<u64, ChainState> {
        &self.chains
    }

    pub fn chain(&self, root: u64) -> Option<&ChainState> {
        self.chains.get(&root)
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Stimuli currently waiting for `agent`.
    pub fn pending_stimuli(&self, agent: &AgentId) -> &[u64] {
        self.stimuli.get(agent).map_or(&[], Vec::as_slice)
    }

    pub fn has_pending_work(&self) -> bool {
        !self.inputs.is_empty() || self.stimuli.values().any(|s| !s.is_empty())
    }

    pub fn subscribe(&mut self) -> mpsc::Receiver<Event> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.push(tx);
        rx
    }

    pub fn snapshot(&self, window: usize) -> RoomSnapshot {
        RoomSnapshot {
            room_id: self.state.room_id.clone(),
            logical_clock: self.state.logical_clock,
            agents: self.state.agents.clone(),
            recent_events: self.state.recent_history(window).to_vec(),
            halted: self.halted,
        }
    }

    /// Agent state and history in the shape replay reconstructs.
    pub fn replay_view(&self) -> ReplayState {
        ReplayState {
            room_id: self.state.room_id.clone(),
            agents: self
                .state
                .agents
                .iter()
                .map(|(id, a)| {
                    (
                        id.clone(),
                        trace::ReplayAgent {
                            emotion: a.emotion,
                            relationship: a.relationship.clone(),
                        },
                    )
                })
                .collect(),
            history: self.state.history.clone(),
            chains: self
                .chains
                .iter()
                .filter(|(_, c)| c.status != ChainStatus::Active)
                .map(|(r, c)| (*r, c.status))
                .collect(),
            halted: self.halted,
        }
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_event_id;
        self.next_event_id += 1;
        id
    }

    fn decide(&mut self, agent: Option<&AgentId>, decision: Decision) {
        self.buffer.push(TraceLine::Decision(DecisionRecord {
            logical_time: self.state.logical_clock,
            agent: agent.cloned(),
            decision,
        }));
    }

    fn require_agent(&self, id: &AgentId) -> Result<(), RuntimeError> {
        self.state
            .agent(id)
            .map(|_| ())
            .ok_or_else(|| RuntimeError::UnknownAgent(id.clone()))
    }

    /// Queues a source-0 social event for the next round. Returns its event id.
    pub fn inject_event(&mut self, mut e: Event) -> Result<u64, RuntimeError> {
        if e.source != Source::INJECTED {
            return Err(ContractViolation::new(format!("injected events must have source 0, got {}", e.source)).into());
        }
        if e.kind != EventKind::InjectedSocial {
            return Err(ContractViolation::new(format!("injected event kind must be injected_social, got {:?}", e.kind)).into());
        }
        self.require_agent(&e.actor)?;
        let target = e
            .target
            .clone()
            .ok_or_else(|| ContractViolation::new("injected social event needs a target"))?;
        self.require_agent(&target)?;
        if let Some(pair) = &e.bundle_pair {
            for id in std::iter::once(&pair.primary).chain(pair.accompanying.as_ref()) {
                if self.catalog.get(id).is_none() {
                    return Err(RuntimeError::UnknownBundle(id.clone()));
                }
            }
        }
        e.validate()?;
        let id = self.alloc_id();
        e.event_id = id;
        self.decide(
            Some(&e.actor.clone()),
            Decision::InputQueued {
                event_id: id,
                input: "injected_social".into(),
            },
        );
        self.inputs.push_back(ExternalInput::Injected(e));
        Ok(id)
    }

    /// Queues a whisper for the next round. Returns the id its event will carry.
    pub fn submit_whisper(&mut self, whisper: Whisper) -> Result<u64, RuntimeError> {
        whisper.validate(&self.state)?;
        let id = self.alloc_id();
        self.decide(
            Some(&whisper.agent_id.clone()),
            Decision::InputQueued {
                event_id: id,
                input: "whisper".into(),
            },
        );
        self.inputs.push_back(ExternalInput::Whisper { event_id: id, whisper });
        Ok(id)
    }

    /// Validates and queues a direct bundle trigger.
    pub fn submit_trigger(&mut self, trigger: Trigger) -> Result<u64, RuntimeError> {
        let agent = self
            .state
            .agent(&trigger.agent_id)
            .ok_or_else(|| RuntimeError::UnknownAgent(trigger.agent_id.clone()))?;
        let bundle = self
            .catalog
            .get(&trigger.bundle_id)
            .ok_or_else(|| RuntimeError::UnknownBundle(trigger.bundle_id.clone()))?;
        if filter_candidates(std::slice::from_ref(bundle), agent.emotion, &self.state.config.grounding).is_empty() {
            return Err(RuntimeError::BundleFiltered(bundle.id.clone()));
        }
        if bundle.pool != PoolKind::ToSelf {
            match &trigger.target_id {
                None => return Err(ContractViolation::new(format!("bundle {} needs a target", bundle.id)).into()),
                Some(t) if t == &trigger.agent_id => {
                    return Err(ContractViolation::new("a social bundle cannot target its actor").into())
                }
                Some(t) => self.require_agent(t)?,
            }
        }
        let id = self.alloc_id();
        self.decide(
            Some(&trigger.agent_id.clone()),
            Decision::InputQueued {
                event_id: id,
                input: "trigger".into(),
            },
        );
        self.inputs.push_back(ExternalInput::Trigger { event_id: id, trigger });
        Ok(id)
    }

    /// Advances the clock one tick and runs one round.
    pub fn advance_round(&mut self) -> Result<Vec<Event>, RuntimeError> {
        if self.halted {
            return Ok(Vec::new());
        }
        self.state.logical_clock += 1;
        let mut acted = BTreeSet::new();

        while let Some(input) = self.inputs.pop_front() {
            self.deliver(input, &mut acted);
        }
        let ids: Vec<AgentId> = self.state.agents.keys().cloned().collect();
        for id in &ids {
            self.respond(id, &mut acted);
        }
        for id in &ids {
            self.heartbeat(id, &mut acted);
        }
        self.end_round();
        self.flush()?;
        Ok(std::mem::take(&mut self.round_events))
    }

    /// Writes buffered trace lines and broadcasts buffered events.
    pub fn flush(&mut self) -> Result<(), RuntimeError> {
        let lines = std::mem::take(&mut self.buffer);
        for e in &self.round_events {
            self.subscribers.retain(|s| s.send(e.clone()).is_ok());
        }
        if let Some(sink) = self.sink.as_mut() {
            for line in &lines {
                sink.append(line)?;
            }
            sink.flush()?;
        }
        Ok(())
    }

    fn deliver(&mut self, input: ExternalInput, acted: &mut BTreeSet<AgentId>) {
        match input {
            ExternalInput::Injected(mut e) => {
                e.logical_time = self.state.logical_clock;
                e.chain_root = Some(e.event_id);
                let actor = e.actor.clone();
                let mut updates = Vec::new();
                if let (Some(pair), Some(target)) = (&e.bundle_pair, &e.target) {
                    let delta: i64 = std::iter::once(&pair.primary)
                        .chain(pair.accompanying.as_ref())
                        .filter_map(|id| self.catalog.get(id))
                        .map(|b| b.relationship_delta)
                        .sum();
                    if let Some(a) = self.state.agents.get_mut(&actor) {
                        if delta != 0 {
                            a.adjust_relationship(target, delta);
                            updates.push(RelationshipUpdate {
                                from: actor.clone(),
                                to: target.clone(),
                                delta,
                            });
                        }
                    }
                }
                let record = TraceRecord {
                    event: e.clone(),
                    priority: classify_priority(&e),
                    decay: None,
                    lock: None,
                    grounding: Vec::new(),
                    policy_id: None,
                    relationship_updates: updates,
                    dialogue_attempts: 0,
                    dialogue_suppressed: false,
                };
                self.emit(e, record, true);
                acted.insert(actor);
            }
            ExternalInput::Whisper { event_id, whisper } => {
                let agent = whisper.agent_id.clone();
                let plan = match plan_whisper(
                    &whisper,
                    &self.state,
                    self.policy.as_ref(),
                    self.embedder.as_ref(),
                    &self.catalog,
                    &self.state.config.grounding,
                ) {
                    Ok(p) => p,
                    Err(err) => {
                        self.decide(Some(&agent), Decision::InputRejected { reason: err.to_string() });
                        return;
                    }
                };
                if plan.policy_failed {
                    self.decide(
                        Some(&agent),
                        Decision::PolicyFailed {
                            stimulus: Some(event_id),
                            failure: PolicyFailure::Transport("whisper planned with safe default".into()),
                        },
                    );
                }
                let mut meta = ExecMeta::new(EventKind::Whisper);
                meta.event_id = Some(event_id);
                meta.whisper_text = Some(whisper.text.clone());
                meta.starts_chain = plan.target.is_some();
                self.execute_source_zero(plan, meta);
                acted.insert(agent);
            }
            ExternalInput::Trigger { event_id, trigger } => {
                let agent = trigger.agent_id.clone();
                let Some(bundle) = self.catalog.get(&trigger.bundle_id).cloned() else {
                    self.decide(
                        Some(&agent),
                        Decision::InputRejected {
                            reason: format!("unknown bundle {}", trigger.bundle_id),
                        },
                    );
                    return;
                };
                let grounding = Grounding::direct(bundle.clone());
                let (action, target) = if bundle.pool == PoolKind::ToSelf {
                    (PlannedAction::SelfAction { action: grounding }, None)
                } else {
                    (
                        PlannedAction::Pair {
                            talk: grounding,
                            nontalk: None,
                        },
                        trigger.target_id.clone(),
                    )
                };
                let dialogue_request = action.is_talk().then_some(DialogueRequest {
                    context: PolicyContext::build(
                        &self.state,
                        &agent,
                        Stimulus {
                            kind: StimulusKind::Event,
                            priority: PriorityClass::A,
                            text: bundle.name.clone(),
                            event: None,
                            target: target.clone(),
                        },
                        self.state.config.history_window,
                    ),
                    whisper_text: None,
                });
                let plan = PlannedBehavior {
                    actor: agent.clone(),
                    target: target.clone(),
                    action,
                    dialogue_request,
                    priority: PriorityClass::A,
                    source: Source::INJECTED,
                    proposal: None,
                    policy_failed: false,
                };
                let mut meta = ExecMeta::new(EventKind::Trigger);
                meta.event_id = Some(event_id);
                meta.starts_chain = target.is_some();
                self.execute_source_zero(plan, meta);
                acted.insert(agent);
            }
        }
    }

    /// Source-0 plans take the talk lock, interrupting any in-flight talk.
    fn execute_source_zero(&mut self, plan: PlannedBehavior, mut meta: ExecMeta) {
        let actor = plan.actor.clone();
        let event_id = meta.event_id.expect("source-0 inputs carry a preassigned id");
        if plan.action.is_talk() {
            let probe = Event {
                event_id,
                logical_time: self.state.logical_clock,
                actor: actor.clone(),
                target: plan.target.clone(),
                source: Source::INJECTED,
                kind: meta.kind,
                bundle_pair: None,
                dialogue: None,
                whisper_text: None,
                reply_to: None,
                chain_root: None,
                fell_back: false,
                superseded: false,
            };
            let agent = self.state.agents.get_mut(&actor).expect("validated agent");
            let decision = try_acquire_talk_lock(agent, &probe);
            if let LockDecision::Accepted { superseded: Some(old) } = decision {
                self.mark_superseded(old, event_id, &actor);
            }
            meta.lock = Some(decision);
        }
        let ev = self.execute_planned(plan, meta);
        if let Some(agent) = self.state.agents.get_mut(&actor) {
            if agent.is_talking() {
                agent.in_flight = Some(ev.event_id);
            }
        }
    }

    fn mark_superseded(&mut self, old: u64, by: u64, agent: &AgentId) {
        if let Ok(i) = self.state.history.binary_search_by_key(&old, |e| e.event_id) {
            self.state.history[i].superseded = true;
        }
        self.decide(Some(agent), Decision::Superseded { event_id: old, by });
    }

    /// Executes a grounded plan: generates dialogue for talk bundles, applies
    /// relationship deltas and emits the event.
    pub fn execute_planned(&mut self, plan: PlannedBehavior, meta: ExecMeta) -> Event {
        let now = self.state.logical_clock;
        let actor = plan.actor.clone();
        let (primary, accompanying) = match &plan.action {
            PlannedAction::Pair { talk, nontalk } => {
                (talk.chosen.bundle.clone(), nontalk.as_ref().map(|n| n.chosen.bundle.clone()))
            }
            PlannedAction::SelfAction { action } => (action.chosen.bundle.clone(), None),
        };
        let fell_back = plan.action.fell_back();
        let kind = if fell_back && !meta.kind.is_source_zero() {
            EventKind::Fallback
        } else {
            meta.kind
        };

        let mut dialogue = None;
        let mut attempts = 0;
        let mut suppressed = false;
        let mut dialogue_failure = None;
        if let (true, Some(req)) = (plan.action.is_talk(), &plan.dialogue_request) {
            let recent = self.utterances.get(&actor).cloned().unwrap_or_default();
            let pair = DialoguePair {
                talk: &primary,
                nontalk: accompanying.as_ref(),
            };
            match generate_dialogue_dedup(
                self.policy.as_ref(),
                &req.context,
                pair,
                &recent,
                self.state.config.dedup(),
                self.embedder.as_ref(),
            ) {
                Ok(out) => {
                    dialogue = out.text;
                    attempts = out.attempts;
                    suppressed = out.suppressed;
                }
                Err(f) => dialogue_failure = Some(f),
            }
        }

        let event_id = meta.event_id.unwrap_or_else(|| self.alloc_id());
        let chain_root = if meta.starts_chain { Some(event_id) } else { meta.chain_root };
        let event = Event {
            event_id,
            logical_time: now,
            actor: actor.clone(),
            target: plan.target.clone(),
            source: plan.source,
            kind,
            bundle_pair: Some(BundlePair {
                primary: primary.id.clone(),
                accompanying: accompanying.as_ref().map(|b| b.id.clone()),
            }),
            dialogue: dialogue.clone(),
            whisper_text: meta.whisper_text.clone(),
            reply_to: meta.reply_to,
            chain_root,
            fell_back,
            superseded: false,
        };
        debug_assert!(event.validate().is_ok(), "{:?}", event.validate());

        let mut updates = Vec::new();
        if let Some(target) = &plan.target {
            let delta = primary.relationship_delta + accompanying.as_ref().map_or(0, |b| b.relationship_delta);
            if delta != 0 && target != &actor {
                if let Some(a) = self.state.agents.get_mut(&actor) {
                    a.adjust_relationship(target, delta);
                }
                updates.push(RelationshipUpdate {
                    from: actor.clone(),
                    to: target.clone(),
                    delta,
                });
            }
        }
        if let Some(text) = &dialogue {
            let window = self.state.config.dedup_window;
            let list = self.utterances.entry(actor.clone()).or_default();
            list.retain(|(_, t)| t + window >= now);
            list.push((text.clone(), now));
        }

        let record = TraceRecord {
            event: event.clone(),
            priority: plan.priority,
            decay: meta.decay,
            lock: meta.lock,
            grounding: plan.action.groundings().into_iter().map(GroundingNote::from).collect(),
            policy_id: (plan.proposal.is_some() || plan.dialogue_request.is_some()).then(|| self.policy.id().to_string()),
            relationship_updates: updates,
            dialogue_attempts: attempts,
            dialogue_suppressed: suppressed,
        };
        self.emit(event.clone(), record, meta.starts_chain);
        if let Some(failure) = dialogue_failure {
            self.decide(Some(&actor), Decision::DialogueFailed { event_id, failure });
        }
        event
    }

    /// Appends an event to history, routes it as a stimulus and records it.
    fn emit(&mut self, event: Event, record: TraceRecord, starts_chain: bool) {
        if starts_chain {
            self.chains.insert(
                event.event_id,
                ChainState {
                    root: event.event_id,
                    max_source: event.source.get(),
                    pending: 0,
                    status: ChainStatus::Active,
                },
            );
        }
        if let Some(root) = event.chain_root {
            if let Some(chain) = self.chains.get_mut(&root) {
                chain.max_source = chain.max_source.max(event.source.get());
            }
        }
        self.state.history.push(event.clone());
        self.buffer.push(TraceLine::Record(record));
        self.route(&event);
        self.round_events.push(event);
    }

    fn route(&mut self, event: &Event) {
        let (Some(target), Some(root)) = (&event.target, event.chain_root) else {
            return;
        };
        if self.chains.get(&root).is_none_or(|c| c.status != ChainStatus::Active) {
            return;
        }
        let mut receivers = vec![target.clone()];
        let p = self.state.config.bystander_reply_prob;
        if p > 0.0 {
            let others: Vec<AgentId> = self
                .state
                .agents
                .keys()
                .filter(|id| *id != target && *id != &event.actor)
                .cloned()
                .collect();
            for b in others {
                let rng = self.rngs.get_mut(&b).expect("agent has a stream");
                if rng.next_unit() < p {
                    receivers.push(b);
                }
            }
        }
        for r in receivers {
            self.stimuli.entry(r).or_default().push(event.event_id);
            if let Some(chain) = self.chains.get_mut(&root) {
                chain.pending += 1;
            }
        }
        self.ending.remove(&root);
    }

    /// One stimulus of `root` has been used up without a reply.
    fn consume(&mut self, root: Option<u64>, status_if_last: ChainStatus) {
        let Some(root) = root else { return };
        if let Some(chain) = self.chains.get_mut(&root) {
            chain.pending = chain.pending.saturating_sub(1);
            if chain.pending == 0 && chain.status == ChainStatus::Active {
                self.ending.insert(root, status_if_last);
            }
        }
    }

    fn stimulus_text(&self, e: &Event) -> String {
        e.bundle_pair
            .as_ref()
            .and_then(|p| self.catalog.get(&p.primary))
            .map(|b| b.name.clone())
            .or_else(|| e.dialogue.clone())
            .unwrap_or_default()
    }

    fn respond(&mut self, id: &AgentId, acted: &mut BTreeSet<AgentId>) {
        let pending = match self.stimuli.get(id) {
            Some(p) if !p.is_empty() => p.clone(),
            _ => return,
        };
        if self.state.agents[id].is_talking() {
            for s in pending {
                self.decide(Some(id), Decision::LockRejected { stimulus: s });
            }
            return;
        }
        self.stimuli.remove(id);
        let agent = self.state.agents[id].clone();
        let candidates: Vec<StimulusCandidate> = pending
            .iter()
            .filter_map(|s| self.state.event(*s).cloned())
            .map(|e| StimulusCandidate::for_agent(&agent, e))
            .collect();
        let rng = self.rngs.get_mut(id).expect("agent has a stream");
        let Ok(chosen) = select_reply_stimulus(&agent, &candidates, rng) else {
            return;
        };
        let stim = candidates[chosen].event.clone();
        for (i, c) in candidates.iter().enumerate() {
            if i != chosen {
                self.decide(
                    Some(id),
                    Decision::StimulusDropped {
                        stimulus: c.event.event_id,
                        chosen: stim.event_id,
                    },
                );
                self.consume(c.event.chain_root, ChainStatus::Natural);
            }
        }

        let agent_mut = self.state.agents.get_mut(id).expect("agent exists");
        let lock = try_acquire_talk_lock(agent_mut, &stim);
        let decay = self.state.config.decay();
        let rng = self.rngs.get_mut(id).expect("agent has a stream");
        let draw = draw_continuation(stim.source, &decay, rng);
        if !draw.continued {
            release_talk_lock(self.state.agents.get_mut(id).expect("agent exists"));
            self.decide(
                Some(id),
                Decision::DecayStop {
                    stimulus: stim.event_id,
                    draw,
                },
            );
            self.consume(stim.chain_root, ChainStatus::Natural);
            return;
        }

        let stimulus = Stimulus {
            kind: StimulusKind::Event,
            priority: classify_priority(&stim),
            text: self.stimulus_text(&stim),
            event: Some(stim.clone()),
            target: Some(stim.actor.clone()),
        };
        let context = PolicyContext::build(&self.state, id, stimulus, self.state.config.history_window);
        let proposal = self.policy.propose(&context).and_then(|p| {
            p.validate()?;
            if p.talk_name.trim().is_empty() {
                return Err(PolicyFailure::Malformed("reply needs a talk_name".into()));
            }
            Ok(p)
        });
        let proposal = match proposal {
            Ok(p) => p,
            Err(failure) => {
                release_talk_lock(self.state.agents.get_mut(id).expect("agent exists"));
                self.decide(
                    Some(id),
                    Decision::PolicyFailed {
                        stimulus: Some(stim.event_id),
                        failure,
                    },
                );
                self.consume(stim.chain_root, ChainStatus::PolicyFailure);
                return;
            }
        };
        let grounded = ground_pair(
            &proposal.talk_name,
            proposal.nontalk_name.as_deref(),
            &self.catalog,
            agent.emotion,
            self.embedder.as_ref(),
            &self.state.config.grounding,
        );
        let (talk, nontalk) = match grounded {
            Ok(g) => g,
            Err(err) => {
                release_talk_lock(self.state.agents.get_mut(id).expect("agent exists"));
                self.decide(
                    Some(id),
                    Decision::GroundingFailed {
                        stimulus: Some(stim.event_id),
                        error: err.to_string(),
                    },
                );
                self.consume(stim.chain_root, ChainStatus::PolicyFailure);
                return;
            }
        };
        let plan = PlannedBehavior {
            actor: id.clone(),
            target: Some(stim.actor.clone()),
            dialogue_request: talk.chosen.bundle.is_dialogue_action().then_some(DialogueRequest {
                context,
                whisper_text: None,
            }),
            action: PlannedAction::Pair { talk, nontalk },
            priority: PriorityClass::B,
            source: next_source(stim.source),
            proposal: Some(proposal),
            policy_failed: false,
        };
        let meta = ExecMeta {
            kind: EventKind::Reply,
            event_id: None,
            reply_to: Some(stim.event_id),
            chain_root: stim.chain_root,
            whisper_text: None,
            decay: Some(draw),
            lock: Some(lock),
            starts_chain: false,
        };
        let ev = self.execute_planned(plan, meta);
        if let Some(a) = self.state.agents.get_mut(id) {
            a.in_flight = Some(ev.event_id);
        }
        self.consume(stim.chain_root, ChainStatus::Natural);
        acted.insert(id.clone());
    }

    fn heartbeat(&mut self, id: &AgentId, acted: &mut BTreeSet<AgentId>) {
        let now = self.state.logical_clock;
        let agent = &self.state.agents[id];
        if agent.next_heartbeat > now {
            return;
        }
        let reason = if acted.contains(id) {
            Some("acted this round")
        } else if agent.is_talking() {
            Some("talk lock held")
        } else if !self.pending_stimuli(id).is_empty() {
            Some("reply stimulus pending")
        } else {
            None
        };
        if let Some(reason) = reason {
            self.decide(Some(id), Decision::HeartbeatDeferred { reason: reason.into() });
            return;
        }
        let emotion = agent.emotion;
        let period = agent.heartbeat_period;
        self.state.agents.get_mut(id).expect("agent exists").next_heartbeat += period;

        let stimulus = Stimulus {
            kind: StimulusKind::Heartbeat,
            priority: PriorityClass::C,
            text: String::new(),
            event: None,
            target: None,
        };
        let context = PolicyContext::build(&self.state, id, stimulus, self.state.config.history_window);
        let proposal = match self.policy.propose(&context).and_then(|p| p.validate().map(|_| p)) {
            Ok(p) => p,
            Err(failure) => {
                self.decide(Some(id), Decision::PolicyFailed { stimulus: None, failure });
                return;
            }
        };
        let grounding = &self.state.config.grounding;
        let planned = if let Some(intent) = proposal.self_intent.clone().filter(|_| proposal.is_self_directed()) {
            ground_self(&intent, &self.catalog, emotion, self.embedder.as_ref(), grounding)
                .map(|action| (PlannedAction::SelfAction { action }, None))
        } else {
            match proposal.target_id.clone().filter(|t| t != id && self.state.agents.contains_key(t)) {
                Some(t) => ground_pair(
                    &proposal.talk_name,
                    proposal.nontalk_name.as_deref(),
                    &self.catalog,
                    emotion,
                    self.embedder.as_ref(),
                    grounding,
                )
                .map(|(talk, nontalk)| (PlannedAction::Pair { talk, nontalk }, Some(t))),
                None => {
                    self.decide(
                        Some(id),
                        Decision::PolicyFailed {
                            stimulus: None,
                            failure: PolicyFailure::Malformed("social heartbeat proposal without a valid target".into()),
                        },
                    );
                    return;
                }
            }
        };
        let (action, target) = match planned {
            Ok(x) => x,
            Err(err) => {
                self.decide(
                    Some(id),
                    Decision::GroundingFailed {
                        stimulus: None,
                        error: err.to_string(),
                    },
                );
                return;
            }
        };
        let mut meta = ExecMeta::new(EventKind::AutonomousAction);
        if action.is_talk() {
            let agent = self.state.agents.get_mut(id).expect("agent exists");
            // a heartbeat only fires when the lock is free
            meta.lock = Some(LockDecision::Accepted { superseded: None });
            agent.talk_state |= crate::model::TALK_EXECUTING;
        }
        meta.starts_chain = target.is_some();
        let plan = PlannedBehavior {
            actor: id.clone(),
            target,
            dialogue_request: action.is_talk().then_some(DialogueRequest {
                context,
                whisper_text: None,
            }),
            action,
            priority: PriorityClass::C,
            source: Source::AUTONOMOUS,
            proposal: Some(proposal),
            policy_failed: false,
        };
        let ev = self.execute_planned(plan, meta);
        if let Some(a) = self.state.agents.get_mut(id) {
            if a.is_talking() {
                a.in_flight = Some(ev.event_id);
            }
        }
        acted.insert(id.clone());
    }

    fn end_round(&mut self) {
        // dialogue has been emitted, so every talk lock is released
        for agent in self.state.agents.values_mut() {
            release_talk_lock(agent);
        }
        let cap = self.state.config.depth_cap;
        let ceiling_hit = self.state.history.len() >= self.state.config.event_ceiling;
        let roots: Vec<u64> = self.chains.keys().copied().collect();
        for root in roots {
            let chain = self.chains[&root];
            if chain.status != ChainStatus::Active {
                continue;
            }
            let tentative = self.ending.remove(&root);
            let status = if chain.max_source >= cap {
                Some(ChainStatus::DepthCap)
            } else if tentative.is_some() {
                tentative
            } else if ceiling_hit {
                Some(ChainStatus::EventCeiling)
            } else {
                None
            };
            if let Some(status) = status {
                self.end_chain(root, status);
            }
        }
        self.ending.clear();
        if ceiling_hit {
            self.halted = true;
            self.stimuli.clear();
            let events = self.state.history.len();
            self.decide(None, Decision::RoomHalted { events });
        }
    }

    fn end_chain(&mut self, root: u64, status: ChainStatus) {
        let chain = self.chains.get_mut(&root).expect("chain exists");
        chain.status = status;
        chain.pending = 0;
        let max_source = chain.max_source;
        let history = &self.state.history;
        for list in self.stimuli.values_mut() {
            list.retain(|s| {
                history
                    .binary_search_by_key(s, |e| e.event_id)
                    .map(|i| history[i].chain_root != Some(root))
                    .unwrap_or(true)
            });
        }
        self.stimuli.retain(|_, l| !l.is_empty());
        self.decide(
            None,
            Decision::ChainEnded {
                root,
                status,
                max_source,
            },
        );
    }
}

#[cfg(test)]
mod tests;
