//! Pluggable behavior generation.
//!
//! A backend proposes bundle names (never bundle ids) from a serialized room
//! context; everything it returns is grounded before execution.

mod mock;
mod remote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockPolicy, MockRule, MockRuleSet};
pub use remote::{RemotePolicy, RemotePolicyConfig};

use crate::converge::is_duplicate_dialogue;
use crate::embed::Embedder;
use crate::model::{AgentId, AgentState, BehaviorBundle, Event, PriorityClass, RoomState};

/// Events included in a context by default.
pub const HISTORY_WINDOW: usize = 20;

pub const POLICY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum PolicyFailure {
    #[error("policy request timed out")]
    Timeout,
    #[error("policy transport error: {0}")]
    Transport(String),
    #[error("malformed policy response: {0}")]
    Malformed(String),
    #[error("policy precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Whisper,
    Event,
    Heartbeat,
}

/// What is driving the current decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub kind: StimulusKind,
    pub priority: PriorityClass,
    /// Whisper text, or the name of the incoming bundle.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<Event>,
    /// Agent the response is addressed to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub room_id: String,
    pub logical_time: u64,
    pub acting_agent: AgentId,
    pub agents: BTreeMap<AgentId, AgentState>,
    /// Oldest first.
    pub history: Vec<Event>,
    pub stimulus: Stimulus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<String>,
}

impl PolicyContext {
    pub fn build(room: &RoomState, acting_agent: &AgentId, stimulus: Stimulus, window: usize) -> Self {
        Self {
            room_id: room.room_id.clone(),
            logical_time: room.logical_clock,
            acting_agent: acting_agent.clone(),
            agents: room.agents.clone(),
            history: room.recent_history(window).to_vec(),
            stimulus,
            persona: None,
        }
    }

    pub fn display_name(&self, id: &AgentId) -> String {
        self.agents
            .get(id)
            .map_or_else(|| id.to_string(), |a| a.display_name.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyProposal {
    /// Empty for purely self-directed proposals.
    #[serde(default)]
    pub talk_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nontalk_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Free-text intent for a self-directed action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_intent: Option<String>,
    /// Addressee chosen by the policy when the stimulus names none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<AgentId>,
}

impl PolicyProposal {
    pub fn validate(&self) -> Result<(), PolicyFailure> {
        let has_self = self.self_intent.as_deref().is_some_and(|s| !s.trim().is_empty());
        if self.talk_name.trim().is_empty() && !has_self {
            return Err(PolicyFailure::Malformed("missing talk_name".into()));
        }
        Ok(())
    }

    pub fn is_self_directed(&self) -> bool {
        self.talk_name.trim().is_empty() && self.self_intent.is_some()
    }
}

/// Grounded bundles a line of dialogue is generated for.
#[derive(Debug, Clone, Copy)]
pub struct DialoguePair<'a> {
    pub talk: &'a BehaviorBundle,
    pub nontalk: Option<&'a BehaviorBundle>,
}

pub trait PolicyBackend: Send + Sync {
    fn id(&self) -> &str;

    fn propose(&self, context: &PolicyContext) -> Result<PolicyProposal, PolicyFailure>;

    /// `attempt` is 0 for the first try and 1 for the post-dedup retry.
    fn generate_dialogue(
        &self,
        context: &PolicyContext,
        pair: DialoguePair<'_>,
        attempt: u32,
    ) -> Result<String, PolicyFailure>;
}

impl<P: PolicyBackend + ?Sized> PolicyBackend for std::sync::Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn propose(&self, context: &PolicyContext) -> Result<PolicyProposal, PolicyFailure> {
        (**self).propose(context)
    }

    fn generate_dialogue(
        &self,
        context: &PolicyContext,
        pair: DialoguePair<'_>,
        attempt: u32,
    ) -> Result<String, PolicyFailure> {
        (**self).generate_dialogue(context, pair, attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueOutcome {
    /// `None` when both attempts were duplicates.
    pub text: Option<String>,
    pub attempts: u32,
    pub suppressed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupConfig {
    pub window: u64,
    pub threshold: f64,
}

/// Generates dialogue, regenerating once on a duplicate and suppressing the
/// line if the retry is a duplicate too.
pub fn generate_dialogue_dedup(
    backend: &dyn PolicyBackend,
    context: &PolicyContext,
    pair: DialoguePair<'_>,
    recent: &[(String, u64)],
    dedup: DedupConfig,
    embedder: &dyn Embedder,
) -> Result<DialogueOutcome, PolicyFailure> {
    if !pair.talk.is_dialogue_action() {
        return Err(PolicyFailure::Precondition(format!("{} is not a dialogue action", pair.talk.id)));
    }
    for attempt in 0..2 {
        let text = backend.generate_dialogue(context, pair, attempt)?;
        let dup = is_duplicate_dialogue(&text, recent, context.logical_time, dedup.window, embedder, dedup.threshold)
            .map_err(|e| PolicyFailure::Transport(format!("dedup embedding: {e}")))?;
        if !dup {
            return Ok(DialogueOutcome {
                text: Some(text),
                attempts: attempt + 1,
                suppressed: false,
            });
        }
    }
    Ok(DialogueOutcome {
        text: None,
        attempts: 2,
        suppressed: true,
    })
}
