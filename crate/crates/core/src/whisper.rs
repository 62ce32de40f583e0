//! Player soft steering through whispers.
//!
//! A whisper naming another agent goes through the policy and is grounded as
//! a bundle pair. Anything else is matched directly against the self pool.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::BundleCatalog;
use crate::embed::Embedder;
use crate::ground::{ground_pair, ground_self, ground_to_safe_default, Grounding, GroundingConfig, GroundingError};
use crate::model::{AgentId, PoolKind, PriorityClass, RoomState, Source};
use crate::policy::{PolicyBackend, PolicyContext, PolicyFailure, PolicyProposal, Stimulus, StimulusKind, HISTORY_WINDOW};

pub const WHISPER_MAX_CHARS: usize = 280;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WhisperError {
    #[error("whisper text is empty")]
    EmptyText,
    #[error("whisper text exceeds {WHISPER_MAX_CHARS} characters")]
    TooLong,
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("player {player} does not own agent {agent}")]
    NotOwner { player: String, agent: AgentId },
    #[error(transparent)]
    Policy(#[from] PolicyFailure),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Whisper {
    pub player_id: String,
    pub agent_id: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<AgentId>,
    pub text: String,
    #[serde(default)]
    pub logical_time: u64,
}

impl Whisper {
    /// Text and ownership checks. An agent without an owner accepts any player.
    pub fn validate(&self, room: &RoomState) -> Result<(), WhisperError> {
        if self.text.trim().is_empty() {
            return Err(WhisperError::EmptyText);
        }
        if self.text.chars().count() > WHISPER_MAX_CHARS {
            return Err(WhisperError::TooLong);
        }
        let agent = room
            .agent(&self.agent_id)
            .ok_or_else(|| WhisperError::UnknownAgent(self.agent_id.clone()))?;
        if let Some(target) = &self.target_id {
            if room.agent(target).is_none() {
                return Err(WhisperError::UnknownAgent(target.clone()));
            }
        }
        match &agent.owner {
            Some(owner) if owner != &self.player_id => Err(WhisperError::NotOwner {
                player: self.player_id.clone(),
                agent: self.agent_id.clone(),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhisperRoute {
    ToOther,
    ToSelf,
}

pub fn route_whisper(w: &Whisper) -> WhisperRoute {
    match &w.target_id {
        Some(t) if t != &w.agent_id => WhisperRoute::ToOther,
        _ => WhisperRoute::ToSelf,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PlannedAction {
    Pair { talk: Grounding, nontalk: Option<Grounding> },
    SelfAction { action: Grounding },
}

impl PlannedAction {
    pub fn fell_back(&self) -> bool {
        match self {
            PlannedAction::Pair { talk, .. } => talk.fell_back(),
            PlannedAction::SelfAction { action } => action.fell_back(),
        }
    }

    pub fn groundings(&self) -> Vec<&Grounding> {
        match self {
            PlannedAction::Pair { talk, nontalk } => std::iter::once(talk).chain(nontalk.as_ref()).collect(),
            PlannedAction::SelfAction { action } => vec![action],
        }
    }

    /// True when the executed primary bundle carries dialogue.
    pub fn is_talk(&self) -> bool {
        matches!(self, PlannedAction::Pair { talk, .. } if talk.chosen.bundle.is_dialogue_action())
    }
}

/// Context used to condition the dialogue line of a talk action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRequest {
    pub context: PolicyContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whisper_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedBehavior {
    pub actor: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<AgentId>,
    pub action: PlannedAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_request: Option<DialogueRequest>,
    pub priority: PriorityClass,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<PolicyProposal>,
    /// Set when the policy failed and the plan is the safe default.
    #[serde(default)]
    pub policy_failed: bool,
}

fn whisper_context(w: &Whisper, room: &RoomState) -> PolicyContext {
    let stimulus = Stimulus {
        kind: StimulusKind::Whisper,
        priority: PriorityClass::A,
        text: w.text.clone(),
        event: None,
        target: w.target_id.clone().filter(|t| t != &w.agent_id),
    };
    PolicyContext::build(room, &w.agent_id, stimulus, HISTORY_WINDOW)
}

fn emotion_of(room: &RoomState, agent: &AgentId) -> Result<crate::model::EmotionState, WhisperError> {
    room.agent(agent)
        .map(|a| a.emotion)
        .ok_or_else(|| WhisperError::UnknownAgent(agent.clone()))
}

/// Policy-guided path: propose a bundle pair, ground it, and request dialogue
/// conditioned on the whisper.
pub fn whisper_to_other(
    w: &Whisper,
    room: &RoomState,
    policy: &dyn PolicyBackend,
    embedder: &dyn Embedder,
    catalog: &BundleCatalog,
    config: &GroundingConfig,
) -> Result<PlannedBehavior, WhisperError> {
    let emotion = emotion_of(room, &w.agent_id)?;
    let context = whisper_context(w, room);
    let proposal = policy.propose(&context)?;
    proposal.validate()?;
    if proposal.talk_name.trim().is_empty() {
        return Err(PolicyFailure::Malformed("to-other whisper needs a talk_name".into()).into());
    }
    let (talk, nontalk) = ground_pair(
        &proposal.talk_name,
        proposal.nontalk_name.as_deref(),
        catalog,
        emotion,
        embedder,
        config,
    )?;
    let dialogue_request = talk.chosen.bundle.is_dialogue_action().then(|| DialogueRequest {
        context,
        whisper_text: Some(w.text.clone()),
    });
    Ok(PlannedBehavior {
        actor: w.agent_id.clone(),
        target: w.target_id.clone(),
        action: PlannedAction::Pair { talk, nontalk },
        dialogue_request,
        priority: PriorityClass::A,
        source: Source::INJECTED,
        proposal: Some(proposal),
        policy_failed: false,
    })
}

/// Plan used when the policy fails on a to-other whisper: the talk pool's
/// safe default, so the whisper still yields exactly one behavior.
pub fn whisper_fallback_plan(
    w: &Whisper,
    room: &RoomState,
    embedder: &dyn Embedder,
    catalog: &BundleCatalog,
    config: &GroundingConfig,
) -> Result<PlannedBehavior, WhisperError> {
    let emotion = emotion_of(room, &w.agent_id)?;
    let talk = ground_to_safe_default(&w.text, PoolKind::Talk, catalog, emotion, embedder, config)?;
    let dialogue_request = talk.chosen.bundle.is_dialogue_action().then(|| DialogueRequest {
        context: whisper_context(w, room),
        whisper_text: Some(w.text.clone()),
    });
    Ok(PlannedBehavior {
        actor: w.agent_id.clone(),
        target: w.target_id.clone(),
        action: PlannedAction::Pair { talk, nontalk: None },
        dialogue_request,
        priority: PriorityClass::A,
        source: Source::INJECTED,
        proposal: None,
        policy_failed: true,
    })
}

/// Direct path: match the whisper against the self pool. Never calls a policy.
pub fn whisper_to_self(
    w: &Whisper,
    room: &RoomState,
    embedder: &dyn Embedder,
    catalog: &BundleCatalog,
    config: &GroundingConfig,
) -> Result<PlannedBehavior, WhisperError> {
    let emotion = emotion_of(room, &w.agent_id)?;
    let action = ground_self(&w.text, catalog, emotion, embedder, config)?;
    Ok(PlannedBehavior {
        actor: w.agent_id.clone(),
        target: None,
        action: PlannedAction::SelfAction { action },
        dialogue_request: None,
        priority: PriorityClass::A,
        source: Source::INJECTED,
        proposal: None,
        policy_failed: false,
    })
}

/// Routes and plans a whisper. Policy failures on the to-other path degrade
/// to the safe-default plan instead of dropping the whisper.
pub fn plan_whisper(
    w: &Whisper,
    room: &RoomState,
    policy: &dyn PolicyBackend,
    embedder: &dyn Embedder,
    catalog: &BundleCatalog,
    config: &GroundingConfig,
) -> Result<PlannedBehavior, WhisperError> {
    match route_whisper(w) {
        WhisperRoute::ToSelf => whisper_to_self(w, room, embedder, catalog, config),
        WhisperRoute::ToOther => match whisper_to_other(w, room, policy, embedder, catalog, config) {
            Err(WhisperError::Policy(_)) => whisper_fallback_plan(w, room, embedder, catalog, config),
            other => other,
        },
    }
}
