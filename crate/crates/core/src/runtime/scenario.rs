//! Scenario files: a room line followed by one line per agent.
//!
//! ```text
//! {"type":"room","room_id":"party","heartbeat_period":40}
//! {"type":"agent","agent_id":"A","display_name":"Aiko","owner":"player-a","heartbeat_offset":5,"relationships":{"B":0}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, AgentState, EmotionState, RoomState};
use crate::rng::derive_seed;
use crate::runtime::RoomConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario has no room line")]
    MissingRoom,
    #[error("duplicate agent {0}")]
    DuplicateAgent(AgentId),
    #[error("agent {agent} has a relationship to unknown agent {peer}")]
    UnknownPeer { agent: AgentId, peer: AgentId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub agent_id: AgentId,
    pub display_name: String,
    #[serde(default)]
    pub emotion: EmotionState,
    #[serde(default)]
    pub owner: Option<String>,
    #[serde(default)]
    pub heartbeat_offset: Option<u64>,
    #[serde(default)]
    pub relationships: BTreeMap<AgentId, i64>,
    /// Driven by a harness rather than a player.
    #[serde(default)]
    pub harness_driven: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ScenarioLine {
    Room {
        room_id: String,
        #[serde(default)]
        heartbeat_period: Option<u64>,
    },
    Agent(ScenarioAgent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room_id: String,
    pub heartbeat_period: Option<u64>,
    pub agents: Vec<ScenarioAgent>,
}

impl Scenario {
    pub fn parse_jsonl(text: &str) -> Result<Self, ScenarioError> {
        let mut room: Option<(String, Option<u64>)> = None;
        let mut agents: Vec<ScenarioAgent> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScenarioLine = serde_json::from_str(line).map_err(|e| ScenarioError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                ScenarioLine::Room {
                    room_id,
                    heartbeat_period,
                } => room = Some((room_id, heartbeat_period)),
                ScenarioLine::Agent(a) => {
                    if agents.iter().any(|b| b.agent_id == a.agent_id) {
                        return Err(ScenarioError::DuplicateAgent(a.agent_id));
                    }
                    agents.push(a);
                }
            }
        }
        let (room_id, heartbeat_period) = room.ok_or(ScenarioError::MissingRoom)?;
        for a in &agents {
            for peer in a.relationships.keys() {
                if !agents.iter().any(|b| &b.agent_id == peer) {
                    return Err(ScenarioError::UnknownPeer {
                        agent: a.agent_id.clone(),
                        peer: peer.clone(),
                    });
                }
            }
        }
        Ok(Self {
            room_id,
            heartbeat_period,
            agents,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_jsonl(&text)
    }

    /// The shipped five-agent party room.
    pub fn party() -> Self {
        Self::parse_jsonl(include_str!("../../fixtures/party_scenario.jsonl")).expect("shipped scenario parses")
    }

    /// Initial room state. Per-agent RNG seeds derive from `config.master_seed`.
    pub fn build_state(&self, mut config: RoomConfig) -> RoomState {
        if let Some(p) = self.heartbeat_period {
            config.heartbeat_period = p;
        }
        let period = config.heartbeat_period;
        let master = config.master_seed;
        let mut room = RoomState::new(self.room_id.clone(), config);
        for a in &self.agents {
            let mut state = AgentState::new(a.agent_id.clone(), a.display_name.clone());
            state.emotion = a.emotion;
            state.owner = a.owner.clone();
            state.heartbeat_period = period;
            state.next_heartbeat = a.heartbeat_offset.unwrap_or(period);
            state.rng_seed = derive_seed(master, &format!("agent/{}", a.agent_id));
            for (peer, score) in &a.relationships {
                state.adjust_relationship(peer, *score);
            }
            room.agents.insert(a.agent_id.clone(), state);
        }
        room
    }
}
