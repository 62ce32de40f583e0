//! JSONL trace: one header line, then one line per emitted event or recorded
//! decision. Lines are buffered per round and flushed at round end.
//!
//! ```text
//! {"type":"header","schema_version":1,"room_id":"party",...}
//! {"type":"record","event":{...},"priority":"B","decay":{...},...}
//! {"type":"decision","logical_time":7,"agent":"B","decision":{"kind":"decay_stop",...}}
//! ```

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converge::{DecayDraw, LockDecision};
use crate::ground::Grounding;
use crate::model::{AgentId, AgentState, BundleId, EmotionState, Event, PoolKind, PriorityClass};
use crate::policy::PolicyFailure;
use crate::runtime::RoomConfig;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub room_id: String,
    pub config: RoomConfig,
    pub agents: BTreeMap<AgentId, AgentState>,
    pub policy_id: String,
    pub embedder_model: String,
}

/// Compact view of one grounding decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingNote {
    pub pool: PoolKind,
    pub intent: String,
    pub chosen: BundleId,
    pub similarity: f64,
    pub fell_back: bool,
    pub threshold: f64,
    pub ranked: Vec<(BundleId, f64)>,
}

impl From<&Grounding> for GroundingNote {
    fn from(g: &Grounding) -> Self {
        Self {
            pool: g.pool,
            intent: g.intent.clone(),
            chosen: g.chosen.bundle.id.clone(),
            similarity: g.chosen.similarity,
            fell_back: g.chosen.fell_back,
            threshold: g.threshold,
            ranked: g.ranked.iter().map(|m| (m.bundle.id.clone(), m.similarity)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationshipUpdate {
    pub from: AgentId,
    pub to: AgentId,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub event: Event,
    pub priority: PriorityClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayDraw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lock: Option<LockDecision>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grounding: Vec<GroundingNote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relationship_updates: Vec<RelationshipUpdate>,
    #[serde(default)]
    pub dialogue_attempts: u32,
    #[serde(default)]
    pub dialogue_suppressed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStatus {
    Active,
    /// The last continuation draw failed with nothing left pending.
    Natural,
    DepthCap,
    EventCeiling,
    /// Every pending stimulus ended in a policy or grounding failure.
    PolicyFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    InputQueued { event_id: u64, input: String },
    InputRejected { reason: String },
    DecayStop { stimulus: u64, draw: DecayDraw },
    LockRejected { stimulus: u64 },
    StimulusDropped { stimulus: u64, chosen: u64 },
    PolicyFailed { stimulus: Option<u64>, failure: PolicyFailure },
    GroundingFailed { stimulus: Option<u64>, error: String },
    DialogueFailed { event_id: u64, failure: PolicyFailure },
    HeartbeatDeferred { reason: String },
    Superseded { event_id: u64, by: u64 },
    ChainEnded { root: u64, status: ChainStatus, max_source: u32 },
    RoomHalted { events: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub logical_time: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Record(TraceRecord),
    Decision(DecisionRecord),
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace line serializes")
    }
}

pub trait TraceSink: Send {
    fn append(&mut self, line: &TraceLine) -> io::Result<()>;
    fn flush(&mut self) -> io::Result<()>;
}

/// Writes JSONL to any writer.
pub struct JsonlSink<W: Write + Send> {
    writer: W,
}

impl<W: Write + Send> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write + Send> TraceSink for JsonlSink<W> {
    fn append(&mut self, line: &TraceLine) -> io::Result<()> {
        self.writer.write_all(line.to_json().as_bytes())?;
        self.writer.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Keeps lines in memory; used by trials and tests.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub lines: Vec<String>,
}

impl MemorySink {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }
}

impl TraceSink for MemorySink {
    fn append(&mut self, line: &TraceLine) -> io::Result<()> {
        self.lines.push(line.to_json());
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("trace has no header line")]
    MissingHeader,
    #[error("line {line}: unsupported schema version {version}")]
    Version { line: usize, version: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-agent state a trace determines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayAgent {
    pub emotion: EmotionState,
    pub relationship: BTreeMap<AgentId, i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayState {
    pub room_id: String,
    pub agents: BTreeMap<AgentId, ReplayAgent>,
    pub history: Vec<Event>,
    pub chains: BTreeMap<u64, ChainStatus>,
    pub halted: bool,
}

impl ReplayState {
    fn from_header(h: &TraceHeader) -> Self {
        Self {
            room_id: h.room_id.clone(),
            agents: h
                .agents
                .iter()
                .map(|(id, a)| {
                    (
                        id.clone(),
                        ReplayAgent {
                            emotion: a.emotion,
                            relationship: a.relationship.clone(),
                        },
                    )
                })
                .collect(),
            history: Vec::new(),
            chains: BTreeMap::new(),
            halted: false,
        }
    }
}

/// Rebuilds the final room state from a trace.
pub fn replay(reader: impl BufRead) -> Result<ReplayState, ReplayError> {
    let mut state: Option<ReplayState> = None;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| ReplayError::Corrupt {
            line: n,
            message: e.to_string(),
        })?;
        match parsed {
            TraceLine::Header(h) => {
                if h.schema_version != TRACE_SCHEMA_VERSION {
                    return Err(ReplayError::Version {
                        line: n,
                        version: h.schema_version,
                    });
                }
                state = Some(ReplayState::from_header(&h));
            }
            TraceLine::Record(r) => {
                let st = state.as_mut().ok_or(ReplayError::MissingHeader)?;
                for u in &r.relationship_updates {
                    let agent = st.agents.get_mut(&u.from).ok_or_else(|| ReplayError::Corrupt {
                        line: n,
                        message: format!("unknown agent {}", u.from),
                    })?;
                    if u.from != u.to && u.delta != 0 {
                        *agent.relationship.entry(u.to.clone()).or_insert(0) += u.delta;
                    }
                }
                if let Some(last) = st.history.last() {
                    if (last.logical_time, last.event_id) >= (r.event.logical_time, r.event.event_id) {
                        return Err(ReplayError::Corrupt {
                            line: n,
                            message: format!("event {} out of order", r.event.event_id),
                        });
                    }
                }
                st.history.push(r.event);
            }
            TraceLine::Decision(d) => {
                let st = state.as_mut().ok_or(ReplayError::MissingHeader)?;
                match d.decision {
                    Decision::Superseded { event_id, .. } => {
                        if let Some(e) = st.history.iter_mut().find(|e| e.event_id == event_id) {
                            e.superseded = true;
                        }
                    }
                    Decision::ChainEnded { root, status, .. } => {
                        st.chains.insert(root, status);
                    }
                    Decision::RoomHalted { .. } => st.halted = true,
                    _ => {}
                }
            }
        }
    }
    state.ok_or(ReplayError::MissingHeader)
}
