//! Wire protocol: one JSON object per WebSocket text frame.
//!
//! Client to server:
//!
//! ```text
//! {"schema_version":1,"room_id":"party","player_id":"player-a","type":"join"}
//! {"schema_version":1,"room_id":"party","player_id":"player-a","type":"whisper",
//!  "payload":{"agent_id":"A","target_id":"B","text":"compliment them"}}
//! {"schema_version":1,"room_id":"party","player_id":"player-a","type":"trigger",
//!  "payload":{"agent_id":"A","bundle_id":"talk.comfort","target_id":"B"}}
//! {"schema_version":1,"room_id":"party","player_id":"player-a","type":"snapshot_request"}
//! ```
//!
//! Server to client: `event`, `snapshot`, `ack` and `error`, each carrying
//! `schema_version` and a `payload`.

use std::fmt;

use bounded_core::model::{AgentId, BundleId, Event};
use bounded_core::runtime::RoomSnapshot;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhisperPayload {
    pub agent_id: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<AgentId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerPayload {
    pub agent_id: AgentId,
    pub bundle_id: BundleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientBody {
    Join,
    Whisper(WhisperPayload),
    Trigger(TriggerPayload),
    SnapshotRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub schema_version: u32,
    pub room_id: String,
    pub player_id: String,
    #[serde(flatten)]
    pub body: ClientBody,
}

impl ClientMessage {
    pub fn new(room_id: impl Into<String>, player_id: impl Into<String>, body: ClientBody) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            room_id: room_id.into(),
            player_id: player_id.into(),
            body,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.body {
            ClientBody::Join => "join",
            ClientBody::Whisper(_) => "whisper",
            ClientBody::Trigger(_) => "trigger",
            ClientBody::SnapshotRequest => "snapshot_request",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    UnsupportedSchema,
    UnknownRoom,
    UnknownAgent,
    UnknownBundle,
    NotOwner,
    NotJoined,
    InvalidWhisper,
    InvalidTrigger,
    RoomUnavailable,
    /// The session fell behind the room broadcast and missed events.
    Lagged,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("error code serializes");
        f.write_str(s.as_str().unwrap_or("error"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckPayload {
    /// The request kind being acknowledged.
    pub request: String,
    /// Id the resulting source-0 event will carry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    Event(Event),
    Snapshot(RoomSnapshot),
    Error(ErrorPayload),
    Ack(AckPayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: ServerBody,
}

impl ServerMessage {
    pub fn new(body: ServerBody) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Self::new(ServerBody::Error(ErrorPayload {
            code,
            message: message.into(),
        }))
    }

    pub fn ack(request: &str, event_id: Option<u64>) -> Self {
        Self::new(ServerBody::Ack(AckPayload {
            request: request.to_string(),
            event_id,
        }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn join_wire_shape() {
        let m = ClientMessage::new("party", "player-a", ClientBody::Join);
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"schema_version":1,"room_id":"party","player_id":"player-a","type":"join"})
        );
    }

    #[test]
    fn whisper_parses_from_text() {
        let text = r#"{"schema_version":1,"room_id":"party","player_id":"p","type":"whisper","payload":{"agent_id":"A","text":"hi"}}"#;
        let m: ClientMessage = serde_json::from_str(text).unwrap();
        assert_eq!(
            m.body,
            ClientBody::Whisper(WhisperPayload {
                agent_id: AgentId::from("A"),
                target_id: None,
                text: "hi".into(),
            })
        );
    }

    #[test]
    fn error_shape() {
        let v: serde_json::Value =
            serde_json::from_str(&ServerMessage::error(ErrorCode::UnknownBundle, "no such bundle").to_json()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["payload"]["code"], "unknown_bundle");
        assert_eq!(ErrorCode::NotOwner.to_string(), "not_owner");
    }
}
