use std::collections::BTreeMap;

use bounded_core::model::Event;
use bounded_core::runtime::{RuntimeError, Trigger};
use bounded_core::whisper::{Whisper, WhisperError};
use tokio::sync::broadcast;

use crate::protocol::{ClientBody, ClientMessage, ErrorCode, ServerBody, ServerMessage, SCHEMA_VERSION};
use crate::room_loop::{RoomHandle, RoomLoopError};

/// Per-connection state. A session joins one room as one player.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Session {
    pub room_id: Option<String>,
    pub player_id: Option<String>,
}

/// Reply to one client message, plus the event subscription a join opens.
pub struct Handled {
    pub reply: ServerMessage,
    pub subscription: Option<broadcast::Receiver<Event>>,
}

impl Handled {
    fn reply(reply: ServerMessage) -> Self {
        Self {
            reply,
            subscription: None,
        }
    }
}

/// Routes client messages to room loops. Holds no room state of its own.
pub struct Gateway {
    rooms: BTreeMap<String, RoomHandle>,
}

fn runtime_error(e: RoomLoopError) -> ServerMessage {
    let code = match &e {
        RoomLoopError::Closed => ErrorCode::RoomUnavailable,
        RoomLoopError::Runtime(r) => match r {
            RuntimeError::UnknownAgent(_) => ErrorCode::UnknownAgent,
            RuntimeError::UnknownBundle(_) => ErrorCode::UnknownBundle,
            RuntimeError::Whisper(WhisperError::UnknownAgent(_)) => ErrorCode::UnknownAgent,
            RuntimeError::Whisper(WhisperError::NotOwner { .. }) => ErrorCode::NotOwner,
            RuntimeError::Whisper(_) => ErrorCode::InvalidWhisper,
            RuntimeError::BundleFiltered(_) | RuntimeError::Contract(_) => ErrorCode::InvalidTrigger,
            RuntimeError::Config(_) | RuntimeError::Trace(_) => ErrorCode::RoomUnavailable,
        },
    };
    ServerMessage::error(code, e.to_string())
}

impl Gateway {
    pub fn new(rooms: impl IntoIterator<Item = RoomHandle>) -> Self {
        Self {
            rooms: rooms.into_iter().map(|r| (r.room_id().to_string(), r)).collect(),
        }
    }

    pub fn room(&self, id: &str) -> Option<&RoomHandle> {
        self.rooms.get(id)
    }

    pub fn room_ids(&self) -> impl Iterator<Item = &str> {
        self.rooms.keys().map(String::as_str)
    }

    pub async fn handle_client_message(&self, session: &mut Session, msg: ClientMessage) -> Handled {
        if msg.schema_version != SCHEMA_VERSION {
            return Handled::reply(ServerMessage::error(
                ErrorCode::UnsupportedSchema,
                format!("schema_version {} is not supported; use {SCHEMA_VERSION}", msg.schema_version),
            ));
        }
        let Some(room) = self.rooms.get(&msg.room_id) else {
            return Handled::reply(ServerMessage::error(
                ErrorCode::UnknownRoom,
                format!("unknown room {}", msg.room_id),
            ));
        };
        if !matches!(msg.body, ClientBody::Join)
            && (session.room_id.as_deref() != Some(msg.room_id.as_str())
                || session.player_id.as_deref() != Some(msg.player_id.as_str()))
        {
            return Handled::reply(ServerMessage::error(
                ErrorCode::NotJoined,
                format!("join room {} as {} first", msg.room_id, msg.player_id),
            ));
        }
        let kind = msg.kind();
        match msg.body {
            ClientBody::Join => match room.join().await {
                Ok((snapshot, rx)) => {
                    session.room_id = Some(msg.room_id);
                    session.player_id = Some(msg.player_id);
                    Handled {
                        reply: ServerMessage::new(ServerBody::Snapshot(snapshot)),
                        subscription: Some(rx),
                    }
                }
                Err(e) => Handled::reply(runtime_error(e)),
            },
            ClientBody::SnapshotRequest => match room.snapshot().await {
                Ok(s) => Handled::reply(ServerMessage::new(ServerBody::Snapshot(s))),
                Err(e) => Handled::reply(runtime_error(e)),
            },
            ClientBody::Whisper(p) => {
                let w = Whisper {
                    player_id: msg.player_id,
                    agent_id: p.agent_id,
                    target_id: p.target_id,
                    text: p.text,
                    logical_time: 0,
                };
                match room.whisper(w).await {
                    Ok(id) => Handled::reply(ServerMessage::ack(kind, Some(id))),
                    Err(e) => Handled::reply(runtime_error(e)),
                }
            }
            ClientBody::Trigger(p) => {
                match room.owners().get(&p.agent_id) {
                    None => {
                        return Handled::reply(ServerMessage::error(
                            ErrorCode::UnknownAgent,
                            format!("unknown agent {}", p.agent_id),
                        ))
                    }
                    Some(Some(owner)) if owner != &msg.player_id => {
                        return Handled::reply(ServerMessage::error(
                            ErrorCode::NotOwner,
                            format!("player {} does not own agent {}", msg.player_id, p.agent_id),
                        ))
                    }
                    Some(_) => {}
                }
                let t = Trigger {
                    player_id: Some(msg.player_id),
                    agent_id: p.agent_id,
                    bundle_id: p.bundle_id,
                    target_id: p.target_id,
                };
                match room.trigger(t).await {
                    Ok(id) => Handled::reply(ServerMessage::ack(kind, Some(id))),
                    Err(e) => Handled::reply(runtime_error(e)),
                }
            }
        }
    }
}
