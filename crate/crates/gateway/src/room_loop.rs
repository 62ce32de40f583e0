//! One thread per room. The room engine is the single writer; sessions talk
//! to it through a command channel and receive events over a broadcast.

use std::collections::BTreeMap;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bounded_core::model::{AgentId, Event};
use bounded_core::runtime::{Room, RoomSnapshot, RuntimeError, Trigger};
use bounded_core::whisper::Whisper;
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

/// Broadcast buffer per room; slower sessions get a `lagged` error.
const BROADCAST_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum RoomLoopError {
    #[error("room loop has stopped")]
    Closed,
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// Rounds advance only on `step`.
    Manual,
    /// One round per interval.
    Tick(Duration),
}

type Reply<T> = oneshot::Sender<T>;

enum Command {
    Whisper(Whisper, Reply<Result<u64, RuntimeError>>),
    Trigger(Trigger, Reply<Result<u64, RuntimeError>>),
    Join(Reply<(RoomSnapshot, broadcast::Receiver<Event>)>),
    Snapshot(Reply<RoomSnapshot>),
    Step(Reply<Result<Vec<Event>, RuntimeError>>),
    Shutdown,
}

pub struct RoomHandle {
    room_id: String,
    owners: BTreeMap<AgentId, Option<String>>,
    tx: mpsc::Sender<Command>,
    thread: Option<JoinHandle<()>>,
}

impl RoomHandle {
    /// Moves the room onto its own thread. Snapshots carry the last
    /// `snapshot_window` events.
    pub fn spawn(room: Room, pacing: Pacing, snapshot_window: usize) -> Self {
        let room_id = room.state().room_id.clone();
        let owners = room
            .state()
            .agents
            .iter()
            .map(|(id, a)| (id.clone(), a.owner.clone()))
            .collect();
        let (tx, rx) = mpsc::channel();
        let thread = std::thread::Builder::new()
            .name(format!("room-{room_id}"))
            .spawn(move || run(room, rx, pacing, snapshot_window))
            .expect("spawn room thread");
        Self {
            room_id,
            owners,
            tx,
            thread: Some(thread),
        }
    }

    pub fn room_id(&self) -> &str {
        &self.room_id
    }

    /// Agent owners, fixed at startup.
    pub fn owners(&self) -> &BTreeMap<AgentId, Option<String>> {
        &self.owners
    }

    async fn request<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, RoomLoopError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| RoomLoopError::Closed)?;
        rx.await.map_err(|_| RoomLoopError::Closed)
    }

    pub async fn whisper(&self, w: Whisper) -> Result<u64, RoomLoopError> {
        Ok(self.request(|r| Command::Whisper(w, r)).await??)
    }

    pub async fn trigger(&self, t: Trigger) -> Result<u64, RoomLoopError> {
        Ok(self.request(|r| Command::Trigger(t, r)).await??)
    }

    /// Snapshot and subscription taken atomically, so no event is missed or
    /// delivered twice.
    pub async fn join(&self) -> Result<(RoomSnapshot, broadcast::Receiver<Event>), RoomLoopError> {
        self.request(Command::Join).await
    }

    pub async fn snapshot(&self) -> Result<RoomSnapshot, RoomLoopError> {
        self.request(Command::Snapshot).await
    }

    /// Runs one round immediately.
    pub async fn step(&self) -> Result<Vec<Event>, RoomLoopError> {
        Ok(self.request(Command::Step).await??)
    }
}

impl Drop for RoomHandle {
    fn drop(&mut self) {
        let _ = self.tx.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn advance(room: &mut Room, events_tx: &broadcast::Sender<Event>) -> Result<Vec<Event>, RuntimeError> {
    let events = room.advance_round()?;
    for e in &events {
        // no subscribers is fine
        let _ = events_tx.send(e.clone());
    }
    Ok(events)
}

fn run(mut room: Room, rx: mpsc::Receiver<Command>, pacing: Pacing, window: usize) {
    let (events_tx, _) = broadcast::channel(BROADCAST_CAPACITY);
    let mut next_tick = match pacing {
        Pacing::Tick(d) => Some((Instant::now() + d, d)),
        Pacing::Manual => None,
    };
    loop {
        let cmd = match next_tick {
            None => match rx.recv() {
                Ok(c) => c,
                Err(_) => return,
            },
            Some((at, every)) => {
                let now = Instant::now();
                if now >= at {
                    if let Err(e) = advance(&mut room, &events_tx) {
                        tracing::error!(room = %room.state().room_id, error = %e, "round failed");
                    }
                    next_tick = Some((at + every, every));
                    continue;
                }
                match rx.recv_timeout(at - now) {
                    Ok(c) => c,
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            }
        };
        match cmd {
            Command::Whisper(w, reply) => {
                let _ = reply.send(room.submit_whisper(w));
            }
            Command::Trigger(t, reply) => {
                let _ = reply.send(room.submit_trigger(t));
            }
            Command::Join(reply) => {
                let _ = reply.send((room.snapshot(window), events_tx.subscribe()));
            }
            Command::Snapshot(reply) => {
                let _ = reply.send(room.snapshot(window));
            }
            Command::Step(reply) => {
                let _ = reply.send(advance(&mut room, &events_tx));
            }
            Command::Shutdown => return,
        }
    }
}
