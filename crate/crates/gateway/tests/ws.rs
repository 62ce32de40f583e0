use std::sync::Arc;
use std::time::Duration;

use bounded_core::harness::Fixtures;
use bounded_core::model::{EventKind, Source};
use bounded_core::runtime::{Room, RoomConfig};
use bounded_gateway::protocol::*;
use bounded_gateway::room_loop::{Pacing, RoomHandle};
use bounded_gateway::server;
use bounded_gateway::session::Gateway;
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

async fn start() -> String {
    let f = Fixtures::shipped();
    let room = Room::new(f.scenario.build_state(RoomConfig::default()), f.catalog, f.embedder, f.policy).unwrap();
    let gw = Arc::new(Gateway::new([RoomHandle::spawn(
        room,
        Pacing::Tick(Duration::from_millis(10)),
        20,
    )]));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(server::serve(listener, gw));
    format!("ws://{addr}/ws")
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn send(ws: &mut Ws, m: &ClientMessage) {
    ws.send(Message::text(serde_json::to_string(m).unwrap())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server went quiet")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = frame {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn whisper_round_trip_over_websocket() {
    let url = start().await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();

    send(&mut ws, &ClientMessage::new("party", "player-a", ClientBody::Join)).await;
    let first = recv(&mut ws).await;
    assert!(matches!(first.body, ServerBody::Snapshot(_)), "{first:?}");

    let body = ClientBody::Whisper(WhisperPayload {
        agent_id: "A".into(),
        target_id: Some("B".into()),
        text: "compliment their outfit".into(),
    });
    send(&mut ws, &ClientMessage::new("party", "player-a", body)).await;

    let mut id = None;
    let mut saw_whisper = false;
    let mut last_event = 0;
    for _ in 0..500 {
        let m = recv(&mut ws).await;
        match m.body {
            ServerBody::Ack(a) => id = a.event_id,
            ServerBody::Event(e) => {
                assert!(e.event_id > last_event || last_event == 0, "events out of order");
                last_event = e.event_id;
                if Some(e.event_id) == id {
                    assert_eq!(e.source, Source::INJECTED);
                    assert_eq!(e.kind, EventKind::Whisper);
                    saw_whisper = true;
                } else if saw_whisper && e.reply_to == id {
                    assert_eq!(e.actor.as_str(), "B");
                    return;
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    panic!("no steered reply seen");
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_frames_get_error_replies() {
    let url = start().await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    ws.send(Message::text("{not json")).await.unwrap();
    let m = recv(&mut ws).await;
    let ServerBody::Error(e) = m.body else { panic!("{m:?}") };
    assert_eq!(e.code, ErrorCode::BadRequest);

    send(&mut ws, &ClientMessage::new("party", "player-a", ClientBody::SnapshotRequest)).await;
    let m = recv(&mut ws).await;
    let ServerBody::Error(e) = m.body else { panic!("{m:?}") };
    assert_eq!(e.code, ErrorCode::NotJoined);
}
