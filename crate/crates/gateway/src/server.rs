use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use bounded_core::model::Event;
use tokio::net::TcpListener;
use tokio::sync::broadcast::{self, error::RecvError};

use crate::protocol::{ClientMessage, ErrorCode, ServerBody, ServerMessage};
use crate::session::{Gateway, Session};

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(gateway)
}

pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(gateway): State<Arc<Gateway>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session_loop(socket, gateway))
}

async fn next_event(sub: &mut Option<broadcast::Receiver<Event>>) -> Result<Event, RecvError> {
    match sub {
        Some(rx) => rx.recv().await,
        None => std::future::pending().await,
    }
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn session_loop(mut socket: WebSocket, gateway: Arc<Gateway>) {
    let mut session = Session::default();
    let mut sub: Option<broadcast::Receiver<Event>> = None;
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<ClientMessage>(text.as_str()) {
                    Ok(msg) => {
                        let handled = gateway.handle_client_message(&mut session, msg).await;
                        if let Some(rx) = handled.subscription {
                            sub = Some(rx);
                        }
                        handled.reply
                    }
                    Err(e) => ServerMessage::error(ErrorCode::BadRequest, e.to_string()),
                };
                if !send(&mut socket, &reply).await {
                    return;
                }
            }
            event = next_event(&mut sub) => {
                let msg = match event {
                    Ok(e) => ServerMessage::new(ServerBody::Event(e)),
                    Err(RecvError::Lagged(n)) => ServerMessage::error(ErrorCode::Lagged, format!("missed {n} events; request a snapshot")),
                    Err(RecvError::Closed) => {
                        sub = None;
                        ServerMessage::error(ErrorCode::RoomUnavailable, "room stopped")
                    }
                };
                if !send(&mut socket, &msg).await {
                    return;
                }
            }
        }
    }
}
