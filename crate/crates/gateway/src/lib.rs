//! WebSocket gateway, wire protocol and the `bounded` operator CLI.

pub mod cli;
pub mod protocol;
pub mod room_loop;
pub mod server;
pub mod session;
