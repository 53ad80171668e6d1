//! Process boundary of the handover simulator: config file, wire protocol,
//! live sessions, the WebSocket server and trial-log persistence.

pub mod config;
pub mod protocol;
pub mod server;
pub mod session;
