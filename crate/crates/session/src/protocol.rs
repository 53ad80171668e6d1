//! Versioned JSON messages exchanged with clients, one message per frame.
//!
//! Server to client: `{"v", "tick", "type", "payload"}` with `type` one of
//! `hello`, `snapshot`, `ack`, `error`, `trial_ended`. Client to server:
//! `{"v", "type": "command", "payload": <command>}`.

use std::path::PathBuf;

use handover_core::config::{HandPolicyKind, TrialCondition};
use handover_core::kinematics::ArmModel;
use handover_core::log::TrialSummary;
use handover_core::perception::CubeModel;
use handover_core::sim::{Command, CommandError};
use handover_core::snapshot::StateSnapshot;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub tick: u64,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    Hello(Box<Hello>),
    Snapshot(Box<StateSnapshot>),
    /// The command was applied at `tick`; the snapshot of that tick follows.
    Ack(Ack),
    Error(ErrorReply),
    TrialEnded(Box<TrialEnded>),
}

/// Sent once on connect and again whenever the trial is rebuilt. Clients
/// derive link geometry from `arm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol: u32,
    pub condition: TrialCondition,
    pub policy: HandPolicyKind,
    pub seed: u64,
    pub dt: f64,
    pub decimation: u32,
    /// Replays refuse every command.
    pub read_only: bool,
    pub arm: ArmModel,
    pub cube: CubeModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Unparseable message, wrong version or unknown type.
    ProtoError,
    /// Well formed but not allowed in the current phase.
    PhaseError,
    /// Well formed but unusable, such as a non-finite pose.
    InvalidCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorReply {
    pub fn from_command_error(e: &CommandError) -> Self {
        let code = match e {
            CommandError::Phase { .. } => ErrorCode::PhaseError,
            CommandError::Invalid(_) | CommandError::SessionLevel => ErrorCode::InvalidCommand,
        };
        ErrorReply { code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEnded {
    pub summary: TrialSummary,
    pub log_path: Option<PathBuf>,
}

impl ServerMessage {
    pub fn new(tick: u64, body: ServerBody) -> Self {
        ServerMessage { v: PROTOCOL_VERSION, tick, body }
    }

    pub fn snapshot(s: StateSnapshot) -> Self {
        Self::new(s.tick, ServerBody::Snapshot(Box::new(s)))
    }

    pub fn error(tick: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        Self::new(tick, ServerBody::Error(ErrorReply { code, message: message.into() }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    #[serde(flatten)]
    pub body: ClientBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientBody {
    Command(Command),
}

impl ClientMessage {
    pub fn command(c: Command) -> Self {
        ClientMessage { v: PROTOCOL_VERSION, body: ClientBody::Command(c) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol version {found} is not supported (expected {PROTOCOL_VERSION})")]
    Version { found: u64 },
}

/// Decodes one client frame. The version is checked before the shape so a
/// newer client gets a version error rather than a parse error.
pub fn parse_client(text: &str) -> Result<Command, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(found) => return Err(ProtocolError::Version { found }),
        None => return Err(ProtocolError::Malformed("missing integer field `v`".into())),
    }
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match msg.body {
        ClientBody::Command(c) => Ok(c),
    }
}
