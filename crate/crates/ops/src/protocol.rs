//! Wire messages. Every frame carries the protocol version `v`.
//!
//! Client to server:
//! `{"v":1,"id":7,"op":"command","command":{"kind":"get_map"}}`,
//! `{"v":1,"id":8,"op":"subscribe","after":0}`, `{"v":1,"id":9,"op":"unsubscribe"}`.
//!
//! Server to client, tagged by `type`: `response` (with `ok` or `error`),
//! `subscribed`, `event` and `overflow`.

use ronda_core::{Command, CommandError, ErrorCode, Reply, StateEvent};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Command { command: Command },
    /// Stream events numbered above `after`, then the live tail.
    Subscribe {
        #[serde(default)]
        after: u64,
    },
    Unsubscribe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Response {
        v: u32,
        /// Absent only when the request was too malformed to carry one.
        id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ok: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<CommandError>,
    },
    Subscribed {
        v: u32,
        id: u64,
        /// Latest sequence number at the moment of subscribing.
        last_seq: u64,
        /// Some requested events are no longer retained.
        gap: bool,
    },
    Event {
        v: u32,
        event: StateEvent,
    },
    /// Sent just before the server drops a subscriber that fell behind.
    Overflow {
        v: u32,
        message: String,
    },
}

impl Request {
    pub fn command(id: u64, command: Command) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            op: Op::Command { command },
        }
    }

    pub fn subscribe(id: u64, after: u64) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            op: Op::Subscribe { after },
        }
    }
}

impl ServerMessage {
    pub fn reply(id: Option<u64>, reply: Reply) -> Self {
        let (ok, error) = match reply {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e)),
        };
        ServerMessage::Response {
            v: PROTOCOL_VERSION,
            id,
            ok,
            error,
        }
    }

    pub fn invalid(id: Option<u64>, message: impl Into<String>) -> Self {
        Self::reply(id, Err(CommandError::new(ErrorCode::Invalid, message)))
    }

    pub fn event(event: StateEvent) -> Self {
        ServerMessage::Event {
            v: PROTOCOL_VERSION,
            event,
        }
    }

    /// The reply carried by a response, if this is one.
    pub fn into_reply(self) -> Option<(Option<u64>, Reply)> {
        match self {
            ServerMessage::Response { id, ok, error, .. } => {
                let reply = match error {
                    Some(e) => Err(e),
                    None => Ok(ok.unwrap_or(Value::Null)),
                };
                Some((id, reply))
            }
            _ => None,
        }
    }
}

/// Checks version and shape of a raw frame. On failure returns the error
/// response to send, echoing the request id when one could be read.
pub fn parse_request(raw: Value) -> Result<Request, ServerMessage> {
    let id = raw.get("id").and_then(Value::as_u64);
    match raw.get("v").and_then(Value::as_u64) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(ServerMessage::invalid(id, format!("unsupported protocol version {v}"))),
        None => return Err(ServerMessage::invalid(id, "missing protocol version field v")),
    }
    if id.is_none() {
        return Err(ServerMessage::invalid(None, "missing or non-integer request id"));
    }
    serde_json::from_value(raw).map_err(|e| ServerMessage::invalid(id, format!("malformed request: {e}")))
}
