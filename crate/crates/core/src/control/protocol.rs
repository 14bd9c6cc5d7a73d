//! Newline-delimited JSON control protocol. Every line is one object carrying
//! `v` (always 3) and `kind`; see `protocol.md` at the repository root.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TopologySnapshot;
use crate::engine::{ChairAction, RoutingTable};
use crate::model::{ClientId, LinkStats, Millis, ReflectorId, RoomId};
use crate::monitor::MetricSample;
use crate::quality::QualityFactor;

pub const PROTOCOL_VERSION: u8 = 3;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported protocol version {0}")]
    BadVersion(u64),
    #[error("missing protocol version")]
    MissingVersion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Register {
        reflector: ReflectorId,
        control_address: String,
        region: String,
        at: Millis,
    },
    Heartbeat {
        reflector: ReflectorId,
        at: Millis,
    },
    Deregister {
        reflector: ReflectorId,
    },
    Advertise {
        reflector: ReflectorId,
        rooms: BTreeSet<RoomId>,
    },
    LinkReport {
        reflector: ReflectorId,
        stats: LinkStats,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quality: Option<QualityFactor>,
    },
    InstallRouting {
        epoch: u64,
        reflector: ReflectorId,
        table: RoutingTable,
    },
    /// A request when `snapshot` is absent, a reply or push otherwise.
    Snapshot {
        epoch: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snapshot: Option<TopologySnapshot>,
    },
    Subscribe {
        filter: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reflectors: Option<BTreeSet<ReflectorId>>,
        #[serde(default)]
        min_interval_ms: Millis,
        #[serde(default)]
        topology: bool,
    },
    Event {
        sample: MetricSample,
    },
    Join {
        client: ClientId,
        room: RoomId,
        #[serde(default)]
        endpoint: String,
    },
    Leave {
        client: ClientId,
        room: RoomId,
    },
    Chair {
        room: RoomId,
        action: ChairAction,
    },
    Probe {
        nonce: u64,
    },
    ProbeReply {
        reflector: ReflectorId,
        nonce: u64,
        epoch: u64,
    },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epoch: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Message {
    pub fn ack() -> Self {
        Message::Ack {
            epoch: None,
            detail: None,
        }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        Message::Error {
            code: code.into(),
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    v: u8,
    #[serde(flatten)]
    msg: &'a Message,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    v: Option<u64>,
    #[serde(flatten)]
    msg: Message,
}

/// One protocol line, including the trailing newline.
pub fn encode_line(msg: &Message) -> String {
    let mut s = serde_json::to_string(&EnvelopeOut {
        v: PROTOCOL_VERSION,
        msg,
    })
    .expect("control messages always serialize");
    s.push('\n');
    s
}

pub fn decode_line(line: &str) -> Result<Message, ProtocolError> {
    let env: EnvelopeIn = serde_json::from_str(line.trim_end_matches(['\r', '\n']))?;
    match env.v {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => Ok(env.msg),
        Some(v) => Err(ProtocolError::BadVersion(v)),
        None => Err(ProtocolError::MissingVersion),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_line() {
        let line = encode_line(&Message::Heartbeat {
            reflector: ReflectorId(4),
            at: 1000,
        });
        assert_eq!(line, "{\"v\":3,\"kind\":\"heartbeat\",\"reflector\":4,\"at\":1000}\n");
        assert_eq!(
            decode_line(&line).unwrap(),
            Message::Heartbeat {
                reflector: ReflectorId(4),
                at: 1000
            }
        );
    }

    #[test]
    fn version_checked() {
        assert!(matches!(
            decode_line(r#"{"v":2,"kind":"probe","nonce":1}"#),
            Err(ProtocolError::BadVersion(2))
        ));
        assert!(matches!(
            decode_line(r#"{"kind":"probe","nonce":1}"#),
            Err(ProtocolError::MissingVersion)
        ));
        assert!(matches!(decode_line("garbage"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(
            decode_line(r#"{"v":3,"kind":"nonsense"}"#),
            Err(ProtocolError::Malformed(_))
        ));
    }
}
