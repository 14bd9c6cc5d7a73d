use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::link::Micros;
use crate::control::InstallReason;
use crate::engine::{ChairAction, DropReason};
use crate::model::{ClientId, LinkKey, ReflectorId, RoomId};
use crate::supervisor::HealthState;

pub type PacketId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkDropCause {
    Loss,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    ReflectorUp {
        reflector: ReflectorId,
    },
    Registered {
        reflector: ReflectorId,
    },
    RegisterFailed {
        reflector: ReflectorId,
        error: String,
    },
    Killed {
        reflector: ReflectorId,
    },
    Expired {
        reflector: ReflectorId,
    },
    Snapshot {
        epoch: u64,
        reflectors: usize,
        links: usize,
    },
    Inject {
        packet: PacketId,
        client: ClientId,
        room: RoomId,
        reflector: ReflectorId,
        bytes: usize,
    },
    InjectSkipped {
        client: ClientId,
        reason: String,
    },
    Blocked {
        packet: PacketId,
        reason: DropReason,
    },
    Deliver {
        packet: PacketId,
        client: ClientId,
        reflector: ReflectorId,
        hops: usize,
    },
    LinkDrop {
        packet: PacketId,
        link: LinkKey,
        cause: LinkDropCause,
    },
    DeadDrop {
        packet: PacketId,
        reflector: ReflectorId,
    },
    Loop {
        packet: PacketId,
        reflector: ReflectorId,
    },
    CorruptFrame {
        reflector: ReflectorId,
        error: String,
    },
    RoutingInstalled {
        epoch: u64,
        reason: InstallReason,
        tree_edges: usize,
        acked: usize,
        failed: Vec<ReflectorId>,
    },
    Resynced {
        reflector: ReflectorId,
        epoch: u64,
    },
    HealthChanged {
        reflector: ReflectorId,
        state: HealthState,
    },
    RestartIssued {
        reflector: ReflectorId,
        attempt: u32,
    },
    RestartFailed {
        reflector: ReflectorId,
        attempt: u32,
    },
    Restarted {
        reflector: ReflectorId,
    },
    Notify {
        reflector: ReflectorId,
        reason: String,
        recipients: Vec<String>,
    },
    LinkChanged {
        link: LinkKey,
        latency_ms: f64,
        loss: f64,
        up: bool,
    },
    Partition {
        side: BTreeSet<ReflectorId>,
        cut: usize,
    },
    Heal {
        restored: usize,
    },
    Chair {
        room: RoomId,
        control: ChairAction,
        applied: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_us: Micros,
    #[serde(flatten)]
    pub ev: TraceEvent,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}

/// Running SHA-256 over the trace, one JSON line at a time.
#[derive(Clone, Debug, Default)]
pub struct TraceHasher {
    hasher: Sha256,
    lines: u64,
}

impl TraceHasher {
    pub fn push(&mut self, line: &str) {
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines += 1;
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn hex(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

#[derive(Clone, Debug, Default)]
struct PacketRecord {
    expected: BTreeSet<ClientId>,
    delivered: BTreeMap<ClientId, u32>,
}

/// Delivery bookkeeping: who should get each packet, who actually did.
#[derive(Clone, Debug, Default)]
pub struct DeliveryChecker {
    packets: BTreeMap<PacketId, PacketRecord>,
    loops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub packets: u64,
    pub expected: u64,
    pub delivered: u64,
    pub missed: u64,
    pub duplicates: u64,
    /// Deliveries to clients that were not room members at injection.
    pub unexpected: u64,
    pub loops: u64,
}

impl DeliveryChecker {
    pub fn injected(&mut self, packet: PacketId, expected: BTreeSet<ClientId>) {
        self.packets.insert(
            packet,
            PacketRecord {
                expected,
                delivered: BTreeMap::new(),
            },
        );
    }

    pub fn delivered(&mut self, packet: PacketId, client: ClientId) {
        if let Some(rec) = self.packets.get_mut(&packet) {
            *rec.delivered.entry(client).or_default() += 1;
        }
    }

    pub fn looped(&mut self) {
        self.loops += 1;
    }

    pub fn report(&self) -> DeliveryReport {
        let mut r = DeliveryReport {
            packets: self.packets.len() as u64,
            loops: self.loops,
            ..Default::default()
        };
        for rec in self.packets.values() {
            r.expected += rec.expected.len() as u64;
            for c in &rec.expected {
                if !rec.delivered.contains_key(c) {
                    r.missed += 1;
                }
            }
            for (c, &n) in &rec.delivered {
                r.delivered += u64::from(n);
                r.duplicates += u64::from(n.saturating_sub(1));
                if !rec.expected.contains(c) {
                    r.unexpected += 1;
                }
            }
        }
        r
    }

    /// Per-packet delivery sets, for comparing two runs.
    pub fn delivery_sets(&self) -> BTreeMap<PacketId, BTreeSet<ClientId>> {
        self.packets
            .iter()
            .map(|(&id, rec)| (id, rec.delivered.keys().copied().collect()))
            .collect()
    }
}
