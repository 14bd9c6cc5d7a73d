//! Reflector overlay for multi-party video conferencing: the wire codec,
//! per-reflector forwarding engine, registry and routing control plane,
//! link quality filtering, tree optimizer, monitoring, supervision and a
//! deterministic network simulator that runs all of it together.

pub mod codec;
pub mod control;
pub mod engine;
pub mod export;
pub mod model;
pub mod monitor;
pub mod optimizer;
pub mod quality;
pub mod queue;
pub mod sim;
pub mod supervisor;

pub use model::{ClientId, LinkKey, LinkStats, MediaPacket, Millis, PayloadType, ReflectorId, RoomId};
