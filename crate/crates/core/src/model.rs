//! Identifiers and value types shared by every part of the overlay.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Milliseconds. Wall-clock in daemon mode, virtual time in simulation.
pub type Millis = u64;

/// Accepts an id as a JSON number or, as map keys arrive, a decimal string.
struct IdVisitor;

impl serde::de::Visitor<'_> for IdVisitor {
    type Value = u32;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a u32 id")
    }

    fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<u32, E> {
        u32::try_from(v).map_err(|_| E::invalid_value(serde::de::Unexpected::Unsigned(v), &self))
    }

    fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<u32, E> {
        u32::try_from(v).map_err(|_| E::invalid_value(serde::de::Unexpected::Signed(v), &self))
    }

    fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<u32, E> {
        v.parse().map_err(|_| E::invalid_value(serde::de::Unexpected::Str(v), &self))
    }
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                d.deserialize_any(IdVisitor).map(Self)
            }
        }

        impl $name {
            /// The reserved "none" value.
            pub const NONE: Self = Self(0);

            pub fn get(self) -> u32 {
                self.0
            }

            pub fn is_none(self) -> bool {
                self.0 == 0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(
    /// A reflector (relay server) in the overlay.
    ReflectorId,
    "R"
);
id_type!(
    /// A conferencing client, unique within its home reflector.
    ClientId,
    "c"
);
id_type!(
    /// A virtual room.
    RoomId,
    "r"
);

/// Codec tag carried in the packet header. The payload itself is never inspected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PayloadType {
    Opaque = 0,
    VideoH261 = 1,
    AudioG711u = 2,
}

impl PayloadType {
    pub fn from_u8(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Opaque),
            1 => Some(Self::VideoH261),
            2 => Some(Self::AudioG711u),
            _ => None,
        }
    }

    pub fn is_audio(self) -> bool {
        matches!(self, Self::AudioG711u)
    }

    pub fn is_video(self) -> bool {
        matches!(self, Self::VideoH261)
    }
}

/// A room-scoped media unit relayed by reflectors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MediaPacket {
    pub room: RoomId,
    pub src: ClientId,
    pub seq: u32,
    pub timestamp_ms: u32,
    pub payload_type: PayloadType,
    pub flags: u8,
    pub payload: Vec<u8>,
}

impl MediaPacket {
    /// Size of the packet on the wire.
    pub fn wire_len(&self) -> usize {
        crate::codec::HEADER_LEN + self.payload.len()
    }
}

/// An unordered reflector pair, stored with the smaller id first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(ReflectorId, ReflectorId)")]
pub struct LinkKey(ReflectorId, ReflectorId);

impl LinkKey {
    pub fn new(a: ReflectorId, b: ReflectorId) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn low(self) -> ReflectorId {
        self.0
    }

    pub fn high(self) -> ReflectorId {
        self.1
    }

    pub fn contains(self, r: ReflectorId) -> bool {
        self.0 == r || self.1 == r
    }

    /// The endpoint opposite `r`, if `r` is an endpoint.
    pub fn other(self, r: ReflectorId) -> Option<ReflectorId> {
        if self.0 == r {
            Some(self.1)
        } else if self.1 == r {
            Some(self.0)
        } else {
            None
        }
    }

    pub fn is_self_loop(self) -> bool {
        self.0 == self.1
    }
}

impl TryFrom<(ReflectorId, ReflectorId)> for LinkKey {
    type Error = String;

    fn try_from((a, b): (ReflectorId, ReflectorId)) -> Result<Self, Self::Error> {
        if a == b {
            return Err(format!("link endpoints must differ, got {a} twice"));
        }
        Ok(Self::new(a, b))
    }
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// One measurement of a peer link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub link: LinkKey,
    pub rtt_ms: f64,
    pub loss_fraction: f64,
    pub capacity_kbps: f64,
    pub sampled_at: Millis,
}

impl LinkStats {
    /// Checks the range invariants on the measured values.
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.loss_fraction)
            && self.rtt_ms >= 0.0
            && self.capacity_kbps >= 0.0
            && !self.link.is_self_loop()
    }
}
