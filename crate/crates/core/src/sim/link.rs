use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::LinkKey;

/// Virtual time in microseconds.
pub type Micros = u64;

/// Outcome of handing one packet to a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LinkOutcome {
    Deliver { at_us: Micros },
    Drop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLink {
    pub key: LinkKey,
    pub latency_us: Micros,
    pub loss_probability: f64,
    /// `None` means the link never limits throughput.
    pub bandwidth_kbps: Option<u64>,
    pub up: bool,
    /// Cut by a scripted partition; independent of `up`.
    pub partitioned: bool,
}

impl SimLink {
    pub fn new(key: LinkKey, latency_ms: f64) -> Self {
        Self {
            key,
            latency_us: ms_to_us(latency_ms),
            loss_probability: 0.0,
            bandwidth_kbps: None,
            up: true,
            partitioned: false,
        }
    }

    pub fn is_up(&self) -> bool {
        self.up && !self.partitioned
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency_us as f64 / 1000.0
    }

    /// Time to clock `bytes` onto the wire, rounded up to a whole microsecond.
    pub fn serialization_us(&self, bytes: usize) -> Micros {
        match self.bandwidth_kbps {
            None | Some(0) => 0,
            // kbit/s is bit/ms, so bits * 1000 / kbps is microseconds
            Some(kbps) => (bytes as u64 * 8 * 1000).div_ceil(kbps),
        }
    }

    /// Drops iff `draw < loss_probability`; `draw` is uniform in [0, 1).
    pub fn deliver_or_drop(&self, now_us: Micros, bytes: usize, draw: f64) -> Result<LinkOutcome, SimError> {
        if !self.is_up() {
            return Err(SimError::LinkDown(self.key));
        }
        if draw < self.loss_probability {
            return Ok(LinkOutcome::Drop);
        }
        Ok(LinkOutcome::Deliver {
            at_us: now_us + self.latency_us + self.serialization_us(bytes),
        })
    }
}

pub fn ms_to_us(ms: f64) -> Micros {
    (ms * 1000.0).round().max(0.0) as Micros
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for one link, so adding a link never shifts the
/// draws seen by the others.
pub fn link_rng(seed: u64, key: LinkKey) -> ChaCha8Rng {
    let id = (u64::from(key.low().0) << 32) | u64::from(key.high().0);
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ id))
}
