use super::MetricSample;
use crate::engine::{ReflectorEngine, TrafficCounters};
use crate::model::{LinkStats, Millis, ReflectorId};

/// Source of host metrics. Daemons read the OS; simulations feed synthetic values.
pub trait SysSampler {
    /// Load average or an equivalent utilisation figure.
    fn load(&mut self) -> f64;
}

/// Constant synthetic load for simulations and tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticLoad(pub f64);

impl SysSampler for SyntheticLoad {
    fn load(&mut self) -> f64 {
        self.0
    }
}

/// Turns engine counters and peer measurements into samples on each
/// monitoring tick. Rates are computed against the previous tick.
#[derive(Clone, Debug)]
pub struct OverlayCollector {
    reflector: ReflectorId,
    last_at: Millis,
    last: TrafficCounters,
}

impl OverlayCollector {
    pub fn new(reflector: ReflectorId, started_at: Millis) -> Self {
        Self {
            reflector,
            last_at: started_at,
            last: TrafficCounters::default(),
        }
    }

    /// `links` must only contain links to live peers of this reflector.
    pub fn collect_overlay_metrics(
        &mut self,
        now: Millis,
        engine: &ReflectorEngine,
        links: &[LinkStats],
        sampler: &mut dyn SysSampler,
    ) -> Vec<MetricSample> {
        let counters = engine.counters();
        let elapsed = now.saturating_sub(self.last_at);
        // bits per millisecond is kbit/s
        let kbps = |bytes: u64| {
            if elapsed == 0 {
                0.0
            } else {
                bytes as f64 * 8.0 / elapsed as f64
            }
        };
        let r = self.reflector;
        let mut out = vec![
            MetricSample::new(r, "sys.load", sampler.load(), now),
            MetricSample::new(r, "vrvs.clients", engine.client_count() as f64, now),
            MetricSample::new(r, "vrvs.rooms", engine.room_count() as f64, now),
            MetricSample::new(r, "net.in_kbps", kbps(counters.bytes_in - self.last.bytes_in), now),
            MetricSample::new(r, "net.out_kbps", kbps(counters.bytes_out - self.last.bytes_out), now),
            MetricSample::new(
                r,
                "vrvs.dropped",
                (counters.dropped_unknown_room + counters.dropped_chair) as f64,
                now,
            ),
        ];
        for link in links {
            let Some(peer) = link.link.other(r) else { continue };
            out.push(MetricSample::new(r, format!("peer.{}.loss", peer.0), link.loss_fraction, now));
            out.push(MetricSample::new(r, format!("peer.{}.rtt_ms", peer.0), link.rtt_ms, now));
        }
        self.last = counters;
        self.last_at = now;
        out
    }
}
