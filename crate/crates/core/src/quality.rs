//! Per-link quality factor: an exponentially weighted moving average over a
//! raw score derived from loss and round-trip time.

use std::collections::BTreeMap;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LinkKey, LinkStats, Millis, ReflectorId};
use crate::monitor::MetricSample;

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_RTT_REF_MS: f64 = 200.0;
pub const DEFAULT_Q_MIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },
}

fn out_of_range(what: &'static str, value: f64) -> QualityError {
    QualityError::OutOfRange { what, value }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityParams {
    pub alpha: f64,
    pub rtt_ref_ms: f64,
    pub q_min: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            rtt_ref_ms: DEFAULT_RTT_REF_MS,
            q_min: DEFAULT_Q_MIN,
        }
    }
}

impl QualityParams {
    pub fn validate(&self) -> Result<(), QualityError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(out_of_range("alpha", self.alpha));
        }
        if !(self.rtt_ref_ms > 0.0 && self.rtt_ref_ms.is_finite()) {
            return Err(out_of_range("rtt_ref_ms", self.rtt_ref_ms));
        }
        if !(0.0..=1.0).contains(&self.q_min) {
            return Err(out_of_range("q_min", self.q_min));
        }
        Ok(())
    }
}

/// Instantaneous link score: `(1 - loss) * rtt_ref / (rtt_ref + rtt)`.
pub fn raw_quality(loss_fraction: f64, rtt_ms: f64, rtt_ref_ms: f64) -> Result<f64, QualityError> {
    if !(0.0..=1.0).contains(&loss_fraction) {
        return Err(out_of_range("loss_fraction", loss_fraction));
    }
    if !(rtt_ms >= 0.0) {
        return Err(out_of_range("rtt_ms", rtt_ms));
    }
    if !(rtt_ref_ms > 0.0) {
        return Err(out_of_range("rtt_ref_ms", rtt_ref_ms));
    }
    // Infinite RTT is a dead link, not NaN.
    let rtt_term = if rtt_ms.is_infinite() {
        0.0
    } else {
        rtt_ref_ms / (rtt_ref_ms + rtt_ms)
    };
    Ok(((1.0 - loss_fraction) * rtt_term).clamp(0.0, 1.0))
}

/// Smoothed quality of one link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityFactor {
    pub link: LinkKey,
    pub q: f64,
    pub alpha: f64,
    pub updated_at: Millis,
    pub sample_count: u64,
}

impl QualityFactor {
    /// A filter that has not seen a sample yet. Its `q` is meaningless until
    /// the first update, which initializes it directly.
    pub fn new(link: LinkKey, alpha: f64) -> Self {
        Self {
            link,
            q: 1.0,
            alpha,
            updated_at: 0,
            sample_count: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.sample_count > 0
    }

    /// One step of the recurrence `q' = alpha * sample + (1 - alpha) * q`.
    pub fn update(&self, q_sample: f64, at: Millis) -> Result<Self, QualityError> {
        update_ewma(self, q_sample, at)
    }
}

pub fn update_ewma(state: &QualityFactor, q_sample: f64, at: Millis) -> Result<QualityFactor, QualityError> {
    if !(0.0..=1.0).contains(&q_sample) {
        return Err(out_of_range("q_sample", q_sample));
    }
    if !(state.alpha > 0.0 && state.alpha <= 1.0) {
        return Err(out_of_range("alpha", state.alpha));
    }
    let q = if state.sample_count == 0 {
        q_sample
    } else {
        contract(state.q, q_sample, state.alpha)
    };
    Ok(QualityFactor {
        q,
        updated_at: at,
        sample_count: state.sample_count + 1,
        ..*state
    })
}

/// `alpha * sample + (1 - alpha) * q` rounded to a float that never lies
/// farther from `sample` than the exact value, so the distance to a constant
/// input shrinks by at least `1 - alpha` per step with no rounding slack.
fn contract(q: f64, sample: f64, alpha: f64) -> f64 {
    let near = (alpha * sample + (1.0 - alpha) * q).clamp(0.0, 1.0);
    let exact = |x: f64| BigRational::from_float(x).expect("finite");
    let (a, s) = (exact(alpha), exact(sample));
    let one = BigRational::from_integer(1.into());
    let target = &a * &s + (one - &a) * exact(q);
    let n = exact(near);
    let overshoot = if s <= target { n > target || n < s } else { n < target || n > s };
    if !overshoot {
        near
    } else if near > sample {
        // the neighbour toward the sample is inside [sample, target]
        near.next_down()
    } else {
        near.next_up()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    Usable,
    Down,
}

/// `Down` iff `q < q_min`; a link exactly at the threshold is still usable.
pub fn classify_link(state: &QualityFactor, q_min: f64) -> LinkClass {
    if state.q < q_min {
        LinkClass::Down
    } else {
        LinkClass::Usable
    }
}

/// The filter agent deployed on one reflector: one EWMA per peer link.
#[derive(Clone, Debug)]
pub struct QualityFilter {
    owner: ReflectorId,
    params: QualityParams,
    links: BTreeMap<LinkKey, QualityFactor>,
}

impl QualityFilter {
    pub fn new(owner: ReflectorId, params: QualityParams) -> Self {
        Self {
            owner,
            params,
            links: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &QualityParams {
        &self.params
    }

    /// Folds one measurement into its link's filter and returns the new state.
    pub fn observe(&mut self, stats: &LinkStats) -> Result<QualityFactor, QualityError> {
        let sample = raw_quality(stats.loss_fraction, stats.rtt_ms, self.params.rtt_ref_ms)?;
        let alpha = self.params.alpha;
        let state = self
            .links
            .entry(stats.link)
            .or_insert_with(|| QualityFactor::new(stats.link, alpha));
        *state = state.update(sample, stats.sampled_at)?;
        Ok(*state)
    }

    pub fn get(&self, link: LinkKey) -> Option<&QualityFactor> {
        self.links.get(&link)
    }

    pub fn states(&self) -> impl Iterator<Item = &QualityFactor> {
        self.links.values()
    }

    pub fn forget(&mut self, link: LinkKey) {
        self.links.remove(&link);
    }

    /// `peer.<id>.quality` samples for every link with at least one update.
    pub fn metric_samples(&self, at: Millis) -> Vec<MetricSample> {
        self.links
            .values()
            .filter(|s| s.is_initialized())
            .filter_map(|s| {
                let peer = s.link.other(self.owner)?;
                Some(MetricSample::new(
                    self.owner,
                    format!("peer.{}.quality", peer.0),
                    s.q,
                    at,
                ))
            })
            .collect()
    }
}
