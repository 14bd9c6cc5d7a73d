//! Per-reflector monitoring agent: a bounded embedded store of named
//! measurements and a subscription feed over it.

mod collect;
mod store;

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use globset::{Glob, GlobMatcher};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use collect::{OverlayCollector, SyntheticLoad, SysSampler};
pub use store::{
    MetricStore, SeriesKey, StoreConfig, DEFAULT_BUDGET_BYTES, DEFAULT_SERIES_CAPACITY, SAMPLE_COST_BYTES,
    SERIES_OVERHEAD_BYTES,
};

use crate::model::{Millis, ReflectorId};
use crate::queue::BoundedQueue;

pub const DEFAULT_SUBSCRIBER_QUEUE: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub reflector: ReflectorId,
    pub name: String,
    pub value: f64,
    pub at: Millis,
}

impl MetricSample {
    pub fn new(reflector: ReflectorId, name: impl Into<String>, value: f64, at: Millis) -> Self {
        Self {
            reflector,
            name: name.into(),
            value,
            at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("sample for {reflector} {name} at {at} is older than series head {head}")]
    TimestampRegression {
        reflector: ReflectorId,
        name: String,
        head: Millis,
        at: Millis,
    },
    #[error("metric name must not be empty")]
    EmptyName,
    #[error("bad pattern {pattern:?}: {reason}")]
    BadPattern { pattern: String, reason: String },
}

/// What a subscriber wants to see.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub name_filter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflector_filter: Option<BTreeSet<ReflectorId>>,
    #[serde(default)]
    pub min_interval_ms: Millis,
}

impl Subscription {
    pub fn new(name_filter: impl Into<String>) -> Self {
        Self {
            name_filter: name_filter.into(),
            reflector_filter: None,
            min_interval_ms: 0,
        }
    }

    pub fn reflectors(mut self, ids: impl IntoIterator<Item = ReflectorId>) -> Self {
        self.reflector_filter = Some(ids.into_iter().collect());
        self
    }

    pub fn min_interval(mut self, ms: Millis) -> Self {
        self.min_interval_ms = ms;
        self
    }
}

/// Compiles a metric-name glob. `*` also matches across dots.
pub fn compile_pattern(pattern: &str) -> Result<GlobMatcher, MonitorError> {
    Glob::new(pattern)
        .map(|g| g.compile_matcher())
        .map_err(|e| MonitorError::BadPattern {
            pattern: pattern.to_owned(),
            reason: e.kind().to_string(),
        })
}

pub type SubscriptionId = u64;

/// Delivery endpoint for a subscriber.
pub type SampleQueue = BoundedQueue<MetricSample>;

struct ActiveSubscription {
    id: SubscriptionId,
    matcher: GlobMatcher,
    reflectors: Option<BTreeSet<ReflectorId>>,
    min_interval_ms: Millis,
    last_sent: HashMap<SeriesKey, Millis>,
    sink: SampleQueue,
}

impl ActiveSubscription {
    fn matches(&self, s: &MetricSample) -> bool {
        self.reflectors.as_ref().is_none_or(|set| set.contains(&s.reflector)) && self.matcher.is_match(&s.name)
    }

    fn offer(&mut self, s: &MetricSample) {
        if !self.matches(s) {
            return;
        }
        let key = (s.reflector, s.name.clone());
        if let Some(&last) = self.last_sent.get(&key) {
            if s.at.saturating_sub(last) < self.min_interval_ms || s.at < last {
                return;
            }
        }
        self.last_sent.insert(key, s.at);
        self.sink.push(s.clone());
    }
}

struct Inner {
    store: MetricStore,
    subs: Vec<ActiveSubscription>,
    next_id: SubscriptionId,
}

/// The monitoring agent. All methods take `&self`; recording and delivery are
/// serialized internally, and delivery only ever pushes to non-blocking queues.
pub struct MonitorService {
    inner: Mutex<Inner>,
}

impl Default for MonitorService {
    fn default() -> Self {
        Self::new(StoreConfig::default())
    }
}

impl std::fmt::Debug for MonitorService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.lock();
        f.debug_struct("MonitorService")
            .field("series", &inner.store.series_count())
            .field("subscriptions", &inner.subs.len())
            .finish()
    }
}

impl MonitorService {
    pub fn new(config: StoreConfig) -> Self {
        Self {
            inner: Mutex::new(Inner {
                store: MetricStore::new(config),
                subs: Vec::new(),
                next_id: 1,
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record_sample(&self, s: MetricSample) -> Result<(), MonitorError> {
        let mut inner = self.lock();
        inner.store.record(&s)?;
        for sub in &mut inner.subs {
            sub.offer(&s);
        }
        Ok(())
    }

    /// Records a batch, returning how many samples were rejected.
    pub fn record_all(&self, samples: impl IntoIterator<Item = MetricSample>) -> usize {
        samples.into_iter().filter(|s| self.record_sample(s.clone()).is_err()).count()
    }

    pub fn query_range(&self, reflector: ReflectorId, name: &str, from: Millis, to: Millis) -> Vec<MetricSample> {
        self.lock().store.query_range(reflector, name, from, to)
    }

    /// Registers a subscriber. Current heads of matching series are pushed
    /// to `sink` before any live sample.
    pub fn subscribe(&self, sub: &Subscription, sink: SampleQueue) -> Result<SubscriptionId, MonitorError> {
        let matcher = compile_pattern(&sub.name_filter)?;
        let mut inner = self.lock();
        let id = inner.next_id;
        inner.next_id += 1;
        let mut active = ActiveSubscription {
            id,
            matcher,
            reflectors: sub.reflector_filter.clone(),
            min_interval_ms: sub.min_interval_ms,
            last_sent: HashMap::new(),
            sink,
        };
        for head in inner.store.heads() {
            active.offer(&head);
        }
        inner.subs.push(active);
        Ok(id)
    }

    pub fn unsubscribe(&self, id: SubscriptionId) -> bool {
        let mut inner = self.lock();
        let before = inner.subs.len();
        inner.subs.retain(|s| s.id != id);
        inner.subs.len() != before
    }

    pub fn subscription_count(&self) -> usize {
        self.lock().subs.len()
    }

    /// Read access to the store under the service lock.
    pub fn with_store<R>(&self, f: impl FnOnce(&MetricStore) -> R) -> R {
        f(&self.lock().store)
    }
}
