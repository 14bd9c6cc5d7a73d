use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::engine::RoutingTable;
use crate::model::{LinkKey, LinkStats, Millis, ReflectorId, RoomId};
use crate::optimizer::FlowResult;
use crate::quality::QualityFactor;
use crate::queue::BoundedQueue;

pub const DEFAULT_HEARTBEAT_INTERVAL_MS: Millis = 10_000;
pub const DEFAULT_PUBLISH_INTERVAL_MS: Millis = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub reflector: ReflectorId,
    pub control_address: String,
    pub region: String,
    pub registered_at: Millis,
    pub last_heartbeat: Millis,
}

impl RegistryEntry {
    pub fn new(reflector: ReflectorId, control_address: impl Into<String>, region: impl Into<String>, at: Millis) -> Self {
        Self {
            reflector,
            control_address: control_address.into(),
            region: region.into(),
            registered_at: at,
            last_heartbeat: at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub stats: LinkStats,
    #[serde(default)]
    pub quality: Option<QualityFactor>,
}

/// The exported result of one max-flow run between gateway reflectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub source: ReflectorId,
    pub sink: ReflectorId,
    pub value: f64,
    pub flow_edges: BTreeSet<LinkKey>,
    pub min_cut: BTreeSet<LinkKey>,
}

impl From<&FlowResult> for FlowSummary {
    fn from(f: &FlowResult) -> Self {
        Self {
            source: f.source,
            sink: f.sink,
            value: f.value,
            flow_edges: f.flow_edges(),
            min_cut: f.min_cut.clone(),
        }
    }
}

/// Point-in-time view of the overlay.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub epoch: u64,
    pub reflectors: Vec<RegistryEntry>,
    pub links: Vec<LinkInfo>,
    pub tree_edges: BTreeSet<LinkKey>,
    pub room_members: BTreeMap<RoomId, BTreeSet<ReflectorId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_flow: Option<FlowSummary>,
}

impl TopologySnapshot {
    pub fn reflector_ids(&self) -> BTreeSet<ReflectorId> {
        self.reflectors.iter().map(|e| e.reflector).collect()
    }

    pub fn contains(&self, id: ReflectorId) -> bool {
        self.reflectors.iter().any(|e| e.reflector == id)
    }

    pub fn quality_map(&self) -> BTreeMap<LinkKey, QualityFactor> {
        self.links
            .iter()
            .filter_map(|l| l.quality.map(|q| (l.stats.link, q)))
            .collect()
    }

    /// Checks that tree edges, links and room members only reference live
    /// reflectors and that the tree edges are acyclic.
    pub fn check_consistency(&self) -> Result<(), String> {
        let live = self.reflector_ids();
        let link_keys: BTreeSet<LinkKey> = self.links.iter().map(|l| l.stats.link).collect();
        for l in &link_keys {
            if !live.contains(&l.low()) || !live.contains(&l.high()) {
                return Err(format!("link {l} references a dead reflector"));
            }
        }
        for e in &self.tree_edges {
            if !link_keys.contains(e) {
                return Err(format!("tree edge {e} is not a known link"));
            }
        }
        let mut parent: BTreeMap<ReflectorId, ReflectorId> = live.iter().map(|&v| (v, v)).collect();
        fn root(parent: &mut BTreeMap<ReflectorId, ReflectorId>, mut v: ReflectorId) -> ReflectorId {
            while parent[&v] != v {
                v = parent[&v];
            }
            v
        }
        for e in &self.tree_edges {
            let (a, b) = (root(&mut parent, e.low()), root(&mut parent, e.high()));
            if a == b {
                return Err(format!("tree edge {e} closes a cycle"));
            }
            parent.insert(a, b);
        }
        for (room, hosts) in &self.room_members {
            if let Some(h) = hosts.iter().find(|h| !live.contains(h)) {
                return Err(format!("{room} lists dead reflector {h}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    pub heartbeat_interval_ms: Millis,
    /// Entries silent for longer than this are dropped.
    pub liveness_timeout_ms: Millis,
    pub publish_interval_ms: Millis,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval_ms: DEFAULT_HEARTBEAT_INTERVAL_MS,
            liveness_timeout_ms: 3 * DEFAULT_HEARTBEAT_INTERVAL_MS,
            publish_interval_ms: DEFAULT_PUBLISH_INTERVAL_MS,
        }
    }
}

/// Checks that a newly registering reflector's control address answers.
pub trait AddressProbe {
    fn probe_address(&self, address: &str) -> bool;
}

impl<F: Fn(&str) -> bool> AddressProbe for F {
    fn probe_address(&self, address: &str) -> bool {
        self(address)
    }
}

/// Probe that accepts every address; used in simulation.
pub struct AlwaysReachable;

impl AddressProbe for AlwaysReachable {
    fn probe_address(&self, _: &str) -> bool {
        true
    }
}

/// Delivers a routing table to one reflector. Returns the epoch it replaced.
pub trait RoutingSink {
    fn install(&mut self, reflector: ReflectorId, table: &RoutingTable) -> Result<u64, String>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub epoch: u64,
    pub acked: BTreeMap<ReflectorId, u64>,
    pub failed: BTreeMap<ReflectorId, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegistryEvent {
    Snapshot(TopologySnapshot),
    Expired(ReflectorId),
}

/// The registry: reflector entries with heartbeat leases, link reports,
/// aggregated room membership and the installed tree.
#[derive(Debug)]
pub struct Registry {
    config: RegistryConfig,
    entries: BTreeMap<ReflectorId, RegistryEntry>,
    links: BTreeMap<LinkKey, LinkInfo>,
    memberships: BTreeMap<ReflectorId, BTreeSet<RoomId>>,
    tree_edges: BTreeSet<LinkKey>,
    max_flow: Option<FlowSummary>,
    epoch: u64,
    dirty: bool,
    next_publish_at: Option<Millis>,
    routing_epoch: u64,
    resync: BTreeSet<ReflectorId>,
    subscribers: Vec<BoundedQueue<RegistryEvent>>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(RegistryConfig::default())
    }
}

impl Registry {
    pub fn new(config: RegistryConfig) -> Self {
        Self {
            config,
            entries: BTreeMap::new(),
            links: BTreeMap::new(),
            memberships: BTreeMap::new(),
            tree_edges: BTreeSet::new(),
            max_flow: None,
            epoch: 0,
            dirty: false,
            next_publish_at: None,
            routing_epoch: 0,
            resync: BTreeSet::new(),
            subscribers: Vec::new(),
        }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    /// Epoch of the last published snapshot.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn routing_epoch(&self) -> u64 {
        self.routing_epoch
    }

    pub fn register_reflector(&mut self, entry: RegistryEntry, probe: &dyn AddressProbe) -> Result<u64, ControlError> {
        if entry.reflector.is_none() {
            return Err(ControlError::InvalidId);
        }
        if self.entries.contains_key(&entry.reflector) {
            return Err(ControlError::DuplicateId(entry.reflector));
        }
        if !probe.probe_address(&entry.control_address) {
            return Err(ControlError::ProbeFailed(entry.control_address));
        }
        let id = entry.reflector;
        let mut entry = entry;
        entry.last_heartbeat = entry.last_heartbeat.max(entry.registered_at);
        self.entries.insert(id, entry);
        self.resync.insert(id);
        self.dirty = true;
        Ok(self.epoch)
    }

    pub fn heartbeat(&mut self, reflector: ReflectorId, at: Millis) -> Result<(), ControlError> {
        let entry = self
            .entries
            .get_mut(&reflector)
            .ok_or(ControlError::UnknownReflector(reflector))?;
        entry.last_heartbeat = entry.last_heartbeat.max(at);
        Ok(())
    }

    pub fn deregister(&mut self, reflector: ReflectorId) -> Result<RegistryEntry, ControlError> {
        let entry = self
            .entries
            .remove(&reflector)
            .ok_or(ControlError::UnknownReflector(reflector))?;
        self.forget(reflector);
        Ok(entry)
    }

    fn forget(&mut self, reflector: ReflectorId) {
        self.memberships.remove(&reflector);
        self.links.retain(|k, _| !k.contains(reflector));
        self.tree_edges.retain(|k| !k.contains(reflector));
        self.resync.remove(&reflector);
        self.dirty = true;
    }

    pub fn advertise_membership(&mut self, reflector: ReflectorId, rooms: BTreeSet<RoomId>) -> Result<(), ControlError> {
        if !self.entries.contains_key(&reflector) {
            return Err(ControlError::UnknownReflector(reflector));
        }
        let changed = self.memberships.get(&reflector) != Some(&rooms);
        if rooms.is_empty() {
            self.memberships.remove(&reflector);
        } else {
            self.memberships.insert(reflector, rooms);
        }
        self.dirty |= changed;
        Ok(())
    }

    /// Records a link measurement from one of its endpoints.
    pub fn report_link(
        &mut self,
        from: ReflectorId,
        stats: LinkStats,
        quality: Option<QualityFactor>,
    ) -> Result<(), ControlError> {
        if !self.entries.contains_key(&from) {
            return Err(ControlError::UnknownReflector(from));
        }
        if !stats.link.contains(from) || !stats.is_valid() {
            return Err(ControlError::InvalidLink(stats.link));
        }
        let peer = stats.link.other(from).expect("checked above");
        if !self.entries.contains_key(&peer) {
            return Err(ControlError::UnknownReflector(peer));
        }
        self.links.insert(stats.link, LinkInfo { stats, quality });
        self.dirty = true;
        Ok(())
    }

    /// Drops entries whose lease ran out. Returns the removed ids.
    pub fn expire(&mut self, now: Millis) -> Vec<ReflectorId> {
        let timeout = self.config.liveness_timeout_ms;
        let dead: Vec<ReflectorId> = self
            .entries
            .values()
            .filter(|e| now.saturating_sub(e.last_heartbeat) > timeout)
            .map(|e| e.reflector)
            .collect();
        for id in &dead {
            self.entries.remove(id);
            self.forget(*id);
            self.notify(RegistryEvent::Expired(*id));
        }
        dead
    }

    fn room_members(&self) -> BTreeMap<RoomId, BTreeSet<ReflectorId>> {
        let mut out: BTreeMap<RoomId, BTreeSet<ReflectorId>> = BTreeMap::new();
        for (&r, rooms) in &self.memberships {
            for &room in rooms {
                out.entry(room).or_default().insert(r);
            }
        }
        out
    }

    /// Current state labelled with the last published epoch.
    pub fn snapshot(&self) -> TopologySnapshot {
        TopologySnapshot {
            epoch: self.epoch,
            reflectors: self.entries.values().cloned().collect(),
            links: self.links.values().cloned().collect(),
            tree_edges: self.tree_edges.clone(),
            room_members: self.room_members(),
            max_flow: self.max_flow.clone(),
        }
    }

    /// Runs lease expiry and, once per publish interval, publishes a new
    /// snapshot epoch to subscribers if anything changed.
    pub fn tick(&mut self, now: Millis) -> Option<TopologySnapshot> {
        self.expire(now);
        let due = *self.next_publish_at.get_or_insert(now);
        if now < due {
            return None;
        }
        let interval = self.config.publish_interval_ms.max(1);
        let mut next = due;
        while next <= now {
            next += interval;
        }
        self.next_publish_at = Some(next);
        if !self.dirty {
            return None;
        }
        Some(self.publish())
    }

    /// Publishes immediately, bumping the epoch.
    pub fn publish(&mut self) -> TopologySnapshot {
        self.epoch += 1;
        self.dirty = false;
        let snap = self.snapshot();
        self.notify(RegistryEvent::Snapshot(snap.clone()));
        snap
    }

    fn notify(&self, ev: RegistryEvent) {
        for sub in &self.subscribers {
            sub.push(ev.clone());
        }
    }

    /// Attaches a topology subscriber; it immediately receives the current
    /// snapshot, then every published one.
    pub fn subscribe(&mut self, queue: BoundedQueue<RegistryEvent>) {
        queue.push(RegistryEvent::Snapshot(self.snapshot()));
        self.subscribers.push(queue);
    }

    /// Detaches a subscriber added with [`Registry::subscribe`].
    pub fn unsubscribe(&mut self, queue: &BoundedQueue<RegistryEvent>) -> bool {
        let before = self.subscribers.len();
        self.subscribers.retain(|q| !q.same_queue(queue));
        self.subscribers.len() != before
    }

    pub fn set_tree(&mut self, edges: BTreeSet<LinkKey>) {
        if edges != self.tree_edges {
            self.tree_edges = edges;
            self.dirty = true;
        }
    }

    pub fn set_flow(&mut self, flow: Option<FlowSummary>) {
        if flow != self.max_flow {
            self.max_flow = flow;
            self.dirty = true;
        }
    }

    /// Sends one epoch of routing tables. All tables must carry the same epoch,
    /// newer than anything published before. Unreachable reflectors are
    /// reported, not raised.
    pub fn publish_routing(
        &mut self,
        tables: &BTreeMap<ReflectorId, RoutingTable>,
        sink: &mut dyn RoutingSink,
    ) -> Result<DeliveryReport, ControlError> {
        let epochs: BTreeSet<u64> = tables.values().map(|t| t.epoch).collect();
        let epoch = match epochs.len() {
            0 => self.routing_epoch + 1,
            1 => *epochs.first().expect("one epoch"),
            _ => {
                return Err(ControlError::EpochConflict {
                    offered: *epochs.last().expect("nonempty"),
                    last: self.routing_epoch,
                })
            }
        };
        if epoch <= self.routing_epoch {
            return Err(ControlError::EpochConflict {
                offered: epoch,
                last: self.routing_epoch,
            });
        }
        self.routing_epoch = epoch;
        let mut report = DeliveryReport {
            epoch,
            ..Default::default()
        };
        for (&id, table) in tables {
            if !self.entries.contains_key(&id) {
                report.failed.insert(id, "not registered".into());
                continue;
            }
            match sink.install(id, table) {
                Ok(old) => {
                    report.acked.insert(id, old);
                    self.resync.remove(&id);
                }
                Err(e) => {
                    report.failed.insert(id, e);
                }
            }
        }
        Ok(report)
    }

    /// Reflectors that registered since they last received a table.
    pub fn take_resync(&mut self) -> BTreeSet<ReflectorId> {
        std::mem::take(&mut self.resync)
    }

    pub fn entry(&self, id: ReflectorId) -> Option<&RegistryEntry> {
        self.entries.get(&id)
    }

    pub fn is_live(&self, id: ReflectorId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn live_ids(&self) -> BTreeSet<ReflectorId> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
