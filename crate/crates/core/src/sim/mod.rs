//! Deterministic discrete-event harness. Every module runs inline on one
//! event loop driven by a virtual clock; identical (scenario, seed) pairs
//! produce identical traces.

pub mod link;
pub mod scenario;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use link::{link_rng, ms_to_us, LinkOutcome, Micros, SimLink};
pub use scenario::{
    generate_scale_scenario, load_scenario, Action, ClientSpec, Expectations, LinkSpec, ReflectorSpec, ScaleParams,
    Scenario, SchemaError, ScriptEvent, SimSettings,
};
pub use trace::{DeliveryChecker, DeliveryReport, LinkDropCause, PacketId, TraceEvent, TraceHasher, TraceRecord};

use crate::codec::{decode_media_packet, encode_media_packet};
use crate::control::protocol::{encode_line, Message};
use crate::control::{
    AlwaysReachable, ControllerConfig, Registry, RegistryConfig, RegistryEntry, RoutingController, RoutingSink,
};
use crate::engine::{EngineError, Egress, Forwarded, Ingress, ReflectorEngine, RoutingTable};
use crate::model::{ClientId, LinkKey, LinkStats, MediaPacket, Millis, PayloadType, ReflectorId, RoomId};
use crate::monitor::{MonitorService, OverlayCollector, StoreConfig, SyntheticLoad};
use crate::quality::{QualityFilter, QualityParams};
use crate::supervisor::{
    NotificationEvent, ProbeTransport, Supervisor, SupervisorAction, SupervisorConfig,
};

/// First monitoring tick, so link reports exist before the first optimizer cycle.
pub const FIRST_MONITOR_TICK_MS: Millis = 500;
pub const FIRST_OPTIMIZER_CYCLE_MS: Millis = 1_000;
pub const REGISTRY_TICK_MS: Millis = 1_000;
/// Round trip of a supervision probe to a live reflector.
pub const PROBE_RTT_MS: Millis = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot step back to {until_us} us, clock is at {now_us} us")]
    TimeRegression { now_us: Micros, until_us: Micros },
    #[error("link {0} is down")]
    LinkDown(LinkKey),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Per-hop transmission counters. At any instant
/// `sent == arrived + dropped_loss + dropped_down + in_flight`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub sent: u64,
    pub arrived: u64,
    pub dropped_loss: u64,
    pub dropped_down: u64,
    pub in_flight: u64,
}

impl LinkCounters {
    pub fn conserved(&self) -> bool {
        self.sent == self.arrived + self.dropped_loss + self.dropped_down + self.in_flight
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub name: String,
    pub seed: u64,
    pub final_time_ms: Millis,
    pub injected: u64,
    pub delivery: DeliveryReport,
    pub links: LinkCounters,
    pub dead_drops: u64,
    pub blocked: u64,
    pub routing_installs: u64,
    pub routing_epoch: u64,
    pub restarts: u64,
    pub failed_restarts: u64,
    pub notifications: u64,
    pub trace_lines: u64,
    pub trace_hash: String,
    pub violations: Vec<String>,
}

impl SimSummary {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Transit {
    packet: PacketId,
    wire: Arc<[u8]>,
    from: ReflectorId,
    to: ReflectorId,
    epoch: u64,
    trail: Vec<ReflectorId>,
}

enum SimEvent {
    StartReflector(ReflectorId),
    RestartDone(ReflectorId),
    Script(usize),
    Inject {
        client: ClientId,
        room: RoomId,
        payload_bytes: usize,
        payload_type: PayloadType,
    },
    Arrive(Box<Transit>),
    RegistryTick,
    HeartbeatTick,
    MonitorTick,
    OptimizerCycle,
    ProbeTick,
}

struct Scheduled {
    at: Micros,
    seq: u64,
    ev: SimEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// min-heap on (time, insertion sequence)
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct SimReflector {
    region: String,
    engine: ReflectorEngine,
    filter: QualityFilter,
    collector: OverlayCollector,
    alive: bool,
}

struct SimClient {
    home: ReflectorId,
    rooms: Vec<RoomId>,
    seq: u32,
}

struct EngineSink<'a> {
    reflectors: &'a BTreeMap<ReflectorId, SimReflector>,
}

impl RoutingSink for EngineSink<'_> {
    fn install(&mut self, reflector: ReflectorId, table: &RoutingTable) -> Result<u64, String> {
        match self.reflectors.get(&reflector) {
            Some(r) if r.alive => match r.engine.swap_routing_table(table.clone()) {
                Ok(old) => Ok(old),
                // already at this epoch: nothing to do
                Err(EngineError::StaleEpoch { installed, offered }) if installed >= offered => Ok(installed),
                Err(e) => Err(e.to_string()),
            },
            _ => Err("unreachable".into()),
        }
    }
}

struct EngineProbe<'a> {
    reflectors: &'a BTreeMap<ReflectorId, SimReflector>,
}

impl ProbeTransport for EngineProbe<'_> {
    fn send_probe(&mut self, reflector: ReflectorId, nonce: u64, _deadline_ms: Millis) -> Option<(String, Millis)> {
        let r = self.reflectors.get(&reflector).filter(|r| r.alive)?;
        let reply = Message::ProbeReply {
            reflector,
            nonce,
            epoch: r.engine.routing_epoch(),
        };
        Some((encode_line(&reply), PROBE_RTT_MS))
    }
}

pub struct Simulator {
    scenario: Scenario,
    quality: QualityParams,
    now_us: Micros,
    next_seq: u64,
    queue: BinaryHeap<Scheduled>,
    reflectors: BTreeMap<ReflectorId, SimReflector>,
    links: BTreeMap<LinkKey, SimLink>,
    rngs: BTreeMap<LinkKey, ChaCha8Rng>,
    adjacency: BTreeMap<ReflectorId, Vec<LinkKey>>,
    clients: BTreeMap<ClientId, SimClient>,
    room_index: BTreeMap<RoomId, BTreeSet<ClientId>>,
    registry: Registry,
    controller: RoutingController,
    supervisor: Supervisor,
    monitor: MonitorService,
    load: SyntheticLoad,
    restart_failures: BTreeMap<ReflectorId, u32>,
    hasher: TraceHasher,
    checker: DeliveryChecker,
    counters: LinkCounters,
    next_packet: PacketId,
    injected: u64,
    dead_drops: u64,
    blocked: u64,
    installs: u64,
    restarts: u64,
    failed_restarts: u64,
    notifications: Vec<NotificationEvent>,
    emitted: Vec<TraceRecord>,
    finished: bool,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let s = &scenario.settings;
        let quality = QualityParams {
            alpha: s.alpha,
            rtt_ref_ms: s.rtt_ref_ms,
            q_min: s.q_min,
        };
        let reflectors = scenario
            .reflectors
            .iter()
            .map(|r| {
                (
                    r.id,
                    SimReflector {
                        region: r.region.clone(),
                        engine: ReflectorEngine::new(r.id),
                        filter: QualityFilter::new(r.id, quality),
                        collector: OverlayCollector::new(r.id, 0),
                        alive: false,
                    },
                )
            })
            .collect();
        let mut links = BTreeMap::new();
        let mut rngs = BTreeMap::new();
        let mut adjacency: BTreeMap<ReflectorId, Vec<LinkKey>> = BTreeMap::new();
        for l in &scenario.links {
            let key = LinkKey::new(l.a, l.b);
            let mut link = SimLink::new(key, l.latency_ms);
            link.loss_probability = l.loss;
            link.bandwidth_kbps = l.bandwidth_kbps;
            link.up = l.up;
            links.insert(key, link);
            rngs.insert(key, link_rng(scenario.seed, key));
            adjacency.entry(key.low()).or_default().push(key);
            adjacency.entry(key.high()).or_default().push(key);
        }
        let clients = scenario
            .clients
            .iter()
            .map(|c| {
                (
                    c.id,
                    SimClient {
                        home: c.reflector,
                        rooms: c.rooms.clone(),
                        seq: 0,
                    },
                )
            })
            .collect();
        let registry = Registry::new(RegistryConfig {
            heartbeat_interval_ms: s.heartbeat_interval_ms,
            liveness_timeout_ms: s.liveness_timeout_ms,
            publish_interval_ms: s.publish_interval_ms,
        });
        let controller = RoutingController::new(ControllerConfig {
            delta: s.delta,
            q_min: s.q_min,
            gateways: s.gateways,
        });
        let supervisor = Supervisor::new(SupervisorConfig {
            k_miss: s.k_miss,
            probe_interval_ms: s.probe_interval_ms,
            probe_deadline_ms: s.probe_deadline_ms,
            admins: s.admins.clone(),
        });
        let monitor = MonitorService::new(StoreConfig {
            series_capacity: s.series_capacity,
            budget_bytes: s.budget_bytes,
        });

        let mut sim = Self {
            quality,
            now_us: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            reflectors,
            links,
            rngs,
            adjacency,
            clients,
            room_index: BTreeMap::new(),
            registry,
            controller,
            supervisor,
            monitor,
            load: SyntheticLoad(0.0),
            restart_failures: BTreeMap::new(),
            hasher: TraceHasher::default(),
            checker: DeliveryChecker::default(),
            counters: LinkCounters::default(),
            next_packet: 1,
            injected: 0,
            dead_drops: 0,
            blocked: 0,
            installs: 0,
            restarts: 0,
            failed_restarts: 0,
            notifications: Vec::new(),
            emitted: Vec::new(),
            finished: false,
            scenario,
        };
        let starts: Vec<(ReflectorId, Millis)> =
            sim.scenario.reflectors.iter().map(|r| (r.id, r.start_at_ms)).collect();
        for (id, at) in starts {
            sim.schedule_ms(at, SimEvent::StartReflector(id));
        }
        let s = sim.scenario.settings.clone();
        sim.schedule_ms(0, SimEvent::RegistryTick);
        sim.schedule_ms(s.heartbeat_interval_ms, SimEvent::HeartbeatTick);
        sim.schedule_ms(FIRST_MONITOR_TICK_MS, SimEvent::MonitorTick);
        sim.schedule_ms(FIRST_OPTIMIZER_CYCLE_MS, SimEvent::OptimizerCycle);
        sim.schedule_ms(s.probe_interval_ms, SimEvent::ProbeTick);
        for i in 0..sim.scenario.events.len() {
            let at = ms_to_us(sim.scenario.events[i].at_ms);
            sim.schedule(at, SimEvent::Script(i));
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now_us(&self) -> Micros {
        self.now_us
    }

    pub fn now_ms(&self) -> Millis {
        self.now_us / 1000
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry {
        &mut self.registry
    }

    pub fn controller(&self) -> &RoutingController {
        &self.controller
    }

    pub fn supervisor(&self) -> &Supervisor {
        &self.supervisor
    }

    pub fn monitor(&self) -> &MonitorService {
        &self.monitor
    }

    pub fn engine(&self, id: ReflectorId) -> Option<&ReflectorEngine> {
        self.reflectors.get(&id).map(|r| &r.engine)
    }

    pub fn is_alive(&self, id: ReflectorId) -> bool {
        self.reflectors.get(&id).is_some_and(|r| r.alive)
    }

    pub fn link(&self, key: LinkKey) -> Option<&SimLink> {
        self.links.get(&key)
    }

    pub fn checker(&self) -> &DeliveryChecker {
        &self.checker
    }

    pub fn counters(&self) -> LinkCounters {
        self.counters
    }

    pub fn notifications(&self) -> &[NotificationEvent] {
        &self.notifications
    }

    pub fn trace_hash(&self) -> String {
        self.hasher.hex()
    }

    fn schedule(&mut self, at: Micros, ev: SimEvent) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled { at, seq, ev });
    }

    fn schedule_ms(&mut self, at_ms: Millis, ev: SimEvent) {
        self.schedule(at_ms * 1000, ev);
    }

    fn schedule_in_ms(&mut self, after_ms: Millis, ev: SimEvent) {
        self.schedule(self.now_us + after_ms * 1000, ev);
    }

    fn emit(&mut self, ev: TraceEvent) {
        let rec = TraceRecord { t_us: self.now_us, ev };
        self.hasher.push(&rec.to_line());
        self.emitted.push(rec);
    }

    /// Processes every event with time <= `until_ms` and advances the clock.
    pub fn step(&mut self, until_ms: Millis) -> Result<Vec<TraceRecord>, SimError> {
        let until_us = until_ms * 1000;
        if until_us < self.now_us {
            return Err(SimError::TimeRegression {
                now_us: self.now_us,
                until_us,
            });
        }
        while self.queue.peek().is_some_and(|s| s.at <= until_us) {
            let Scheduled { at, ev, .. } = self.queue.pop().expect("peeked");
            self.now_us = at;
            self.handle(ev);
        }
        self.now_us = until_us;
        Ok(std::mem::take(&mut self.emitted))
    }

    /// Runs to the scenario end, lets in-flight packets land, and checks
    /// the scenario's expectations.
    pub fn run(&mut self) -> Result<(Vec<TraceRecord>, SimSummary), SimError> {
        let mut out = self.step(self.scenario.duration_ms.max(self.now_ms()))?;
        out.extend(self.finish());
        Ok((out, self.summary()))
    }

    /// Stops all timers and scripted events and delivers what is still on
    /// the wire. The simulator cannot be stepped further afterwards.
    pub fn finish(&mut self) -> Vec<TraceRecord> {
        self.finished = true;
        while let Some(Scheduled { at, ev, .. }) = self.queue.pop() {
            if let SimEvent::Arrive(t) = ev {
                self.now_us = at;
                self.arrive(*t);
            }
        }
        std::mem::take(&mut self.emitted)
    }

    pub fn summary(&self) -> SimSummary {
        let delivery = self.checker.report();
        let mut violations = Vec::new();
        if delivery.duplicates > 0 {
            violations.push(format!("{} duplicate deliveries", delivery.duplicates));
        }
        if delivery.loops > 0 {
            violations.push(format!("{} forwarding loops", delivery.loops));
        }
        if !self.counters.conserved() {
            violations.push(format!("packet conservation broken: {:?}", self.counters));
        }
        let expect = &self.scenario.expect;
        if expect.exactly_once {
            if delivery.missed > 0 {
                violations.push(format!("{} missed deliveries", delivery.missed));
            }
            if delivery.unexpected > 0 {
                violations.push(format!("{} deliveries to non-members", delivery.unexpected));
            }
        }
        if let Some(n) = expect.notifications {
            if self.notifications.len() as u64 != n {
                violations.push(format!("expected {n} notifications, got {}", self.notifications.len()));
            }
        }
        SimSummary {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            final_time_ms: self.now_ms(),
            injected: self.injected,
            delivery,
            links: self.counters,
            dead_drops: self.dead_drops,
            blocked: self.blocked,
            routing_installs: self.installs,
            routing_epoch: self.registry.routing_epoch(),
            restarts: self.restarts,
            failed_restarts: self.failed_restarts,
            notifications: self.notifications.len() as u64,
            trace_lines: self.hasher.lines(),
            trace_hash: self.hasher.hex(),
            violations,
        }
    }

    fn handle(&mut self, ev: SimEvent) {
        let s = &self.scenario.settings;
        let (hb, monitor, optimizer, probe) = (
            s.heartbeat_interval_ms,
            s.monitor_interval_ms,
            s.optimizer_interval_ms,
            s.probe_interval_ms,
        );
        match ev {
            SimEvent::StartReflector(id) => self.boot(id, false),
            SimEvent::RestartDone(id) => self.boot(id, true),
            SimEvent::Script(i) => {
                let action = self.scenario.events[i].action.clone();
                self.script(action);
            }
            SimEvent::Inject {
                client,
                room,
                payload_bytes,
                payload_type,
            } => self.inject(client, room, payload_bytes, payload_type),
            SimEvent::Arrive(t) => self.arrive(*t),
            SimEvent::RegistryTick => {
                self.registry_tick();
                self.schedule_in_ms(REGISTRY_TICK_MS, SimEvent::RegistryTick);
            }
            SimEvent::HeartbeatTick => {
                self.heartbeats();
                self.schedule_in_ms(hb, SimEvent::HeartbeatTick);
            }
            SimEvent::MonitorTick => {
                self.monitor_tick();
                self.schedule_in_ms(monitor, SimEvent::MonitorTick);
            }
            SimEvent::OptimizerCycle => {
                self.optimizer_cycle();
                self.schedule_in_ms(optimizer, SimEvent::OptimizerCycle);
            }
            SimEvent::ProbeTick => {
                self.probe_tick();
                self.schedule_in_ms(probe, SimEvent::ProbeTick);
            }
        }
    }

    /// Starts (or restarts) a reflector process with empty state. Its
    /// clients reconnect and rejoin their rooms.
    fn boot(&mut self, id: ReflectorId, restarted: bool) {
        let now = self.now_ms();
        let params = self.quality;
        let Some(r) = self.reflectors.get_mut(&id) else { return };
        r.engine = ReflectorEngine::new(id);
        r.filter = QualityFilter::new(id, params);
        r.collector = OverlayCollector::new(id, now);
        r.alive = true;
        let region = r.region.clone();
        self.emit(if restarted {
            TraceEvent::Restarted { reflector: id }
        } else {
            TraceEvent::ReflectorUp { reflector: id }
        });

        let homed: Vec<(ClientId, Vec<RoomId>)> = self
            .clients
            .iter()
            .filter(|(_, c)| c.home == id)
            .map(|(&cid, c)| (cid, c.rooms.clone()))
            .collect();
        let engine = &self.reflectors[&id].engine;
        for (cid, rooms) in homed {
            engine
                .connect_client(cid, format!("sim:{}", cid.0))
                .expect("fresh engine");
            for room in rooms {
                if engine.join_room(cid, room).is_ok() {
                    self.room_index.entry(room).or_default().insert(cid);
                }
            }
        }

        if self.registry.is_live(id) {
            let _ = self.registry.heartbeat(id, now);
        } else {
            let entry = RegistryEntry::new(id, format!("sim://{}", id.0), region, now);
            match self.registry.register_reflector(entry, &AlwaysReachable) {
                Ok(_) => self.emit(TraceEvent::Registered { reflector: id }),
                Err(e) => self.emit(TraceEvent::RegisterFailed {
                    reflector: id,
                    error: e.to_string(),
                }),
            }
        }
        self.advertise(id);
        self.supervisor.watch(id);
        if restarted {
            self.controller.request_resync(id);
        }
    }

    fn advertise(&mut self, id: ReflectorId) {
        if let Some(rooms) = self.reflectors[&id].engine.take_membership_update() {
            let _ = self.registry.advertise_membership(id, rooms);
        }
    }

    fn kill(&mut self, id: ReflectorId) {
        let Some(r) = self.reflectors.get_mut(&id) else { return };
        if !r.alive {
            return;
        }
        r.alive = false;
        for (cid, c) in &self.clients {
            if c.home == id {
                for room in &c.rooms {
                    if let Some(set) = self.room_index.get_mut(room) {
                        set.remove(cid);
                    }
                }
            }
        }
        self.room_index.retain(|_, set| !set.is_empty());
        self.emit(TraceEvent::Killed { reflector: id });
    }

    fn registry_tick(&mut self) {
        let now = self.now_ms();
        for id in self.registry.expire(now) {
            self.emit(TraceEvent::Expired { reflector: id });
        }
        if let Some(snap) = self.registry.tick(now) {
            self.emit(TraceEvent::Snapshot {
                epoch: snap.epoch,
                reflectors: snap.reflectors.len(),
                links: snap.links.len(),
            });
        }
    }

    fn heartbeats(&mut self) {
        let now = self.now_ms();
        let alive: Vec<ReflectorId> = self.reflectors.iter().filter(|(_, r)| r.alive).map(|(&id, _)| id).collect();
        for id in alive {
            if self.registry.heartbeat(id, now).is_err() {
                let entry = RegistryEntry::new(id, format!("sim://{}", id.0), self.reflectors[&id].region.clone(), now);
                if self.registry.register_reflector(entry, &AlwaysReachable).is_ok() {
                    self.emit(TraceEvent::Registered { reflector: id });
                    self.advertise(id);
                }
            }
        }
    }

    /// Ground-truth link measurements: RTT is twice the one-way latency,
    /// loss is total while the link is cut or the peer is dead.
    fn measure(&self, id: ReflectorId) -> Vec<(LinkStats, bool)> {
        let now = self.now_ms();
        let unlimited = self.scenario.settings.unlimited_capacity_kbps;
        self.adjacency
            .get(&id)
            .into_iter()
            .flatten()
            .map(|key| {
                let link = &self.links[key];
                let peer = key.other(id).expect("adjacent");
                let peer_alive = self.is_alive(peer);
                let loss = if link.is_up() && peer_alive {
                    link.loss_probability
                } else {
                    1.0
                };
                let stats = LinkStats {
                    link: *key,
                    rtt_ms: 2.0 * link.latency_ms(),
                    loss_fraction: loss,
                    capacity_kbps: link.bandwidth_kbps.map_or(unlimited, |b| b as f64),
                    sampled_at: now,
                };
                (stats, peer_alive)
            })
            .collect()
    }

    fn monitor_tick(&mut self) {
        let now = self.now_ms();
        let monitoring = self.scenario.settings.monitoring;
        let ids: Vec<ReflectorId> = self.reflectors.iter().filter(|(_, r)| r.alive).map(|(&id, _)| id).collect();
        for id in ids {
            let measured = self.measure(id);
            let registered = self.registry.is_live(id);
            let r = self.reflectors.get_mut(&id).expect("known");
            let mut reports = Vec::with_capacity(measured.len());
            for (stats, _) in &measured {
                let q = r.filter.observe(stats).ok();
                reports.push((stats.clone(), q));
            }
            if monitoring {
                let live: Vec<LinkStats> = measured.iter().filter(|(_, alive)| *alive).map(|(s, _)| s.clone()).collect();
                let mut samples = r.collector.collect_overlay_metrics(now, &r.engine, &live, &mut self.load);
                samples.extend(r.filter.metric_samples(now));
                self.monitor.record_all(samples);
            }
            if registered {
                for (stats, q) in reports {
                    let _ = self.registry.report_link(id, stats, q);
                }
                self.advertise(id);
            }
        }
    }

    fn optimizer_cycle(&mut self) {
        let exclude = self.supervisor.failed();
        let mut sink = EngineSink {
            reflectors: &self.reflectors,
        };
        let report = self.controller.cycle(&mut self.registry, &exclude, &mut sink);
        if let (Some(reason), Some(d)) = (report.install, &report.delivery) {
            self.installs += 1;
            let failed: Vec<ReflectorId> = d.failed.keys().copied().collect();
            for &id in &failed {
                self.supervisor.note_unreachable(id);
            }
            self.emit(TraceEvent::RoutingInstalled {
                epoch: d.epoch,
                reason,
                tree_edges: report.tree.as_ref().map_or(0, |t| t.edges.len()),
                acked: d.acked.len(),
                failed,
            });
        }
        for id in report.resynced {
            let epoch = self.reflectors[&id].engine.routing_epoch();
            self.emit(TraceEvent::Resynced { reflector: id, epoch });
        }
    }

    fn probe_tick(&mut self) {
        let now = self.now_ms();
        let mut transport = EngineProbe {
            reflectors: &self.reflectors,
        };
        let mut results = BTreeMap::new();
        for id in self.supervisor.probe_targets() {
            if let Ok(outcome) = self.supervisor.probe(id, &mut transport) {
                results.insert(id, outcome);
            }
        }
        let before: BTreeMap<ReflectorId, _> = self.supervisor.records().map(|r| (r.reflector, r.state)).collect();
        let actions = self.supervisor.supervise_tick(now, &results);
        let changed: Vec<_> = self
            .supervisor
            .records()
            .filter(|r| before.get(&r.reflector) != Some(&r.state))
            .map(|r| (r.reflector, r.state))
            .collect();
        for (reflector, state) in changed {
            self.emit(TraceEvent::HealthChanged { reflector, state });
        }
        for action in actions {
            match action {
                SupervisorAction::Restart { reflector, attempt } => {
                    self.restarts += 1;
                    self.emit(TraceEvent::RestartIssued { reflector, attempt });
                    let fails = self.restart_failures.entry(reflector).or_default();
                    if *fails > 0 {
                        *fails -= 1;
                        self.failed_restarts += 1;
                        self.emit(TraceEvent::RestartFailed { reflector, attempt });
                    } else {
                        // a restart replaces whatever is running
                        self.kill(reflector);
                        let delay = self.scenario.settings.restart_delay_ms;
                        self.schedule_in_ms(delay, SimEvent::RestartDone(reflector));
                    }
                }
                SupervisorAction::Notify(ev) => {
                    self.emit(TraceEvent::Notify {
                        reflector: ev.reflector,
                        reason: ev.reason.clone(),
                        recipients: ev.recipients.clone(),
                    });
                    self.notifications.push(ev);
                }
            }
        }
    }

    fn script(&mut self, action: Action) {
        match action {
            Action::KillReflector { reflector } => self.kill(reflector),
            Action::RestartHookOutcome { reflector, fail_next } => {
                self.restart_failures.insert(reflector, fail_next);
            }
            Action::SetLink {
                a,
                b,
                latency_ms,
                loss,
                bandwidth_kbps,
                up,
            } => {
                let key = LinkKey::new(a, b);
                let Some(link) = self.links.get_mut(&key) else { return };
                if let Some(l) = latency_ms {
                    link.latency_us = ms_to_us(l);
                }
                if let Some(p) = loss {
                    link.loss_probability = p;
                }
                if bandwidth_kbps.is_some() {
                    link.bandwidth_kbps = bandwidth_kbps;
                }
                if let Some(u) = up {
                    link.up = u;
                }
                let ev = TraceEvent::LinkChanged {
                    link: key,
                    latency_ms: link.latency_ms(),
                    loss: link.loss_probability,
                    up: link.up,
                };
                self.emit(ev);
            }
            Action::InjectTraffic {
                client,
                room,
                count,
                interval_ms,
                payload_bytes,
                payload_type,
            } => {
                let Some(c) = self.clients.get(&client) else { return };
                let Some(room) = room.or_else(|| c.rooms.first().copied()) else { return };
                let step = ms_to_us(interval_ms);
                for k in 0..u64::from(count) {
                    self.schedule(
                        self.now_us + k * step,
                        SimEvent::Inject {
                            client,
                            room,
                            payload_bytes,
                            payload_type,
                        },
                    );
                }
            }
            Action::Partition { side } => {
                let mut cut = 0;
                for (key, link) in &mut self.links {
                    if side.contains(&key.low()) != side.contains(&key.high()) {
                        link.partitioned = true;
                        cut += 1;
                    }
                }
                self.emit(TraceEvent::Partition { side, cut });
            }
            Action::Heal => {
                let mut restored = 0;
                for link in self.links.values_mut() {
                    if link.partitioned {
                        link.partitioned = false;
                        restored += 1;
                    }
                }
                self.emit(TraceEvent::Heal { restored });
            }
            Action::Chair { room, control } => {
                let applied = self
                    .reflectors
                    .values()
                    .filter(|r| r.alive)
                    .filter(|r| r.engine.apply_chair_control(room, control).is_ok())
                    .count();
                self.emit(TraceEvent::Chair { room, control, applied });
            }
        }
    }

    fn inject(&mut self, client: ClientId, room: RoomId, payload_bytes: usize, payload_type: PayloadType) {
        let Some(c) = self.clients.get_mut(&client) else { return };
        let home = c.home;
        if !self.reflectors.get(&home).is_some_and(|r| r.alive) {
            self.emit(TraceEvent::InjectSkipped {
                client,
                reason: format!("home reflector {home} is down"),
            });
            return;
        }
        c.seq = c.seq.wrapping_add(1);
        let packet_id = self.next_packet;
        self.next_packet += 1;
        let p = MediaPacket {
            room,
            src: client,
            seq: c.seq,
            timestamp_ms: self.now_ms() as u32,
            payload_type,
            flags: 0,
            payload: vec![packet_id as u8; payload_bytes],
        };
        let wire: Arc<[u8]> = encode_media_packet(&p).expect("payload size validated").into();
        self.injected += 1;
        self.emit(TraceEvent::Inject {
            packet: packet_id,
            client,
            room,
            reflector: home,
            bytes: wire.len(),
        });
        let fwd = self.reflectors[&home].engine.forward(&p, Ingress::LocalClient(client));
        if let Some(reason) = fwd.dropped {
            self.blocked += 1;
            self.checker.injected(packet_id, BTreeSet::new());
            self.emit(TraceEvent::Blocked {
                packet: packet_id,
                reason,
            });
            return;
        }
        let mut expected = self.room_index.get(&room).cloned().unwrap_or_default();
        expected.remove(&client);
        self.checker.injected(packet_id, expected);
        self.fan_out(packet_id, home, &fwd, &wire, &[home]);
    }

    fn fan_out(&mut self, packet: PacketId, at: ReflectorId, fwd: &Forwarded, wire: &Arc<[u8]>, trail: &[ReflectorId]) {
        for action in &fwd.actions {
            match *action {
                Egress::DeliverLocal(client) => {
                    self.checker.delivered(packet, client);
                    self.emit(TraceEvent::Deliver {
                        packet,
                        client,
                        reflector: at,
                        hops: trail.len() - 1,
                    });
                }
                Egress::SendPeer(peer) => {
                    let t = Transit {
                        packet,
                        wire: Arc::clone(wire),
                        from: at,
                        to: peer,
                        epoch: fwd.epoch,
                        trail: trail.to_vec(),
                    };
                    self.transmit(t);
                }
            }
        }
    }

    fn transmit(&mut self, t: Transit) {
        let key = LinkKey::new(t.from, t.to);
        self.counters.sent += 1;
        let Some(link) = self.links.get(&key) else {
            self.counters.dropped_down += 1;
            self.emit(TraceEvent::LinkDrop {
                packet: t.packet,
                link: key,
                cause: LinkDropCause::Down,
            });
            return;
        };
        let draw: f64 = self.rngs.get_mut(&key).expect("one stream per link").random();
        match link.deliver_or_drop(self.now_us, t.wire.len(), draw) {
            Ok(LinkOutcome::Deliver { at_us }) => {
                self.counters.in_flight += 1;
                self.schedule(at_us, SimEvent::Arrive(Box::new(t)));
            }
            Ok(LinkOutcome::Drop) => {
                self.counters.dropped_loss += 1;
                self.emit(TraceEvent::LinkDrop {
                    packet: t.packet,
                    link: key,
                    cause: LinkDropCause::Loss,
                });
            }
            Err(_) => {
                self.counters.dropped_down += 1;
                self.emit(TraceEvent::LinkDrop {
                    packet: t.packet,
                    link: key,
                    cause: LinkDropCause::Down,
                });
            }
        }
    }

    fn arrive(&mut self, mut t: Transit) {
        self.counters.in_flight -= 1;
        self.counters.arrived += 1;
        let to = t.to;
        if !self.is_alive(to) {
            self.dead_drops += 1;
            self.emit(TraceEvent::DeadDrop {
                packet: t.packet,
                reflector: to,
            });
            return;
        }
        if t.trail.contains(&to) {
            self.checker.looped();
            self.emit(TraceEvent::Loop {
                packet: t.packet,
                reflector: to,
            });
            return;
        }
        let p = match decode_media_packet(&t.wire) {
            Ok(p) => p,
            Err(e) => {
                self.emit(TraceEvent::CorruptFrame {
                    reflector: to,
                    error: e.to_string(),
                });
                return;
            }
        };
        let fwd = self.reflectors[&to]
            .engine
            .forward_with_epoch(&p, Ingress::Peer(t.from), Some(t.epoch));
        t.trail.push(to);
        self.fan_out(t.packet, to, &fwd, &t.wire, &t.trail);
    }
}

/// Loads, runs and summarizes a scenario document.
pub fn run_scenario(document: &str, seed: Option<u64>) -> Result<(Vec<TraceRecord>, SimSummary), SimError> {
    let mut scenario = load_scenario(document)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Simulator::new(scenario)?.run()
}
