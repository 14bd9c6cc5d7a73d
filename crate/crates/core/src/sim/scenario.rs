//! Scenario documents: topology, settings, a time-sorted event script and
//! the expectations checked at the end of a run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::ChairAction;
use crate::model::{ClientId, LinkKey, Millis, PayloadType, ReflectorId, RoomId};
use crate::quality::{DEFAULT_ALPHA, DEFAULT_Q_MIN, DEFAULT_RTT_REF_MS};

/// A scenario document that failed to load. `line` is set for syntax and
/// type errors, `path` names the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: ")?,
            (Some(l), None) => write!(f, "line {l}: ")?,
            _ => {}
        }
        if !self.path.is_empty() && self.path != "." {
            write!(f, "{}: ", self.path)?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for SchemaError {}

fn field_err(path: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError {
        line: None,
        column: None,
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub alpha: f64,
    pub rtt_ref_ms: f64,
    pub q_min: f64,
    pub delta: f64,
    pub k_miss: u32,
    pub probe_interval_ms: Millis,
    pub probe_deadline_ms: Millis,
    pub heartbeat_interval_ms: Millis,
    pub liveness_timeout_ms: Millis,
    pub publish_interval_ms: Millis,
    pub optimizer_interval_ms: Millis,
    pub monitor_interval_ms: Millis,
    /// Gates metric recording only; link measurement keeps running.
    pub monitoring: bool,
    pub gateways: Option<[ReflectorId; 2]>,
    pub admins: Vec<String>,
    /// Time a successful restart takes before the process answers again.
    pub restart_delay_ms: Millis,
    pub series_capacity: usize,
    pub budget_bytes: usize,
    /// Capacity reported for links without a bandwidth limit.
    pub unlimited_capacity_kbps: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            rtt_ref_ms: DEFAULT_RTT_REF_MS,
            q_min: DEFAULT_Q_MIN,
            delta: crate::optimizer::DEFAULT_DELTA,
            k_miss: crate::supervisor::DEFAULT_K_MISS,
            probe_interval_ms: crate::supervisor::DEFAULT_PROBE_INTERVAL_MS,
            probe_deadline_ms: crate::supervisor::DEFAULT_PROBE_DEADLINE_MS,
            heartbeat_interval_ms: crate::control::DEFAULT_HEARTBEAT_INTERVAL_MS,
            liveness_timeout_ms: 3 * crate::control::DEFAULT_HEARTBEAT_INTERVAL_MS,
            publish_interval_ms: crate::control::DEFAULT_PUBLISH_INTERVAL_MS,
            optimizer_interval_ms: 10_000,
            monitor_interval_ms: 10_000,
            monitoring: true,
            gateways: None,
            admins: vec!["admin@localhost".into()],
            restart_delay_ms: 1_000,
            series_capacity: crate::monitor::DEFAULT_SERIES_CAPACITY,
            budget_bytes: crate::monitor::DEFAULT_BUDGET_BYTES,
            unlimited_capacity_kbps: 1_000_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorSpec {
    pub id: ReflectorId,
    #[serde(default = "default_region")]
    pub region: String,
    #[serde(default)]
    pub start_at_ms: Millis,
}

fn default_region() -> String {
    "default".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: ReflectorId,
    pub b: ReflectorId,
    pub latency_ms: f64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_kbps: Option<u64>,
    #[serde(default = "yes")]
    pub up: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: ClientId,
    pub reflector: ReflectorId,
    pub rooms: Vec<RoomId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    KillReflector {
        reflector: ReflectorId,
    },
    /// The next `fail_next` restart attempts for this reflector fail.
    RestartHookOutcome {
        reflector: ReflectorId,
        fail_next: u32,
    },
    SetLink {
        a: ReflectorId,
        b: ReflectorId,
        #[serde(default)]
        latency_ms: Option<f64>,
        #[serde(default)]
        loss: Option<f64>,
        #[serde(default)]
        bandwidth_kbps: Option<u64>,
        #[serde(default)]
        up: Option<bool>,
    },
    InjectTraffic {
        client: ClientId,
        #[serde(default)]
        room: Option<RoomId>,
        #[serde(default = "one")]
        count: u32,
        #[serde(default = "default_interval")]
        interval_ms: f64,
        #[serde(default = "default_payload")]
        payload_bytes: usize,
        #[serde(default = "default_payload_type")]
        payload_type: PayloadType,
    },
    /// Cuts every link with exactly one endpoint in `side`.
    Partition {
        side: BTreeSet<ReflectorId>,
    },
    Heal,
    Chair {
        room: RoomId,
        control: ChairAction,
    },
}

fn one() -> u32 {
    1
}

fn default_interval() -> f64 {
    20.0
}

fn default_payload() -> usize {
    160
}

fn default_payload_type() -> PayloadType {
    PayloadType::AudioG711u
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScriptEvent {
    pub at_ms: f64,
    #[serde(flatten)]
    pub action: Action,
}

// Split off `at_ms` by hand so the action keeps rejecting unknown fields.
impl<'de> Deserialize<'de> for ScriptEvent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut map = serde_json::Map::deserialize(d)?;
        let at = map.remove("at_ms").ok_or_else(|| D::Error::missing_field("at_ms"))?;
        let at_ms = at
            .as_f64()
            .ok_or_else(|| D::Error::custom(format!("at_ms: expected a number, got {at}")))?;
        let action = Action::deserialize(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self { at_ms, action })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    /// Every injected packet reaches every co-room member exactly once.
    pub exactly_once: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notifications: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_ms: Millis,
    #[serde(default)]
    pub settings: SimSettings,
    pub reflectors: Vec<ReflectorSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
    #[serde(default)]
    pub expect: Expectations,
}

/// Parses and validates a scenario document.
// serde_json cannot report field paths itself, hence serde_path_to_error.
pub fn load_scenario(document: &str) -> Result<Scenario, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        SchemaError {
            line: Some(inner.line()),
            column: Some(inner.column()),
            path,
            message: inner.to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let s = &self.settings;
        if !(s.alpha > 0.0 && s.alpha <= 1.0) {
            return Err(field_err("settings.alpha", "must be in (0, 1]"));
        }
        if !(s.rtt_ref_ms > 0.0) {
            return Err(field_err("settings.rtt_ref_ms", "must be positive"));
        }
        if !(0.0..=1.0).contains(&s.q_min) {
            return Err(field_err("settings.q_min", "must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&s.delta) {
            return Err(field_err("settings.delta", "must be in [0, 1)"));
        }
        if !(s.unlimited_capacity_kbps > 0.0) {
            return Err(field_err("settings.unlimited_capacity_kbps", "must be positive"));
        }
        for (name, v) in [
            ("k_miss", u64::from(s.k_miss)),
            ("series_capacity", s.series_capacity as u64),
            ("probe_interval_ms", s.probe_interval_ms),
            ("probe_deadline_ms", s.probe_deadline_ms),
            ("liveness_timeout_ms", s.liveness_timeout_ms),
            ("heartbeat_interval_ms", s.heartbeat_interval_ms),
            ("publish_interval_ms", s.publish_interval_ms),
            ("optimizer_interval_ms", s.optimizer_interval_ms),
            ("monitor_interval_ms", s.monitor_interval_ms),
        ] {
            if v == 0 {
                return Err(field_err(format!("settings.{name}"), "must be positive"));
            }
        }

        let mut ids = BTreeSet::new();
        for (i, r) in self.reflectors.iter().enumerate() {
            if r.id.is_none() {
                return Err(field_err(format!("reflectors[{i}].id"), "id 0 is reserved"));
            }
            if !ids.insert(r.id) {
                return Err(field_err(format!("reflectors[{i}].id"), format!("duplicate reflector {}", r.id)));
            }
        }
        if let Some([a, b]) = s.gateways {
            for (j, g) in [a, b].into_iter().enumerate() {
                if !ids.contains(&g) {
                    return Err(field_err(format!("settings.gateways[{j}]"), format!("unknown reflector {g}")));
                }
            }
            if a == b {
                return Err(field_err("settings.gateways", "gateways must differ"));
            }
        }
        let known = |path: String, r: ReflectorId| {
            if ids.contains(&r) {
                Ok(())
            } else {
                Err(field_err(path, format!("unknown reflector {r}")))
            }
        };
        let mut keys = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            known(format!("links[{i}].a"), l.a)?;
            known(format!("links[{i}].b"), l.b)?;
            if l.a == l.b {
                return Err(field_err(format!("links[{i}]"), "self-loop"));
            }
            if !keys.insert(LinkKey::new(l.a, l.b)) {
                return Err(field_err(format!("links[{i}]"), "duplicate link"));
            }
            check_link_params(&format!("links[{i}]"), Some(l.latency_ms), Some(l.loss))?;
        }
        let mut clients = BTreeSet::new();
        for (i, c) in self.clients.iter().enumerate() {
            if c.id.is_none() || !clients.insert(c.id) {
                return Err(field_err(format!("clients[{i}].id"), "ids must be nonzero and unique"));
            }
            known(format!("clients[{i}].reflector"), c.reflector)?;
        }
        let client_rooms: BTreeMap<ClientId, &Vec<RoomId>> = self.clients.iter().map(|c| (c.id, &c.rooms)).collect();

        let mut last = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            let path = format!("events[{i}]");
            if !(ev.at_ms.is_finite() && ev.at_ms >= 0.0) {
                return Err(field_err(format!("{path}.at_ms"), "must be a non-negative time"));
            }
            if ev.at_ms < last {
                return Err(field_err(
                    format!("{path}.at_ms"),
                    format!("events must be sorted by time ({} after {last})", ev.at_ms),
                ));
            }
            last = ev.at_ms;
            match &ev.action {
                Action::KillReflector { reflector } | Action::RestartHookOutcome { reflector, .. } => {
                    known(format!("{path}.reflector"), *reflector)?
                }
                Action::SetLink {
                    a,
                    b,
                    latency_ms,
                    loss,
                    ..
                } => {
                    if !keys.contains(&LinkKey::new(*a, *b)) || a == b {
                        return Err(field_err(path, format!("no link {a}-{b}")));
                    }
                    check_link_params(&path, *latency_ms, *loss)?;
                }
                Action::InjectTraffic {
                    client,
                    room,
                    interval_ms,
                    payload_bytes,
                    ..
                } => {
                    let Some(rooms) = client_rooms.get(client) else {
                        return Err(field_err(format!("{path}.client"), format!("unknown client {client}")));
                    };
                    if rooms.is_empty() && room.is_none() {
                        return Err(field_err(format!("{path}.room"), "client is in no room"));
                    }
                    if let Some(r) = room {
                        if !rooms.contains(r) {
                            return Err(field_err(format!("{path}.room"), format!("{client} is not in {r}")));
                        }
                    }
                    if !(interval_ms.is_finite() && *interval_ms >= 0.0) {
                        return Err(field_err(format!("{path}.interval_ms"), "must be non-negative"));
                    }
                    if *payload_bytes > crate::codec::MAX_PAYLOAD {
                        return Err(field_err(format!("{path}.payload_bytes"), "exceeds the codec limit"));
                    }
                }
                Action::Partition { side } => {
                    for r in side {
                        known(format!("{path}.side"), *r)?;
                    }
                }
                Action::Heal | Action::Chair { .. } => {}
            }
        }
        Ok(())
    }
}

fn check_link_params(path: &str, latency_ms: Option<f64>, loss: Option<f64>) -> Result<(), SchemaError> {
    if let Some(l) = latency_ms {
        if !(l.is_finite() && l >= 0.0) {
            return Err(field_err(format!("{path}.latency_ms"), "must be non-negative"));
        }
    }
    if let Some(p) = loss {
        if !(0.0..=1.0).contains(&p) {
            return Err(field_err(format!("{path}.loss"), "must be in [0, 1]"));
        }
    }
    Ok(())
}

/// Shape of a generated scale scenario.
#[derive(Clone, Debug)]
pub struct ScaleParams {
    pub seed: u64,
    pub reflectors: u32,
    pub rooms: u32,
    pub clients: u32,
    /// Links added on top of a random spanning tree.
    pub extra_links: u32,
    pub packets_per_client: u32,
}

impl Default for ScaleParams {
    fn default() -> Self {
        Self {
            seed: 70,
            reflectors: 70,
            rooms: 200,
            clients: 2000,
            extra_links: 70,
            packets_per_client: 3,
        }
    }
}

/// A random connected lossless overlay with rooms spread over clients;
/// every client talks a few times once routing is up.
pub fn generate_scale_scenario(p: &ScaleParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let regions = ["EU", "US", "AS"];
    let reflectors: Vec<ReflectorSpec> = (1..=p.reflectors)
        .map(|i| ReflectorSpec {
            id: ReflectorId(i),
            region: regions[(i as usize - 1) % regions.len()].into(),
            start_at_ms: 0,
        })
        .collect();

    let mut order: Vec<u32> = (1..=p.reflectors).collect();
    order.shuffle(&mut rng);
    let mut keys = BTreeSet::new();
    for i in 1..order.len() {
        let parent = order[rng.random_range(0..i)];
        keys.insert(LinkKey::new(ReflectorId(order[i]), ReflectorId(parent)));
    }
    let max_links = (p.reflectors as usize * (p.reflectors as usize).saturating_sub(1)) / 2;
    let target = (keys.len() + p.extra_links as usize).min(max_links);
    while keys.len() < target {
        let a = rng.random_range(1..=p.reflectors);
        let b = rng.random_range(1..=p.reflectors);
        if a != b {
            keys.insert(LinkKey::new(ReflectorId(a), ReflectorId(b)));
        }
    }
    let links = keys
        .into_iter()
        .map(|k| LinkSpec {
            a: k.low(),
            b: k.high(),
            latency_ms: f64::from(rng.random_range(5..=80_u32)),
            loss: 0.0,
            bandwidth_kbps: None,
            up: true,
        })
        .collect();

    let clients: Vec<ClientSpec> = (1..=p.clients)
        .map(|i| ClientSpec {
            id: ClientId(i),
            reflector: ReflectorId(rng.random_range(1..=p.reflectors)),
            // every room gets at least one client
            rooms: vec![RoomId(if i <= p.rooms { i } else { rng.random_range(1..=p.rooms) })],
        })
        .collect();

    let mut events = Vec::new();
    for c in &clients {
        let at = 2_000.0 + f64::from(rng.random_range(0..5_000_u32));
        events.push(ScriptEvent {
            at_ms: at,
            action: Action::InjectTraffic {
                client: c.id,
                room: None,
                count: p.packets_per_client,
                interval_ms: 20.0,
                payload_bytes: 160,
                payload_type: PayloadType::AudioG711u,
            },
        });
    }
    events.sort_by(|a, b| a.at_ms.total_cmp(&b.at_ms));

    Scenario {
        name: format!("scale{}", p.reflectors),
        seed: p.seed,
        duration_ms: 10_000,
        settings: SimSettings::default(),
        reflectors,
        links,
        clients,
        events,
        expect: Expectations {
            exactly_once: true,
            notifications: Some(0),
        },
    }
}
