//! `run-registry`: registry, routing controller, supervisor and metric hub
//! behind one newline-JSON TCP listener.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use vrvs_core::control::protocol::Message;
use vrvs_core::control::{
    AddressProbe, ControlError, Registry, RegistryEntry, RegistryEvent, RoutingController, RoutingSink,
};
use vrvs_core::engine::RoutingTable;
use vrvs_core::monitor::{compile_pattern, MonitorService, Subscription, DEFAULT_SUBSCRIBER_QUEUE};
use vrvs_core::queue::BoundedQueue;
use vrvs_core::supervisor::{
    judge_probe_reply, JsonLinesSink, NotificationSink, ProbeTransport, RestartHook, Supervisor, SupervisorAction,
};
use vrvs_core::{Millis, ReflectorId};

use crate::config::Config;
use crate::error::CliError;
use crate::wire::{now_ms, resolve, LineConn, CONNECT_TIMEOUT};

const TICK: Duration = Duration::from_millis(100);
const STREAM_POLL: Duration = Duration::from_millis(50);

struct State {
    registry: Registry,
    controller: RoutingController,
    supervisor: Supervisor,
}

struct Shared {
    state: Mutex<State>,
    monitor: MonitorService,
    config: Config,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn log(msg: impl std::fmt::Display) {
    eprintln!("registry: {msg}");
}

pub fn run(config: Config, shutdown: Arc<AtomicBool>) -> Result<(), CliError> {
    let listener = TcpListener::bind(&config.registry).map_err(|e| CliError::Bind {
        addr: config.registry.clone(),
        reason: e.to_string(),
    })?;
    let addr = listener.local_addr()?;
    println!("listening on {addr}");
    io::stdout().flush()?;
    listener.set_nonblocking(true)?;

    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            registry: Registry::new(config.registry_config()),
            controller: RoutingController::new(config.controller_config()),
            supervisor: Supervisor::new(config.supervisor_config()),
        }),
        monitor: MonitorService::new(config.store_config()),
        config,
    });
    let ticker = {
        let shared = Arc::clone(&shared);
        let shutdown = Arc::clone(&shutdown);
        thread::spawn(move || background(&shared, &shutdown))
    };

    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = Arc::clone(&shared);
                thread::spawn(move || {
                    if let Err(e) = serve(stream, &shared) {
                        use io::ErrorKind::{BrokenPipe, ConnectionReset, UnexpectedEof};
                        if !matches!(e.kind(), UnexpectedEof | BrokenPipe | ConnectionReset) {
                            log(format!("connection ended: {e}"));
                        }
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => log(format!("accept failed: {e}")),
        }
    }
    let _ = ticker.join();
    log("shutting down");
    Ok(())
}

/// Lease expiry, snapshot publication, optimizer cycles and supervision.
fn background(shared: &Shared, shutdown: &AtomicBool) {
    let cfg = &shared.config;
    let events = BoundedQueue::new(256);
    shared.lock().registry.subscribe(events.clone());
    events.drain();
    let mut sink = notification_sink(cfg);
    let mut hook = CommandRestart(cfg.restart_command.clone());
    let mut nonce = 0;
    let start = Instant::now();
    let mut next_cycle = Duration::from_millis(cfg.optimizer_interval_ms.min(1_000));
    let mut next_probe = Duration::from_millis(cfg.probe_interval_ms);
    while !shutdown.load(Ordering::Relaxed) {
        thread::sleep(TICK);
        let now = now_ms();
        if let Some(snap) = shared.lock().registry.tick(now) {
            log(format!(
                "published snapshot epoch {} with {} reflectors",
                snap.epoch,
                snap.reflectors.len()
            ));
        }
        for ev in events.drain() {
            if let RegistryEvent::Expired(id) = ev {
                log(format!("lease expired for {id}"));
            }
        }
        let elapsed = start.elapsed();
        if elapsed >= next_cycle {
            next_cycle = elapsed + Duration::from_millis(cfg.optimizer_interval_ms);
            optimizer_cycle(shared);
        }
        if elapsed >= next_probe {
            next_probe = elapsed + Duration::from_millis(cfg.probe_interval_ms);
            supervise(shared, now, &mut nonce, &mut hook, sink.as_mut());
        }
    }
}

fn addresses(registry: &Registry) -> BTreeMap<ReflectorId, String> {
    registry
        .live_ids()
        .into_iter()
        .filter_map(|id| registry.entry(id).map(|e| (id, e.control_address.clone())))
        .collect()
}

fn optimizer_cycle(shared: &Shared) {
    let mut guard = shared.lock();
    let st = &mut *guard;
    let mut sink = TcpRoutingSink(addresses(&st.registry));
    let exclude = st.supervisor.failed();
    let report = st.controller.cycle(&mut st.registry, &exclude, &mut sink);
    if let (Some(reason), Some(d)) = (report.install, &report.delivery) {
        log(format!(
            "installed routing epoch {} ({reason:?}) on {} reflectors",
            d.epoch,
            d.acked.len()
        ));
        for (id, why) in &d.failed {
            log(format!("routing epoch {} not delivered to {id}: {why}", d.epoch));
            st.supervisor.note_unreachable(*id);
        }
    }
}

fn supervise(
    shared: &Shared,
    now: Millis,
    nonce: &mut u64,
    hook: &mut dyn RestartHook,
    sink: &mut dyn NotificationSink,
) {
    // probe without holding the lock, then fold the results in
    let (targets, addrs, deadline) = {
        let st = shared.lock();
        (
            st.supervisor.probe_targets(),
            addresses(&st.registry),
            st.supervisor.config().probe_deadline_ms,
        )
    };
    let mut transport = TcpProbe(addrs);
    let mut results = BTreeMap::new();
    for id in targets {
        *nonce += 1;
        let reply = transport.send_probe(id, *nonce, deadline);
        let outcome = judge_probe_reply(id, *nonce, deadline, reply.as_ref().map(|(l, t)| (l.as_str(), *t)));
        results.insert(id, outcome);
    }
    let actions = shared.lock().supervisor.supervise_tick(now, &results);
    for action in actions {
        match action {
            SupervisorAction::Restart { reflector, attempt } => {
                // the old process holds the lease; the new one must be able to register
                if shared.lock().registry.deregister(reflector).is_ok() {
                    log(format!("dropped the lease of {reflector}"));
                }
                log(format!("restarting {reflector} (attempt {attempt})"));
                if let Err(e) = hook.restart(reflector, attempt) {
                    log(format!("restart of {reflector} failed: {e}"));
                }
            }
            SupervisorAction::Notify(ev) => {
                log(format!("notifying {:?}: {}", ev.recipients, ev.reason));
                if let Err(e) = sink.notify(&ev) {
                    log(format!("notification could not be written: {e}"));
                }
            }
        }
    }
}

fn notification_sink(cfg: &Config) -> Box<dyn NotificationSink + Send> {
    if let Some(path) = &cfg.notify_log {
        match OpenOptions::new().create(true).append(true).open(path) {
            Ok(f) => return Box::new(JsonLinesSink::new(f)),
            Err(e) => log(format!("cannot open {}: {e}; notifications go to stderr", path.display())),
        }
    }
    Box::new(JsonLinesSink::new(io::stderr()))
}

struct CommandRestart(Option<String>);

impl RestartHook for CommandRestart {
    fn restart(&mut self, reflector: ReflectorId, _attempt: u32) -> Result<(), String> {
        let Some(cmd) = &self.0 else {
            return Err("no restart_command configured".into());
        };
        let cmd = cmd.replace("{id}", &reflector.0.to_string());
        let status = Command::new("sh").arg("-c").arg(&cmd).status().map_err(|e| e.to_string())?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("{cmd:?} exited with {status}"))
        }
    }
}

struct TcpProbe(BTreeMap<ReflectorId, String>);

impl ProbeTransport for TcpProbe {
    fn send_probe(&mut self, reflector: ReflectorId, nonce: u64, deadline_ms: Millis) -> Option<(String, Millis)> {
        let addr = self.0.get(&reflector)?;
        let started = Instant::now();
        let deadline = Duration::from_millis(deadline_ms.max(1));
        let mut conn = LineConn::connect(addr, deadline).ok()?;
        conn.set_read_timeout(Some(deadline)).ok()?;
        conn.send(&Message::Probe { nonce }).ok()?;
        let line = conn.recv_line().ok()??;
        Some((line, started.elapsed().as_millis() as Millis))
    }
}

struct TcpRoutingSink(BTreeMap<ReflectorId, String>);

impl RoutingSink for TcpRoutingSink {
    fn install(&mut self, reflector: ReflectorId, table: &RoutingTable) -> Result<u64, String> {
        let addr = self.0.get(&reflector).ok_or("no control address")?;
        let msg = Message::InstallRouting {
            epoch: table.epoch,
            reflector,
            table: table.clone(),
        };
        match crate::wire::request(addr, &msg).map_err(|e| e.to_string())? {
            Message::Ack { epoch, .. } => Ok(epoch.unwrap_or(0)),
            Message::Error { code, message } => Err(format!("{code}: {message}")),
            other => Err(format!("unexpected reply {other:?}")),
        }
    }
}

/// Registration check: the control address must accept a connection.
struct TcpReachable;

impl AddressProbe for TcpReachable {
    fn probe_address(&self, address: &str) -> bool {
        resolve(address)
            .and_then(|a| TcpStream::connect_timeout(&a, CONNECT_TIMEOUT))
            .is_ok()
    }
}

pub fn control_error_code(e: &ControlError) -> &'static str {
    match e {
        ControlError::DuplicateId(_) => "duplicate_id",
        ControlError::InvalidId => "invalid_id",
        ControlError::ProbeFailed(_) => "probe_failed",
        ControlError::UnknownReflector(_) => "unknown_reflector",
        ControlError::EpochConflict { .. } => "epoch_conflict",
        ControlError::InvalidLink(_) => "invalid_link",
    }
}

fn reply(result: Result<Option<u64>, ControlError>) -> Message {
    match result {
        Ok(epoch) => Message::Ack { epoch, detail: None },
        Err(e) => Message::error(control_error_code(&e), e.to_string()),
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let mut conn = LineConn::new(stream)?;
    loop {
        let msg = match conn.recv() {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                conn.send(&Message::error("bad_request", e.to_string()))?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let answer = match msg {
            Message::Register {
                reflector,
                control_address,
                region,
                ..
            } => {
                let mut st = shared.lock();
                let entry = RegistryEntry::new(reflector, control_address.clone(), region, now_ms());
                let r = st.registry.register_reflector(entry, &TcpReachable);
                if r.is_ok() {
                    st.supervisor.watch(reflector);
                    // an operator bringing a failed reflector back is what clears it
                    if st.supervisor.clear_failed(reflector).is_ok() {
                        log(format!("{reflector} is back after failing"));
                    }
                    log(format!("registered {reflector} at {control_address}"));
                }
                reply(r.map(Some))
            }
            Message::Heartbeat { reflector, .. } => reply(shared.lock().registry.heartbeat(reflector, now_ms()).map(|_| None)),
            Message::Deregister { reflector } => {
                let mut st = shared.lock();
                let r = st.registry.deregister(reflector);
                if r.is_ok() {
                    st.supervisor.unwatch(reflector);
                    log(format!("deregistered {reflector}"));
                }
                reply(r.map(|_| None))
            }
            Message::Advertise { reflector, rooms } => {
                reply(shared.lock().registry.advertise_membership(reflector, rooms).map(|_| None))
            }
            Message::LinkReport {
                reflector,
                stats,
                quality,
            } => reply(shared.lock().registry.report_link(reflector, stats, quality).map(|_| None)),
            Message::Snapshot { snapshot: None, .. } => {
                let snap = shared.lock().registry.snapshot();
                Message::Snapshot {
                    epoch: snap.epoch,
                    snapshot: Some(snap),
                }
            }
            Message::Event { sample } => {
                // fire and forget: reflectors stream these
                if let Err(e) = shared.monitor.record_sample(sample) {
                    log(format!("sample rejected: {e}"));
                }
                continue;
            }
            Message::Probe { nonce } => Message::ProbeReply {
                reflector: ReflectorId::NONE,
                nonce,
                epoch: shared.lock().registry.epoch(),
            },
            Message::Subscribe {
                filter,
                reflectors,
                min_interval_ms,
                topology,
            } => {
                if let Err(e) = compile_pattern(&filter) {
                    conn.send(&Message::error("bad_pattern", e.to_string()))?;
                    continue;
                }
                let mut sub = Subscription::new(filter).min_interval(min_interval_ms);
                sub.reflector_filter = reflectors;
                return stream_subscription(conn, shared, &sub, topology);
            }
            other => Message::error("unsupported", format!("the registry does not handle {}", kind_of(&other))),
        };
        conn.send(&answer)?;
    }
}

fn kind_of(m: &Message) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_owned))
        .unwrap_or_default()
}

fn stream_subscription(mut conn: LineConn, shared: &Shared, sub: &Subscription, topology: bool) -> io::Result<()> {
    let samples = BoundedQueue::new(DEFAULT_SUBSCRIBER_QUEUE);
    let topo = BoundedQueue::new(16);
    let id = shared
        .monitor
        .subscribe(sub, samples.clone())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    if topology {
        shared.lock().registry.subscribe(topo.clone());
    }
    let result = (|| -> io::Result<()> {
        conn.send(&Message::ack())?;
        loop {
            for ev in topo.drain() {
                if let RegistryEvent::Snapshot(snap) = ev {
                    conn.send(&Message::Snapshot {
                        epoch: snap.epoch,
                        snapshot: Some(snap),
                    })?;
                }
            }
            for sample in samples.drain() {
                conn.send(&Message::Event { sample })?;
            }
            thread::sleep(STREAM_POLL);
        }
    })();
    shared.monitor.unsubscribe(id);
    if topology {
        shared.lock().registry.unsubscribe(&topo);
    }
    result
}
