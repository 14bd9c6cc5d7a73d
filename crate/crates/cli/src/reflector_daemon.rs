//! `run-reflector`: a forwarding engine with a TCP control port and a UDP
//! media port on the same address, registered with the registry.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use vrvs_core::codec::{decode_media_packet, HEADER_LEN, MAX_PAYLOAD};
use vrvs_core::control::protocol::Message;
use vrvs_core::engine::{Egress, EngineError, Ingress, ReflectorEngine};
use vrvs_core::model::{LinkKey, LinkStats};
use vrvs_core::monitor::{OverlayCollector, SysSampler};
use vrvs_core::quality::QualityFilter;
use vrvs_core::ReflectorId;

use crate::config::Config;
use crate::error::CliError;
use crate::wire::{self, now_ms, resolve, LineConn, CONNECT_TIMEOUT};

const POLL: Duration = Duration::from_millis(50);

struct Node {
    id: ReflectorId,
    engine: ReflectorEngine,
    /// Control (and media) address of every other registered reflector.
    peers: Mutex<BTreeMap<ReflectorId, SocketAddr>>,
    media: UdpSocket,
    registry: String,
    config: Config,
}

fn log(id: ReflectorId, msg: impl std::fmt::Display) {
    eprintln!("reflector {id}: {msg}");
}

pub fn run(config: Config, shutdown: Arc<AtomicBool>) -> Result<(), CliError> {
    if config.id == 0 {
        return Err(CliError::Config("a reflector id is required (--id or `id` in the config file)".into()));
    }
    let id = ReflectorId(config.id);
    let bind_err = |e: io::Error| CliError::Bind {
        addr: config.listen.clone(),
        reason: e.to_string(),
    };
    let listener = TcpListener::bind(&config.listen).map_err(bind_err)?;
    let addr = listener.local_addr()?;
    let media = UdpSocket::bind(addr).map_err(bind_err)?;
    media.set_read_timeout(Some(Duration::from_millis(200)))?;
    listener.set_nonblocking(true)?;
    println!("listening on {addr}");

    let node = Arc::new(Node {
        id,
        engine: ReflectorEngine::new(id),
        peers: Mutex::new(BTreeMap::new()),
        media,
        registry: config.registry.clone(),
        config,
    });
    // serving outlives the shutdown signal until the lease is given back
    let stop = Arc::new(AtomicBool::new(false));
    let control = {
        let (node, stop) = (Arc::clone(&node), Arc::clone(&stop));
        thread::spawn(move || accept_loop(&node, &listener, &stop))
    };
    let media = {
        let (node, stop) = (Arc::clone(&node), Arc::clone(&stop));
        thread::spawn(move || media_loop(&node, &stop))
    };
    let result = register(&node, addr).and_then(|()| {
        log(id, format!("registered with {}", node.registry));
        agent_loop(&node, addr, &shutdown)?;
        match wire::request(&node.registry, &Message::Deregister { reflector: id }) {
            Ok(Message::Ack { .. }) => log(id, "deregistered"),
            Ok(other) => log(id, format!("deregistration answered with {other:?}")),
            Err(e) => log(id, format!("deregistration not delivered: {e}")),
        }
        Ok(())
    });
    stop.store(true, Ordering::Relaxed);
    let _ = control.join();
    let _ = media.join();
    result
}

fn register(node: &Node, addr: SocketAddr) -> Result<(), CliError> {
    let msg = Message::Register {
        reflector: node.id,
        control_address: addr.to_string(),
        region: node.config.region.clone(),
        at: now_ms(),
    };
    match wire::request(&node.registry, &msg) {
        Ok(Message::Ack { .. }) => Ok(()),
        Ok(Message::Error { code, message }) => Err(CliError::Rejected {
            code: match code.as_str() {
                "duplicate_id" => "DuplicateId",
                "invalid_id" => "InvalidId",
                "probe_failed" => "ProbeFailed",
                _ => "Refused",
            },
            message,
        }),
        Ok(other) => Err(CliError::Unreachable(format!("unexpected reply {other:?}"))),
        Err(e) => Err(CliError::Unreachable(format!("{}: {e}", node.registry))),
    }
}

/// Heartbeats and monitoring until shutdown.
fn agent_loop(node: &Node, addr: SocketAddr, shutdown: &AtomicBool) -> Result<(), CliError> {
    let cfg = &node.config;
    let mut filter = QualityFilter::new(node.id, cfg.quality());
    let mut collector = OverlayCollector::new(node.id, now_ms());
    let start = Instant::now();
    let mut next_heartbeat = Duration::from_millis(cfg.heartbeat_interval_ms);
    let mut next_monitor = Duration::from_millis(cfg.monitor_interval_ms.min(500));
    while !shutdown.load(Ordering::Relaxed) {
        thread::sleep(POLL);
        let elapsed = start.elapsed();
        if elapsed >= next_heartbeat {
            next_heartbeat = elapsed + Duration::from_millis(cfg.heartbeat_interval_ms);
            heartbeat(node, addr);
        }
        if elapsed >= next_monitor {
            next_monitor = elapsed + Duration::from_millis(cfg.monitor_interval_ms);
            if let Err(e) = monitor_tick(node, &mut filter, &mut collector) {
                log(node.id, format!("monitoring tick failed: {e}"));
            }
        }
    }
    Ok(())
}

fn heartbeat(node: &Node, addr: SocketAddr) {
    let msg = Message::Heartbeat {
        reflector: node.id,
        at: now_ms(),
    };
    match wire::request(&node.registry, &msg) {
        Ok(Message::Ack { .. }) => {}
        Ok(Message::Error { code, .. }) if code == "unknown_reflector" => {
            // the lease ran out (e.g. the registry restarted): register again
            match register(node, addr) {
                Ok(()) => log(node.id, "re-registered"),
                Err(e) => log(node.id, format!("re-registration failed: {e}")),
            }
        }
        Ok(other) => log(node.id, format!("heartbeat answered with {other:?}")),
        Err(e) => log(node.id, format!("heartbeat failed: {e}")),
    }
}

fn refresh_peers(node: &Node) -> io::Result<()> {
    let Message::Snapshot {
        snapshot: Some(snap), ..
    } = wire::request(&node.registry, &Message::Snapshot { epoch: 0, snapshot: None })?
    else {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "expected a snapshot"));
    };
    let peers = snap
        .reflectors
        .iter()
        .filter(|e| e.reflector != node.id)
        .filter_map(|e| resolve(&e.control_address).ok().map(|a| (e.reflector, a)))
        .collect();
    *node.peers.lock().unwrap_or_else(|e| e.into_inner()) = peers;
    Ok(())
}

/// Round trip of one control probe to a peer, or `None` if it did not answer.
fn measure(peer: SocketAddr, deadline: Duration, nonce: u64) -> Option<f64> {
    let started = Instant::now();
    let stream = TcpStream::connect_timeout(&peer, deadline).ok()?;
    let mut conn = LineConn::new(stream).ok()?;
    conn.set_read_timeout(Some(deadline)).ok()?;
    match conn.request(&Message::Probe { nonce }).ok()? {
        Message::ProbeReply { nonce: n, .. } if n == nonce => Some(started.elapsed().as_secs_f64() * 1000.0),
        _ => None,
    }
}

fn monitor_tick(node: &Node, filter: &mut QualityFilter, collector: &mut OverlayCollector) -> io::Result<()> {
    let cfg = &node.config;
    refresh_peers(node)?;
    let peers = node.peers.lock().unwrap_or_else(|e| e.into_inner()).clone();
    let deadline = Duration::from_millis(cfg.probe_deadline_ms);
    let now = now_ms();
    let mut conn = LineConn::connect(&node.registry, CONNECT_TIMEOUT)?;
    let mut links = Vec::new();
    for (&peer, &addr) in &peers {
        let rtt = measure(addr, deadline, now);
        let stats = LinkStats {
            link: LinkKey::new(node.id, peer),
            rtt_ms: rtt.unwrap_or(cfg.probe_deadline_ms as f64),
            loss_fraction: if rtt.is_some() { 0.0 } else { 1.0 },
            capacity_kbps: cfg.link_capacity_kbps,
            sampled_at: now,
        };
        let quality = filter.observe(&stats).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        conn.request(&Message::LinkReport {
            reflector: node.id,
            stats: stats.clone(),
            quality: Some(quality),
        })?;
        links.push(stats);
    }
    if let Some(rooms) = node.engine.take_membership_update() {
        conn.request(&Message::Advertise {
            reflector: node.id,
            rooms,
        })?;
    }
    let mut samples = collector.collect_overlay_metrics(now, &node.engine, &links, &mut LoadAverage);
    samples.extend(filter.metric_samples(now));
    for sample in samples {
        conn.send(&Message::Event { sample })?;
    }
    Ok(())
}

/// First field of /proc/loadavg; 0 where that does not exist.
struct LoadAverage;

impl SysSampler for LoadAverage {
    fn load(&mut self) -> f64 {
        std::fs::read_to_string("/proc/loadavg")
            .ok()
            .and_then(|s| s.split_whitespace().next().and_then(|f| f.parse().ok()))
            .unwrap_or(0.0)
    }
}

fn accept_loop(node: &Arc<Node>, listener: &TcpListener, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let node = Arc::clone(node);
                thread::spawn(move || {
                    let _ = serve(stream, &node);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => log(node.id, format!("accept failed: {e}")),
        }
    }
}

fn engine_error(e: EngineError) -> Message {
    let code = match e {
        EngineError::AlreadyJoined { .. } => "already_joined",
        EngineError::UnknownClient(_) => "unknown_client",
        EngineError::AlreadyConnected(_) => "already_connected",
        EngineError::NotAMember { .. } => "not_a_member",
        EngineError::UnknownRoom(_) => "unknown_room",
        EngineError::StaleEpoch { .. } => "stale_epoch",
        EngineError::InvalidTable(_) => "invalid_table",
    };
    Message::error(code, e.to_string())
}

fn serve(stream: TcpStream, node: &Node) -> io::Result<()> {
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
        let answer = handle(node, msg);
        conn.send(&answer)?;
    }
}

fn handle(node: &Node, msg: Message) -> Message {
    let engine = &node.engine;
    match msg {
        Message::Probe { nonce } => Message::ProbeReply {
            reflector: node.id,
            nonce,
            epoch: engine.routing_epoch(),
        },
        Message::InstallRouting { reflector, table, .. } if reflector == node.id => {
            let offered = table.epoch;
            let unknown_neighbor = {
                let peers = node.peers.lock().unwrap_or_else(|e| e.into_inner());
                table.tree_neighbors.iter().any(|n| !peers.contains_key(n))
            };
            if unknown_neighbor {
                let _ = refresh_peers(node);
            }
            match engine.swap_routing_table(table) {
                Ok(previous) => {
                    log(node.id, format!("installed routing epoch {offered}"));
                    Message::Ack {
                        epoch: Some(previous),
                        detail: None,
                    }
                }
                Err(EngineError::StaleEpoch { installed, .. }) if installed >= offered => Message::Ack {
                    epoch: Some(installed),
                    detail: Some("already installed".into()),
                },
                Err(e) => engine_error(e),
            }
        }
        Message::InstallRouting { reflector, .. } => {
            Message::error("wrong_reflector", format!("this is {}, not {reflector}", node.id))
        }
        Message::Join { client, room, endpoint } => {
            let endpoint = match resolve(&endpoint) {
                Ok(a) => a.to_string(),
                Err(e) => return Message::error("bad_endpoint", format!("{endpoint:?}: {e}")),
            };
            match engine.client_endpoint(client) {
                Some(known) if known != endpoint => {
                    return Message::error("already_connected", format!("{client} is connected from {known}"))
                }
                Some(_) => {}
                None => {
                    if let Err(e) = engine.connect_client(client, endpoint) {
                        return engine_error(e);
                    }
                }
            }
            match engine.join_room(client, room) {
                Ok(ack) => Message::Ack {
                    epoch: None,
                    detail: Some(format!("{} members in {}", ack.members, ack.room)),
                },
                Err(e) => engine_error(e),
            }
        }
        Message::Leave { client, room } => match engine.leave_room(client, room) {
            Ok(ack) => Message::Ack {
                epoch: None,
                detail: Some(format!("{} members in {}", ack.members, ack.room)),
            },
            Err(e) => engine_error(e),
        },
        Message::Chair { room, action } => match engine.apply_chair_control(room, action) {
            Ok(_) => Message::ack(),
            Err(e) => engine_error(e),
        },
        _ => Message::error("unsupported", "reflectors handle probe, install_routing, join, leave and chair"),
    }
}

fn media_loop(node: &Node, stop: &AtomicBool) {
    let mut buf = vec![0u8; HEADER_LEN + MAX_PAYLOAD];
    let mut corrupt: u64 = 0;
    while !stop.load(Ordering::Relaxed) {
        let (n, from) = match node.media.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                log(node.id, format!("media socket: {e}"));
                continue;
            }
        };
        let frame = &buf[..n];
        let packet = match decode_media_packet(frame) {
            Ok(p) => p,
            Err(e) => {
                corrupt += 1;
                if corrupt.is_power_of_two() {
                    log(node.id, format!("{corrupt} undecodable frames so far, latest from {from}: {e}"));
                }
                continue;
            }
        };
        let peers = node.peers.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let ingress = if let Some((&peer, _)) = peers.iter().find(|(_, &a)| a == from) {
            Ingress::Peer(peer)
        } else if node.engine.client_endpoint(packet.src) == Some(from.to_string()) {
            Ingress::LocalClient(packet.src)
        } else {
            continue;
        };
        let fwd = node.engine.forward(&packet, ingress);
        for action in fwd.actions {
            let to = match action {
                Egress::DeliverLocal(c) => node.engine.client_endpoint(c).and_then(|e| e.parse().ok()),
                Egress::SendPeer(r) => peers.get(&r).copied(),
            };
            if let Some(to) = to {
                let _ = node.media.send_to(frame, to);
            }
        }
    }
}
