mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::net::UdpSocket;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use common::*;
use vrvs_core::codec::{decode_media_packet, encode_media_packet};
use vrvs_core::control::protocol::Message;
use vrvs_core::{ClientId, MediaPacket, PayloadType, RoomId};

const LIMIT: Duration = Duration::from_secs(15);

fn control(addr: &str, msg: &Message) -> Message {
    use std::io::Write;
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    stream
        .write_all(vrvs_core::control::protocol::encode_line(msg).as_bytes())
        .unwrap();
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line).unwrap();
    vrvs_core::control::protocol::decode_line(&line).unwrap()
}

#[test]
fn registered_reflectors_appear_in_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", "");
    let reg = registry(dir.path(), &cfg);
    let _r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let _r2 = reflector(dir.path(), &cfg, &reg.addr, 2);
    let snap = eventually(LIMIT, || {
        snapshot_json(&reg.addr).filter(|s| listed_ids(s) == [1, 2] && !s["links"].as_array().unwrap().is_empty())
    })
    .unwrap_or_else(|| panic!("R1 and R2 never showed up with a link; registry log:\n{}", reg.log()));
    assert_eq!(snap["links"][0]["stats"]["link"], serde_json::json!([1, 2]));
}

#[test]
fn duplicate_id_is_rejected_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", "");
    let reg = registry(dir.path(), &cfg);
    let _r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let o = vrvs(&[
        "run-reflector",
        "--config",
        cfg.to_str().unwrap(),
        "--registry",
        &reg.addr,
        "--id",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("DuplicateId"), "{}", stderr(&o));
}

#[test]
fn sigterm_deregisters_and_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", "");
    let mut reg = registry(dir.path(), &cfg);
    let mut r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    assert_eq!(r1.terminate(), 0, "{}", r1.log());
    assert!(reg.log().contains("deregistered R1"), "{}", reg.log());
    let snap = snapshot_json(&reg.addr).unwrap();
    assert!(listed_ids(&snap).is_empty());
    assert_eq!(reg.terminate(), 0, "{}", reg.log());
}

#[test]
fn online_and_offline_exports_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    const QUIET: &str = "monitor_interval_ms = 60000\noptimizer_interval_ms = 60000\n";
    let cfg = write_config(dir.path(), "quiet.toml", QUIET);
    let reg = registry(dir.path(), &cfg);
    let _r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let _r2 = reflector(dir.path(), &cfg, &reg.addr, 3);
    // the first measurements arrive after half a second; then the topology is still
    let file = dir.path().join("snap.json");
    let matched = eventually(LIMIT, || {
        let before = vrvs(&["topo", "export", "--format", "json", "--registry", &reg.addr]);
        let online_dot = vrvs(&["topo", "export", "--registry", &reg.addr]);
        let after = vrvs(&["topo", "export", "--format", "json", "--registry", &reg.addr]);
        let snap: serde_json::Value = serde_json::from_slice(&after.stdout).ok()?;
        if before.stdout != after.stdout || snap["links"].as_array()?.is_empty() {
            return None;
        }
        fs::write(&file, &after.stdout).unwrap();
        Some(online_dot.stdout)
    })
    .expect("the topology never settled");
    let offline_dot = vrvs(&["topo", "export", "--snapshot", file.to_str().unwrap()]);
    assert_eq!(String::from_utf8(matched).unwrap(), stdout(&offline_dot));
    let offline_json = vrvs(&["topo", "export", "--format", "json", "--snapshot", file.to_str().unwrap()]);
    assert_eq!(stdout(&offline_json), fs::read_to_string(&file).unwrap());
}

#[test]
fn media_crosses_two_reflectors_over_udp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", "");
    let reg = registry(dir.path(), &cfg);
    let r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let r2 = reflector(dir.path(), &cfg, &reg.addr, 2);

    let alice = UdpSocket::bind("127.0.0.1:0").unwrap();
    let bob = UdpSocket::bind("127.0.0.1:0").unwrap();
    bob.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
    let room = RoomId(7);
    for (client, sock, at) in [(1, &alice, &r1.addr), (2, &bob, &r2.addr)] {
        let reply = control(
            at,
            &Message::Join {
                client: ClientId(client),
                room,
                endpoint: sock.local_addr().unwrap().to_string(),
            },
        );
        assert!(matches!(reply, Message::Ack { .. }), "{reply:?}");
    }

    let mut seq = 0;
    let received = eventually(LIMIT, || {
        seq += 1;
        let p = MediaPacket {
            room,
            src: ClientId(1),
            seq,
            timestamp_ms: seq * 20,
            payload_type: PayloadType::AudioG711u,
            flags: 0,
            payload: vec![seq as u8; 40],
        };
        alice.send_to(&encode_media_packet(&p).unwrap(), &r1.addr).unwrap();
        let mut buf = [0u8; 2048];
        let (n, from) = bob.recv_from(&mut buf).ok()?;
        Some((decode_media_packet(&buf[..n]).unwrap(), from))
    })
    .unwrap_or_else(|| panic!("no media arrived; R1 log:\n{}\nR2 log:\n{}", r1.log(), r2.log()));
    let (packet, from) = received;
    assert_eq!(packet.src, ClientId(1));
    assert_eq!(packet.room, room);
    assert_eq!(from.to_string(), r2.addr, "delivered by the local reflector");
    // the sender is never echoed its own packet
    alice.set_read_timeout(Some(Duration::from_millis(300))).unwrap();
    assert!(alice.recv_from(&mut [0u8; 2048]).is_err());
}

#[test]
fn metrics_tail_streams_filtered_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", "");
    let reg = registry(dir.path(), &cfg);
    let _r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let _r2 = reflector(dir.path(), &cfg, &reg.addr, 2);
    let o = Command::new(bin())
        .args(["metrics", "tail", "--registry", &reg.addr, "--filter", "peer.*.quality"])
        .args(["--reflector", "2", "--count", "3"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3, "{out}");
    for line in out.lines() {
        let fields: Vec<&str> = line.split(' ').collect();
        assert_eq!(fields.len(), 4, "{line}");
        assert!(fields[0].ends_with('Z') && fields[0].contains('.'), "{line}");
        assert!(chrono::DateTime::parse_from_rfc3339(fields[0]).is_ok(), "{line}");
        assert_eq!(fields[1], "R2");
        assert_eq!(fields[2], "peer.1.quality");
        let q: f64 = fields[3].parse().unwrap();
        assert!(q > 0.0 && q <= 1.0);
    }
}

#[test]
fn new_reflectors_appear_in_a_running_tail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", "");
    let reg = registry(dir.path(), &cfg);
    let _r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let mut tail = Command::new(bin())
        .args(["metrics", "tail", "--registry", &reg.addr, "--filter", "vrvs.*"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(tail.stdout.take().unwrap()).lines();
    // the subscription is live once R1's samples flow
    let first = lines.next().unwrap().unwrap();
    assert!(first.split(' ').nth(1) == Some("R1"), "{first}");

    let started = Instant::now();
    let _r9 = reflector(dir.path(), &cfg, &reg.addr, 9);
    let seen = lines
        .map_while(Result::ok)
        .find(|l| l.split(' ').nth(1) == Some("R9") || started.elapsed() > LIMIT);
    let _ = tail.kill();
    let _ = tail.wait();
    let line = seen.expect("tail ended");
    assert!(line.contains(" R9 "), "R9 never appeared within {LIMIT:?}");
}

#[test]
fn a_reflector_that_cannot_be_restarted_notifies_once() {
    let dir = tempfile::tempdir().unwrap();
    let notify = dir.path().join("notify.jsonl");
    let extra = format!(
        "restart_command = \"exit 1\"\nnotify_log = {:?}\nadmins = [\"ops@example.org\"]\n",
        notify.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), "fast.toml", &extra);
    let reg = registry(dir.path(), &cfg);
    let mut r1 = reflector(dir.path(), &cfg, &reg.addr, 1);
    let _r2 = reflector(dir.path(), &cfg, &reg.addr, 2);
    eventually(LIMIT, || snapshot_json(&reg.addr).filter(|s| listed_ids(s) == [1, 2])).unwrap();
    r1.kill();
    let first = eventually(LIMIT, || fs::read_to_string(&notify).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| panic!("no notification; registry log:\n{}", reg.log()));
    // supervision keeps running; nothing more may be sent
    std::thread::sleep(Duration::from_secs(2));
    let all = fs::read_to_string(&notify).unwrap();
    assert_eq!(all.lines().count(), 1, "{all}");
    assert_eq!(first, all);
    let ev: serde_json::Value = serde_json::from_str(all.lines().next().unwrap()).unwrap();
    assert_eq!(ev["reflector"], 1);
    assert_eq!(ev["recipients"], serde_json::json!(["ops@example.org"]));
    let log = reg.log();
    assert_eq!(log.matches("restarting R1").count(), 2, "{log}");
    assert!(listed_ids(&snapshot_json(&reg.addr).unwrap()) == [2]);
}

#[test]
fn a_killed_reflector_is_restarted_by_the_hook() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("fast.toml");
    let pidfile = dir.path().join("restarted.pid");
    let cmd = format!(
        "{} run-reflector --config {} --id {{id}} >/dev/null 2>&1 & echo $! > {}",
        bin(),
        cfg_path.display(),
        pidfile.display()
    );
    let reg_cfg = write_config(dir.path(), "registry.toml", &format!("restart_command = {cmd:?}\n"));
    let reg = registry(dir.path(), &reg_cfg);
    // the reflector config names the registry, so the hook needs no address
    fs::write(&cfg_path, format!("{FAST}registry = {:?}\n", reg.addr)).unwrap();
    let mut r1 = reflector(dir.path(), &cfg_path, &reg.addr, 1);
    eventually(LIMIT, || snapshot_json(&reg.addr).filter(|s| listed_ids(s) == [1])).unwrap();
    r1.kill();

    let back = eventually(LIMIT, || {
        let pid = fs::read_to_string(&pidfile).ok()?;
        let snap = snapshot_json(&reg.addr)?;
        (listed_ids(&snap) == [1]).then_some(pid)
    });
    if let Ok(pid) = fs::read_to_string(&pidfile) {
        let _ = Command::new("kill").args(["-KILL", pid.trim()]).status();
    }
    back.unwrap_or_else(|| panic!("R1 did not come back; registry log:\n{}", reg.log()));
    let log = reg.log();
    assert!(log.contains("restarting R1 (attempt 1)"), "{log}");
    assert!(!log.contains("notifying"), "{log}");
}
