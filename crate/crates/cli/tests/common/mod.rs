#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vrvs")
}

pub fn vrvs(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("vrvs runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a golden file; `BLESS=1` rewrites it instead.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e} (run with BLESS=1)", path.display()));
    assert_eq!(actual, expected, "{name} differs from its golden file");
}

/// Daemon timings short enough for tests.
pub const FAST: &str = "\
heartbeat_interval_ms = 200
liveness_timeout_ms = 20000
publish_interval_ms = 200
optimizer_interval_ms = 400
monitor_interval_ms = 300
probe_interval_ms = 200
probe_deadline_ms = 150
";

/// A daemon that is killed when dropped, with stderr captured to a file.
pub struct Daemon {
    pub child: Child,
    pub addr: String,
    log: PathBuf,
}

impl Daemon {
    pub fn spawn(dir: &Path, name: &str, args: &[&str]) -> Daemon {
        let log = dir.join(format!("{name}.log"));
        let mut child = Command::new(bin())
            .args(args)
            .stdout(Stdio::piped())
            .stderr(fs::File::create(&log).unwrap())
            .spawn()
            .expect("daemon starts");
        let mut first = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
        let addr = first
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("{name} did not report its address; log:\n{}", fs::read_to_string(&log).unwrap()))
            .to_owned();
        Daemon { child, addr, log }
    }

    pub fn log(&self) -> String {
        fs::read_to_string(&self.log).unwrap_or_default()
    }

    pub fn terminate(&mut self) -> i32 {
        let pid = self.child.id().to_string();
        let status = Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        assert!(status.success());
        self.wait(Duration::from_secs(10))
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    pub fn wait(&mut self, limit: Duration) -> i32 {
        let deadline = Instant::now() + limit;
        loop {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s.code().unwrap_or(-1);
            }
            assert!(Instant::now() < deadline, "daemon did not exit; log:\n{}", self.log());
            thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// The fast timings plus `extra`; keys in `extra` win.
pub fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let overridden = |line: &str| {
        let key = line.split('=').next().unwrap_or("").trim();
        extra.lines().any(|l| l.split('=').next().unwrap_or("").trim() == key)
    };
    let mut text: String = FAST.lines().filter(|l| !overridden(l)).map(|l| format!("{l}\n")).collect();
    text.push_str(extra);
    fs::write(&path, text).unwrap();
    path
}

pub fn registry(dir: &Path, config: &Path) -> Daemon {
    Daemon::spawn(
        dir,
        "registry",
        &["run-registry", "--config", config.to_str().unwrap(), "--listen", "127.0.0.1:0"],
    )
}

pub fn reflector(dir: &Path, config: &Path, registry: &str, id: u32) -> Daemon {
    Daemon::spawn(
        dir,
        &format!("r{id}"),
        &[
            "run-reflector",
            "--config",
            config.to_str().unwrap(),
            "--registry",
            registry,
            "--id",
            &id.to_string(),
        ],
    )
}

/// Polls `f` until it returns `Some` or the limit passes.
pub fn eventually<T>(limit: Duration, mut f: impl FnMut() -> Option<T>) -> Option<T> {
    let deadline = Instant::now() + limit;
    loop {
        if let Some(v) = f() {
            return Some(v);
        }
        if Instant::now() >= deadline {
            return None;
        }
        thread::sleep(Duration::from_millis(100));
    }
}

pub fn snapshot_json(registry: &str) -> Option<serde_json::Value> {
    let o = vrvs(&["topo", "export", "--format", "json", "--registry", registry]);
    o.status.success().then(|| serde_json::from_slice(&o.stdout).unwrap())
}

pub fn listed_ids(snap: &serde_json::Value) -> Vec<u64> {
    snap["reflectors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["reflector"].as_u64().unwrap())
        .collect()
}
