//! Brute-force oracles and reference models shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::Rng;
use vrvs_core::model::{ClientId, LinkKey, MediaPacket, PayloadType, ReflectorId, RoomId};
use vrvs_core::optimizer::WeightedGraph;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled_scenarios() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios directory")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".schema.json"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// Random graph on 1..=max_n vertices with integer weights in 1..=10 and
/// integer capacities in 0..=10. Not necessarily connected.
pub fn random_graph(rng: &mut impl Rng, max_n: u32) -> WeightedGraph {
    let n = rng.random_range(1..=max_n);
    let p: f64 = rng.random_range(0.15..0.9);
    let mut g = WeightedGraph::new();
    for v in 1..=n {
        g.add_vertex(ReflectorId(v));
    }
    for a in 1..=n {
        for b in a + 1..=n {
            if rng.random_bool(p) {
                let w = f64::from(rng.random_range(1..=10_u32));
                let c = f64::from(rng.random_range(0..=10_u32));
                g.add_edge(ReflectorId(a), ReflectorId(b), w, c);
            }
        }
    }
    g
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

fn components(g: &WeightedGraph) -> usize {
    let idx: Vec<ReflectorId> = g.vertices.iter().copied().collect();
    let pos = |v: ReflectorId| idx.binary_search(&v).unwrap();
    let mut parent: Vec<usize> = (0..idx.len()).collect();
    let mut c = idx.len();
    for k in g.edges.keys() {
        let (a, b) = (find(&mut parent, pos(k.low())), find(&mut parent, pos(k.high())));
        if a != b {
            parent[a] = b;
            c -= 1;
        }
    }
    c
}

/// Minimum total weight over every acyclic edge subset with
/// `n - components` edges, i.e. every spanning forest, by exhaustive search.
pub fn brute_force_mst_weight(g: &WeightedGraph) -> f64 {
    let idx: Vec<ReflectorId> = g.vertices.iter().copied().collect();
    let edges: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .map(|(k, e)| {
            (
                idx.binary_search(&k.low()).unwrap(),
                idx.binary_search(&k.high()).unwrap(),
                e.weight,
            )
        })
        .collect();
    let need = idx.len() - components(g);
    let mut best = f64::INFINITY;
    let parent: Vec<usize> = (0..idx.len()).collect();
    fn rec(edges: &[(usize, usize, f64)], i: usize, left: usize, parent: Vec<usize>, sum: f64, best: &mut f64) {
        if left == 0 {
            *best = best.min(sum);
            return;
        }
        if edges.len() - i < left {
            return;
        }
        // skip edge i
        rec(edges, i + 1, left, parent.clone(), sum, best);
        // take edge i if it joins two trees
        let (a, b, w) = edges[i];
        let mut p = parent;
        let (ra, rb) = (find(&mut p, a), find(&mut p, b));
        if ra != rb {
            p[ra] = rb;
            rec(edges, i + 1, left - 1, p, sum + w, best);
        }
    }
    rec(&edges, 0, need, parent, 0.0, &mut best);
    if need == 0 {
        0.0
    } else {
        best
    }
}

/// Minimum s-t cut capacity by enumerating every vertex subset that holds
/// `s` and not `t`.
pub fn brute_force_min_cut(g: &WeightedGraph, s: ReflectorId, t: ReflectorId) -> f64 {
    let others: Vec<ReflectorId> = g.vertices.iter().copied().filter(|&v| v != s && v != t).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << others.len()) {
        let mut side: BTreeSet<ReflectorId> = BTreeSet::from([s]);
        for (i, &v) in others.iter().enumerate() {
            if mask & (1 << i) != 0 {
                side.insert(v);
            }
        }
        let cut: f64 = g
            .edges
            .iter()
            .filter(|(k, _)| side.contains(&k.low()) != side.contains(&k.high()))
            .map(|(_, e)| e.capacity)
            .sum();
        best = best.min(cut);
    }
    best
}

pub fn is_acyclic(edges: &BTreeSet<LinkKey>, vertices: &BTreeSet<ReflectorId>) -> bool {
    let idx: Vec<ReflectorId> = vertices.iter().copied().collect();
    let mut parent: Vec<usize> = (0..idx.len()).collect();
    for k in edges {
        let a = find(&mut parent, idx.binary_search(&k.low()).unwrap());
        let b = find(&mut parent, idx.binary_search(&k.high()).unwrap());
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

/// Reference supervision machine for one reflector, written as a transition
/// table over (consecutive misses, restarts issued, failed).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReferenceWatchdog {
    pub misses: u32,
    pub restarts: u32,
    pub failed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefOutput {
    Nothing,
    Restart(u32),
    Notify,
}

impl ReferenceWatchdog {
    pub fn step(&mut self, k_miss: u32, answered: bool) -> RefOutput {
        if self.failed {
            return RefOutput::Nothing;
        }
        if answered {
            *self = Self::default();
            return RefOutput::Nothing;
        }
        self.misses += 1;
        if self.misses < k_miss {
            return RefOutput::Nothing;
        }
        // misses == k_miss starts the first restart, each further miss is
        // one more attempt, the third consecutive failure gives up
        match self.misses - k_miss {
            0 | 1 => {
                self.restarts += 1;
                RefOutput::Restart(self.restarts)
            }
            _ => {
                self.failed = true;
                RefOutput::Notify
            }
        }
    }
}

pub fn longest_miss_run(seq: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &ok in seq {
        run = if ok { 0 } else { run + 1 };
        best = best.max(run);
    }
    best
}

/// Random media packet with payloads up to 1500 bytes, occasionally
/// empty or at the 64 KiB limit.
pub fn random_packet(rng: &mut impl Rng) -> MediaPacket {
    let len = match rng.random_range(0..100) {
        0 => 0,
        1 => vrvs_core::codec::MAX_PAYLOAD,
        _ => rng.random_range(1..=1500),
    };
    let mut payload = vec![0u8; len];
    rng.fill(&mut payload[..]);
    MediaPacket {
        room: RoomId(rng.random()),
        src: ClientId(rng.random()),
        seq: rng.random(),
        timestamp_ms: rng.random(),
        payload_type: PayloadType::from_u8(rng.random_range(0..3)).unwrap(),
        flags: rng.random(),
        payload,
    }
}

/// Golden byte vectors: (name, packet, hex of the encoding).
pub fn golden_vectors() -> Vec<(&'static str, MediaPacket, &'static str)> {
    let p = |room, src, seq, ts, pt, flags, payload: &[u8]| MediaPacket {
        room: RoomId(room),
        src: ClientId(src),
        seq,
        timestamp_ms: ts,
        payload_type: pt,
        flags,
        payload: payload.to_vec(),
    };
    vec![
        (
            "worked_example",
            p(5, 7, 1, 1000, PayloadType::AudioG711u, 0, &[0xAA]),
            "56520301000000050000000700000001000003e802000001aa",
        ),
        (
            "empty_opaque",
            p(0, 0, 0, 0, PayloadType::Opaque, 0, &[]),
            "565203010000000000000000000000000000000000000000",
        ),
        (
            "max_fields_video",
            p(u32::MAX, u32::MAX, u32::MAX, u32::MAX, PayloadType::VideoH261, 0xFF, &[1, 2, 3]),
            "56520301ffffffffffffffffffffffffffffffff01ff0003010203",
        ),
    ]
}

/// Compares `actual` with `tests/golden/<name>`; `BLESS=1` rewrites the file.
pub fn check_golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {name}; run with BLESS=1"));
    assert!(expected == actual, "{name} differs from golden file:\n--- expected\n{expected}\n--- actual\n{actual}");
}
