use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::control::TopologySnapshot;
use crate::model::{LinkKey, ReflectorId};
use crate::quality::{classify_link, LinkClass, QualityFactor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttr {
    pub weight: f64,
    pub capacity: f64,
}

/// Undirected overlay graph with at most one edge per reflector pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub vertices: BTreeSet<ReflectorId>,
    pub edges: BTreeMap<LinkKey, EdgeAttr>,
    pub built_from_epoch: u64,
}

impl WeightedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, v: ReflectorId) {
        self.vertices.insert(v);
    }

    /// Inserts or replaces the edge between `a` and `b`, adding both vertices.
    /// Self-loops are ignored.
    pub fn add_edge(&mut self, a: ReflectorId, b: ReflectorId, weight: f64, capacity: f64) {
        if a == b {
            return;
        }
        self.vertices.insert(a);
        self.vertices.insert(b);
        self.edges.insert(LinkKey::new(a, b), EdgeAttr { weight, capacity });
    }

    pub fn edge(&self, key: LinkKey) -> Option<&EdgeAttr> {
        self.edges.get(&key)
    }

    pub fn contains_vertex(&self, v: ReflectorId) -> bool {
        self.vertices.contains(&v)
    }

    /// Neighbors of every vertex, in ascending id order.
    pub fn adjacency(&self) -> BTreeMap<ReflectorId, Vec<ReflectorId>> {
        let mut adj: BTreeMap<ReflectorId, Vec<ReflectorId>> =
            self.vertices.iter().map(|&v| (v, Vec::new())).collect();
        for key in self.edges.keys() {
            adj.entry(key.low()).or_default().push(key.high());
            adj.entry(key.high()).or_default().push(key.low());
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// The graph with `excluded` vertices and their edges removed.
    pub fn without(mut self, excluded: &BTreeSet<ReflectorId>) -> Self {
        if excluded.is_empty() {
            return self;
        }
        self.vertices.retain(|v| !excluded.contains(v));
        self.edges.retain(|k, _| !excluded.contains(&k.low()) && !excluded.contains(&k.high()));
        self
    }
}

/// Builds the optimizer's view of a snapshot. Vertices are the live
/// reflectors; an edge exists for every usable link, with weight `1 - q` and
/// capacity `capacity_kbps * q`.
///
/// Quality comes from `quality` when present, else from the value embedded in
/// the snapshot. A link with no measurement yet counts as perfect.
pub fn build_graph(
    snapshot: &TopologySnapshot,
    quality: &BTreeMap<LinkKey, QualityFactor>,
    q_min: f64,
) -> WeightedGraph {
    let mut g = WeightedGraph {
        built_from_epoch: snapshot.epoch,
        ..Default::default()
    };
    for entry in &snapshot.reflectors {
        g.add_vertex(entry.reflector);
    }
    for link in &snapshot.links {
        let key = link.stats.link;
        if !g.contains_vertex(key.low()) || !g.contains_vertex(key.high()) || key.is_self_loop() {
            continue;
        }
        let state = quality.get(&key).copied().or(link.quality);
        let q = match state {
            Some(state) if state.is_initialized() => {
                if classify_link(&state, q_min) == LinkClass::Down {
                    continue;
                }
                state.q
            }
            _ => 1.0,
        };
        g.add_edge(key.low(), key.high(), 1.0 - q, link.stats.capacity_kbps * q);
    }
    g
}
