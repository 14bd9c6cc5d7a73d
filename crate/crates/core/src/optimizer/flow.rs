use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::WeightedGraph;
use crate::model::{LinkKey, ReflectorId};

/// Residual capacity below this is treated as saturated.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("{0} is not a vertex of the graph")]
    UnknownVertex(ReflectorId),
    #[error("source and sink are both {0}")]
    SourceIsSink(ReflectorId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub source: ReflectorId,
    pub sink: ReflectorId,
    pub value: f64,
    /// Net flow on each edge, positive when it runs from `low()` to `high()`.
    pub edge_flows: BTreeMap<LinkKey, f64>,
    pub min_cut: BTreeSet<LinkKey>,
    /// Vertices on the source side of `min_cut`.
    pub source_side: BTreeSet<ReflectorId>,
}

impl FlowResult {
    /// Edges that carry flow: the rendered "maximum flow path".
    pub fn flow_edges(&self) -> BTreeSet<LinkKey> {
        self.edge_flows
            .iter()
            .filter(|(_, f)| f.abs() > EPS)
            .map(|(k, _)| *k)
            .collect()
    }

    /// Net outflow at `v`, zero at every non-terminal vertex.
    pub fn net_outflow(&self, v: ReflectorId) -> f64 {
        self.edge_flows
            .iter()
            .filter_map(|(k, &f)| {
                if k.low() == v {
                    Some(f)
                } else if k.high() == v {
                    Some(-f)
                } else {
                    None
                }
            })
            .sum()
    }
}

/// Maximum flow between two reflectors, treating every edge as a pair of
/// opposite arcs with the edge's capacity. Uses shortest augmenting paths
/// (BFS, neighbors in ascending id order), so the flow found is deterministic.
pub fn max_flow(g: &WeightedGraph, source: ReflectorId, sink: ReflectorId) -> Result<FlowResult, FlowError> {
    for v in [source, sink] {
        if !g.contains_vertex(v) {
            return Err(FlowError::UnknownVertex(v));
        }
    }
    if source == sink {
        return Err(FlowError::SourceIsSink(source));
    }

    let ids: Vec<ReflectorId> = g.vertices.iter().copied().collect();
    let index: BTreeMap<ReflectorId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = ids.len();
    let mut cap = vec![vec![0.0f64; n]; n];
    let mut flow = vec![vec![0.0f64; n]; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (key, attr) in &g.edges {
        let (a, b) = (index[&key.low()], index[&key.high()]);
        let c = attr.capacity.max(0.0);
        cap[a][b] = c;
        cap[b][a] = c;
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let (s, t) = (index[&source], index[&sink]);

    let mut value = 0.0;
    loop {
        let parent = bfs(&adj, &cap, &flow, s);
        let Some(_) = parent[t] else { break };
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            let u = parent[v].expect("on path");
            bottleneck = bottleneck.min(cap[u][v] - flow[u][v]);
            v = u;
        }
        let mut v = t;
        while v != s {
            let u = parent[v].expect("on path");
            flow[u][v] += bottleneck;
            flow[v][u] -= bottleneck;
            v = u;
        }
        value += bottleneck;
    }

    let parent = bfs(&adj, &cap, &flow, s);
    let reachable: Vec<bool> = (0..n).map(|v| v == s || parent[v].is_some()).collect();
    let mut edge_flows = BTreeMap::new();
    let mut min_cut = BTreeSet::new();
    for key in g.edges.keys() {
        let (a, b) = (index[&key.low()], index[&key.high()]);
        edge_flows.insert(*key, flow[a][b]);
        if reachable[a] != reachable[b] {
            min_cut.insert(*key);
        }
    }
    let source_side = (0..n).filter(|&v| reachable[v]).map(|v| ids[v]).collect();
    Ok(FlowResult {
        source,
        sink,
        value,
        edge_flows,
        min_cut,
        source_side,
    })
}

fn bfs(adj: &[Vec<usize>], cap: &[Vec<f64>], flow: &[Vec<f64>], s: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] && cap[u][v] - flow[u][v] > EPS {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    parent
}
