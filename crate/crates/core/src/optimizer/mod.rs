//! Global control algorithms over a topology snapshot: minimum spanning tree
//! for stream distribution, maximum flow between gateways, hysteresis on
//! rerouting and per-room pruning of the tree.

mod flow;
mod graph;
mod mst;
mod routes;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use flow::{max_flow, FlowError, FlowResult};
pub use graph::{build_graph, EdgeAttr, WeightedGraph};
pub use mst::{min_spanning_tree, TreeResult};
pub use routes::{compute_room_routes, RouteError};

use crate::model::LinkKey;

pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerouteDecision {
    Keep,
    Install,
}

/// Install when the current tree uses a dead edge, or when the candidate is
/// lighter by more than the relative margin `delta`.
pub fn should_reroute(
    current: &TreeResult,
    candidate: &TreeResult,
    delta: f64,
    dead_edges: &BTreeSet<LinkKey>,
) -> RerouteDecision {
    if current.edges.iter().any(|e| dead_edges.contains(e)) {
        return RerouteDecision::Install;
    }
    if candidate.total_weight < current.total_weight * (1.0 - delta) {
        RerouteDecision::Install
    } else {
        RerouteDecision::Keep
    }
}
