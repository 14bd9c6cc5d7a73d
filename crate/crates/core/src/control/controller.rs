use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DeliveryReport, FlowSummary, Registry, RoutingSink};
use crate::engine::RoutingTable;
use crate::model::{ReflectorId, RoomId};
use crate::optimizer::{
    build_graph, compute_room_routes, max_flow, min_spanning_tree, should_reroute, FlowResult, RerouteDecision,
    TreeResult, DEFAULT_DELTA,
};
use crate::quality::DEFAULT_Q_MIN;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub delta: f64,
    pub q_min: f64,
    /// Reflector pair whose max flow is reported, e.g. one per region.
    pub gateways: Option<[ReflectorId; 2]>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            q_min: DEFAULT_Q_MIN,
            gateways: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstallReason {
    Initial,
    TopologyChanged,
    DeadEdge,
    Improvement,
    MembershipChanged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleReport {
    pub install: Option<InstallReason>,
    pub delivery: Option<DeliveryReport>,
    pub resynced: Vec<ReflectorId>,
    pub tree: Option<TreeResult>,
    pub flow: Option<FlowResult>,
}

/// One optimizer cycle: snapshot, graph, MST, hysteresis gate, per-room
/// pruning and publication. Holds the currently installed tree between cycles.
#[derive(Debug, Default)]
pub struct RoutingController {
    config: ControllerConfig,
    current: Option<TreeResult>,
    members: BTreeMap<RoomId, BTreeSet<ReflectorId>>,
    tables: BTreeMap<ReflectorId, RoutingTable>,
    pending: BTreeSet<ReflectorId>,
}

impl RoutingController {
    pub fn new(config: ControllerConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn current_tree(&self) -> Option<&TreeResult> {
        self.current.as_ref()
    }

    pub fn table(&self, id: ReflectorId) -> Option<&RoutingTable> {
        self.tables.get(&id)
    }

    /// Marks a reflector as needing its current table again, e.g. after a
    /// process restart wiped its state.
    pub fn request_resync(&mut self, id: ReflectorId) {
        self.pending.insert(id);
    }

    /// `exclude` removes reflectors (e.g. supervisor-failed ones) from the graph.
    pub fn cycle(
        &mut self,
        registry: &mut Registry,
        exclude: &BTreeSet<ReflectorId>,
        sink: &mut dyn RoutingSink,
    ) -> CycleReport {
        let snap = registry.snapshot();
        let graph = build_graph(&snap, &snap.quality_map(), self.config.q_min).without(exclude);
        let candidate = min_spanning_tree(&graph);
        let members: BTreeMap<RoomId, BTreeSet<ReflectorId>> = snap
            .room_members
            .iter()
            .map(|(&room, hosts)| (room, hosts.intersection(&graph.vertices).copied().collect::<BTreeSet<_>>()))
            .filter(|(_, hosts)| !hosts.is_empty())
            .collect();

        let mut tree = candidate.clone();
        let reason = match &self.current {
            None if graph.vertices.is_empty() => None,
            None => Some(InstallReason::Initial),
            Some(cur) => {
                let (reweighed, dead) = cur.reweigh(&graph);
                if reweighed.covers != candidate.covers || reweighed.components != candidate.components {
                    Some(InstallReason::TopologyChanged)
                } else {
                    match should_reroute(&reweighed, &candidate, self.config.delta, &dead) {
                        RerouteDecision::Install if dead.is_empty() => Some(InstallReason::Improvement),
                        RerouteDecision::Install => Some(InstallReason::DeadEdge),
                        RerouteDecision::Keep => {
                            let changed = members != self.members;
                            tree = reweighed;
                            self.current = Some(tree.clone());
                            changed.then_some(InstallReason::MembershipChanged)
                        }
                    }
                }
            }
        };

        let flow = self.config.gateways.and_then(|[s, t]| max_flow(&graph, s, t).ok());
        registry.set_flow(flow.as_ref().map(FlowSummary::from));

        let mut report = CycleReport {
            install: reason,
            delivery: None,
            resynced: Vec::new(),
            tree: None,
            flow,
        };

        let resync = registry.take_resync();
        if reason.is_some() {
            let epoch = registry.routing_epoch() + 1;
            let tables = compute_room_routes(&tree, &members, epoch)
                .expect("members are restricted to graph vertices, which the tree covers");
            let delivery = registry
                .publish_routing(&tables, sink)
                .expect("epoch is one past the last published");
            self.pending = delivery.failed.keys().copied().collect();
            registry.set_tree(tree.edges.clone());
            self.current = Some(tree.clone());
            self.tables = tables;
            self.members = members;
            report.delivery = Some(delivery);
            report.tree = Some(tree);
        } else {
            self.pending.extend(resync);
            let pending = std::mem::take(&mut self.pending);
            for id in pending {
                let Some(table) = self.tables.get(&id) else { continue };
                if !registry.is_live(id) {
                    self.pending.insert(id);
                    continue;
                }
                match sink.install(id, table) {
                    Ok(_) => report.resynced.push(id),
                    Err(_) => {
                        self.pending.insert(id);
                    }
                }
            }
        }
        report
    }
}
