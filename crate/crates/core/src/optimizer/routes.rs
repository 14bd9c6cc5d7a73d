use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::TreeResult;
use crate::engine::RoutingTable;
use crate::model::{ReflectorId, RoomId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("{reflector} hosts {room} but is not covered by the tree")]
    MemberOffTree { room: RoomId, reflector: ReflectorId },
}

/// Per-reflector routing tables for one tree. For each room the egress sets
/// realize the smallest subtree connecting the room's reflectors; every
/// covered reflector gets a table, even if it carries no room.
pub fn compute_room_routes(
    tree: &TreeResult,
    room_members: &BTreeMap<RoomId, BTreeSet<ReflectorId>>,
    epoch: u64,
) -> Result<BTreeMap<ReflectorId, RoutingTable>, RouteError> {
    let adj = tree.adjacency();
    let mut tables: BTreeMap<ReflectorId, RoutingTable> = adj
        .iter()
        .map(|(&v, nbrs)| (v, RoutingTable::new(epoch, nbrs.clone())))
        .collect();

    for (&room, members) in room_members {
        if members.is_empty() {
            continue;
        }
        if let Some(&off) = members.iter().find(|m| !tree.covers.contains(m)) {
            return Err(RouteError::MemberOffTree { room, reflector: off });
        }
        for (v, egress) in pruned_subtree(&adj, members) {
            if let Some(t) = tables.get_mut(&v) {
                t.room_egress.insert(room, egress);
            }
        }
    }
    Ok(tables)
}

/// Repeatedly strips leaves that are not members. What survives is the union
/// of tree paths between members.
fn pruned_subtree(
    adj: &BTreeMap<ReflectorId, BTreeSet<ReflectorId>>,
    members: &BTreeSet<ReflectorId>,
) -> BTreeMap<ReflectorId, BTreeSet<ReflectorId>> {
    let mut live = adj.clone();
    let mut queue: VecDeque<ReflectorId> = live
        .iter()
        .filter(|(v, n)| n.len() <= 1 && !members.contains(v))
        .map(|(v, _)| *v)
        .collect();
    while let Some(v) = queue.pop_front() {
        let Some(nbrs) = live.remove(&v) else { continue };
        for u in nbrs {
            if let Some(un) = live.get_mut(&u) {
                un.remove(&v);
                if un.len() <= 1 && !members.contains(&u) {
                    queue.push_back(u);
                }
            }
        }
    }
    live
}
