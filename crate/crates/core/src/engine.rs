//! Forwarding plane of one reflector.
//!
//! Packets are flooded along the installed distribution tree, restricted per
//! room to the pruned egress set, and fanned out to local room members. The
//! origin client never hears itself and a packet never goes back out the peer
//! it came from.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClientId, MediaPacket, ReflectorId, RoomId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{client} already joined {room}")]
    AlreadyJoined { client: ClientId, room: RoomId },
    #[error("{0} is not connected to this reflector")]
    UnknownClient(ClientId),
    #[error("{0} is already connected")]
    AlreadyConnected(ClientId),
    #[error("{client} is not a member of {room}")]
    NotAMember { client: ClientId, room: RoomId },
    #[error("no such room {0}")]
    UnknownRoom(RoomId),
    #[error("routing epoch {offered} is not newer than installed epoch {installed}")]
    StaleEpoch { installed: u64, offered: u64 },
    #[error("invalid routing table: {0}")]
    InvalidTable(String),
}

/// Where a packet entered this reflector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ingress {
    LocalClient(ClientId),
    Peer(ReflectorId),
}

/// One copy a packet must be sent to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Egress {
    DeliverLocal(ClientId),
    SendPeer(ReflectorId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    UnknownRoom,
    MutedAudio,
    MutedVideo,
    NotSelectedSpeaker,
}

/// Result of routing one packet. `epoch` names the routing table that was used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forwarded {
    pub epoch: u64,
    pub actions: Vec<Egress>,
    pub dropped: Option<DropReason>,
}

/// Installed routing decision for one reflector.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub epoch: u64,
    pub tree_neighbors: BTreeSet<ReflectorId>,
    /// Pruned egress per room. Rooms absent here are delivered locally only.
    pub room_egress: BTreeMap<RoomId, BTreeSet<ReflectorId>>,
}

impl RoutingTable {
    pub fn new(epoch: u64, tree_neighbors: BTreeSet<ReflectorId>) -> Self {
        Self {
            epoch,
            tree_neighbors,
            room_egress: BTreeMap::new(),
        }
    }

    pub fn egress(&self, room: RoomId) -> Option<&BTreeSet<ReflectorId>> {
        self.room_egress.get(&room)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        for (room, set) in &self.room_egress {
            if let Some(bad) = set.iter().find(|r| !self.tree_neighbors.contains(r)) {
                return Err(EngineError::InvalidTable(format!(
                    "egress {bad} for {room} is not a tree neighbor"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomChair {
    pub muted_audio: BTreeSet<ClientId>,
    pub muted_video: BTreeSet<ClientId>,
    pub selected_speaker: Option<ClientId>,
}

impl RoomChair {
    fn is_default(&self) -> bool {
        self.muted_audio.is_empty() && self.muted_video.is_empty() && self.selected_speaker.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "client", rename_all = "snake_case")]
pub enum ChairAction {
    MuteAudio(ClientId),
    UnmuteAudio(ClientId),
    MuteVideo(ClientId),
    UnmuteVideo(ClientId),
    SelectSpeaker(ClientId),
    ClearSpeaker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MembershipAck {
    pub room: RoomId,
    pub members: usize,
}

/// Cumulative traffic counters. Byte counts are wire bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    pub packets_in: u64,
    pub bytes_in: u64,
    pub packets_out: u64,
    pub bytes_out: u64,
    pub dropped_unknown_room: u64,
    pub dropped_chair: u64,
}

#[derive(Default)]
struct AtomicCounters {
    packets_in: AtomicU64,
    bytes_in: AtomicU64,
    packets_out: AtomicU64,
    bytes_out: AtomicU64,
    dropped_unknown_room: AtomicU64,
    dropped_chair: AtomicU64,
}

#[derive(Default)]
struct LocalState {
    clients: BTreeMap<ClientId, String>,
    rooms: BTreeMap<RoomId, BTreeSet<ClientId>>,
    chair: BTreeMap<RoomId, RoomChair>,
    membership_dirty: bool,
}

struct RoutingSlots {
    current: Arc<RoutingTable>,
    /// The table replaced by the last swap, kept so packets already routed
    /// under it finish their trip on the same tree.
    previous: Option<Arc<RoutingTable>>,
}

pub struct ReflectorEngine {
    id: ReflectorId,
    state: RwLock<LocalState>,
    routing: RwLock<RoutingSlots>,
    counters: AtomicCounters,
}

impl std::fmt::Debug for ReflectorEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReflectorEngine")
            .field("id", &self.id)
            .field("rooms", &self.room_count())
            .field("epoch", &self.routing_epoch())
            .finish()
    }
}

impl ReflectorEngine {
    pub fn new(id: ReflectorId) -> Self {
        Self {
            id,
            state: RwLock::new(LocalState::default()),
            routing: RwLock::new(RoutingSlots {
                current: Arc::new(RoutingTable::default()),
                previous: None,
            }),
            counters: AtomicCounters::default(),
        }
    }

    pub fn id(&self) -> ReflectorId {
        self.id
    }

    fn read(&self) -> RwLockReadGuard<'_, LocalState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, LocalState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn connect_client(&self, client: ClientId, endpoint: impl Into<String>) -> Result<(), EngineError> {
        let mut st = self.write();
        if st.clients.contains_key(&client) {
            return Err(EngineError::AlreadyConnected(client));
        }
        st.clients.insert(client, endpoint.into());
        Ok(())
    }

    /// Drops the client and all of its memberships.
    pub fn disconnect_client(&self, client: ClientId) -> Result<Vec<RoomId>, EngineError> {
        let mut st = self.write();
        if st.clients.remove(&client).is_none() {
            return Err(EngineError::UnknownClient(client));
        }
        let rooms: Vec<RoomId> = st
            .rooms
            .iter()
            .filter(|(_, m)| m.contains(&client))
            .map(|(r, _)| *r)
            .collect();
        for room in &rooms {
            Self::remove_member(&mut st, client, *room);
        }
        Ok(rooms)
    }

    pub fn client_endpoint(&self, client: ClientId) -> Option<String> {
        self.read().clients.get(&client).cloned()
    }

    pub fn join_room(&self, client: ClientId, room: RoomId) -> Result<MembershipAck, EngineError> {
        let mut st = self.write();
        if !st.clients.contains_key(&client) {
            return Err(EngineError::UnknownClient(client));
        }
        let members = st.rooms.entry(room).or_default();
        if !members.insert(client) {
            return Err(EngineError::AlreadyJoined { client, room });
        }
        let n = members.len();
        st.membership_dirty = true;
        Ok(MembershipAck { room, members: n })
    }

    pub fn leave_room(&self, client: ClientId, room: RoomId) -> Result<MembershipAck, EngineError> {
        let mut st = self.write();
        if !st.rooms.get(&room).is_some_and(|m| m.contains(&client)) {
            return Err(EngineError::NotAMember { client, room });
        }
        let members = Self::remove_member(&mut st, client, room);
        Ok(MembershipAck { room, members })
    }

    fn remove_member(st: &mut LocalState, client: ClientId, room: RoomId) -> usize {
        let mut remaining = 0;
        if let Some(members) = st.rooms.get_mut(&room) {
            members.remove(&client);
            remaining = members.len();
            if remaining == 0 {
                st.rooms.remove(&room);
                st.chair.remove(&room);
            }
        }
        if let Some(chair) = st.chair.get_mut(&room) {
            chair.muted_audio.remove(&client);
            chair.muted_video.remove(&client);
            if chair.selected_speaker == Some(client) {
                chair.selected_speaker = None;
            }
        }
        st.membership_dirty = true;
        remaining
    }

    pub fn apply_chair_control(&self, room: RoomId, action: ChairAction) -> Result<RoomChair, EngineError> {
        let mut st = self.write();
        let members = st.rooms.get(&room).ok_or(EngineError::UnknownRoom(room))?;
        let require_member = |client: ClientId| {
            if members.contains(&client) {
                Ok(())
            } else {
                Err(EngineError::NotAMember { client, room })
            }
        };
        match action {
            ChairAction::MuteAudio(c) | ChairAction::MuteVideo(c) | ChairAction::SelectSpeaker(c) => require_member(c)?,
            ChairAction::UnmuteAudio(_) | ChairAction::UnmuteVideo(_) | ChairAction::ClearSpeaker => {}
        }
        let chair = st.chair.entry(room).or_default();
        match action {
            ChairAction::MuteAudio(c) => {
                chair.muted_audio.insert(c);
            }
            ChairAction::UnmuteAudio(c) => {
                chair.muted_audio.remove(&c);
            }
            ChairAction::MuteVideo(c) => {
                chair.muted_video.insert(c);
            }
            ChairAction::UnmuteVideo(c) => {
                chair.muted_video.remove(&c);
            }
            ChairAction::SelectSpeaker(c) => chair.selected_speaker = Some(c),
            ChairAction::ClearSpeaker => chair.selected_speaker = None,
        }
        let out = chair.clone();
        if out.is_default() {
            st.chair.remove(&room);
        }
        Ok(out)
    }

    pub fn chair_state(&self, room: RoomId) -> RoomChair {
        self.read().chair.get(&room).cloned().unwrap_or_default()
    }

    /// Installs a newer table. Returns the epoch it replaced.
    pub fn swap_routing_table(&self, new: RoutingTable) -> Result<u64, EngineError> {
        new.validate()?;
        let mut slots = self.routing.write().unwrap_or_else(|e| e.into_inner());
        let installed = slots.current.epoch;
        if new.epoch <= installed {
            return Err(EngineError::StaleEpoch {
                installed,
                offered: new.epoch,
            });
        }
        let old = std::mem::replace(&mut slots.current, Arc::new(new));
        slots.previous = Some(old);
        Ok(installed)
    }

    pub fn routing_table(&self) -> Arc<RoutingTable> {
        Arc::clone(&self.routing.read().unwrap_or_else(|e| e.into_inner()).current)
    }

    pub fn routing_epoch(&self) -> u64 {
        self.routing_table().epoch
    }

    /// Picks the table for a packet: the one it was already routed under when
    /// still retained, the current one otherwise.
    fn table_for(&self, route_epoch: Option<u64>) -> Arc<RoutingTable> {
        let slots = self.routing.read().unwrap_or_else(|e| e.into_inner());
        match (route_epoch, &slots.previous) {
            (Some(e), Some(prev)) if e == prev.epoch && e != slots.current.epoch => Arc::clone(prev),
            _ => Arc::clone(&slots.current),
        }
    }

    pub fn forward(&self, p: &MediaPacket, ingress: Ingress) -> Forwarded {
        self.forward_with_epoch(p, ingress, None)
    }

    /// Routes one packet. `route_epoch` is the epoch an upstream reflector
    /// used; the whole decision is made against a single table.
    pub fn forward_with_epoch(&self, p: &MediaPacket, ingress: Ingress, route_epoch: Option<u64>) -> Forwarded {
        let wire = p.wire_len() as u64;
        self.counters.packets_in.fetch_add(1, Ordering::Relaxed);
        self.counters.bytes_in.fetch_add(wire, Ordering::Relaxed);

        let table = self.table_for(route_epoch);
        let st = self.read();
        let members = st.rooms.get(&p.room);
        let peers = table.egress(p.room);
        let dropped = |reason| Forwarded {
            epoch: table.epoch,
            actions: Vec::new(),
            dropped: Some(reason),
        };

        if members.is_none() && peers.is_none() {
            self.counters.dropped_unknown_room.fetch_add(1, Ordering::Relaxed);
            return dropped(DropReason::UnknownRoom);
        }
        if let Some(chair) = st.chair.get(&p.room) {
            let reason = if p.payload_type.is_audio() && chair.muted_audio.contains(&p.src) {
                Some(DropReason::MutedAudio)
            } else if p.payload_type.is_video() && chair.muted_video.contains(&p.src) {
                Some(DropReason::MutedVideo)
            } else if p.payload_type.is_video() && chair.selected_speaker.is_some_and(|s| s != p.src) {
                Some(DropReason::NotSelectedSpeaker)
            } else {
                None
            };
            if let Some(reason) = reason {
                self.counters.dropped_chair.fetch_add(1, Ordering::Relaxed);
                return dropped(reason);
            }
        }

        let ingress_client = match ingress {
            Ingress::LocalClient(c) => Some(c),
            Ingress::Peer(_) => None,
        };
        let ingress_peer = match ingress {
            Ingress::Peer(r) => Some(r),
            Ingress::LocalClient(_) => None,
        };
        let mut actions: Vec<Egress> = members
            .into_iter()
            .flatten()
            .filter(|&&c| c != p.src && Some(c) != ingress_client)
            .map(|&c| Egress::DeliverLocal(c))
            .collect();
        actions.extend(
            peers
                .into_iter()
                .flatten()
                .filter(|&&r| Some(r) != ingress_peer && r != self.id)
                .map(|&r| Egress::SendPeer(r)),
        );
        let n = actions.len() as u64;
        self.counters.packets_out.fetch_add(n, Ordering::Relaxed);
        self.counters.bytes_out.fetch_add(n * wire, Ordering::Relaxed);
        Forwarded {
            epoch: table.epoch,
            actions,
            dropped: None,
        }
    }

    /// The current local room set if it changed since the last call.
    pub fn take_membership_update(&self) -> Option<BTreeSet<RoomId>> {
        let mut st = self.write();
        if !st.membership_dirty {
            return None;
        }
        st.membership_dirty = false;
        Some(st.rooms.keys().copied().collect())
    }

    pub fn rooms(&self) -> BTreeSet<RoomId> {
        self.read().rooms.keys().copied().collect()
    }

    pub fn room_members(&self, room: RoomId) -> BTreeSet<ClientId> {
        self.read().rooms.get(&room).cloned().unwrap_or_default()
    }

    pub fn client_count(&self) -> usize {
        self.read().clients.len()
    }

    pub fn room_count(&self) -> usize {
        self.read().rooms.len()
    }

    pub fn counters(&self) -> TrafficCounters {
        let c = &self.counters;
        TrafficCounters {
            packets_in: c.packets_in.load(Ordering::Relaxed),
            bytes_in: c.bytes_in.load(Ordering::Relaxed),
            packets_out: c.packets_out.load(Ordering::Relaxed),
            bytes_out: c.bytes_out.load(Ordering::Relaxed),
            dropped_unknown_room: c.dropped_unknown_room.load(Ordering::Relaxed),
            dropped_chair: c.dropped_chair.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PayloadType;

    const R: RoomId = RoomId(1);

    fn engine_with(clients: &[u32]) -> ReflectorEngine {
        let e = ReflectorEngine::new(ReflectorId(1));
        for &c in clients {
            e.connect_client(ClientId(c), format!("client-{c}")).unwrap();
        }
        e
    }

    fn packet(src: u32, payload_type: PayloadType) -> MediaPacket {
        MediaPacket {
            room: R,
            src: ClientId(src),
            seq: 1,
            timestamp_ms: 0,
            payload_type,
            flags: 0,
            payload: vec![0; 8],
        }
    }

    fn locals(f: &Forwarded) -> Vec<u32> {
        f.actions
            .iter()
            .filter_map(|a| match a {
                Egress::DeliverLocal(c) => Some(c.0),
                Egress::SendPeer(_) => None,
            })
            .collect()
    }

    #[test]
    fn join_creates_room_and_rejects_duplicates() {
        let e = engine_with(&[1, 2]);
        assert_eq!(e.join_room(ClientId(1), R).unwrap().members, 1);
        assert_eq!(
            e.join_room(ClientId(1), R),
            Err(EngineError::AlreadyJoined { client: ClientId(1), room: R })
        );
        assert_eq!(e.room_members(R).len(), 1);
        e.join_room(ClientId(2), R).unwrap();
        assert_eq!(e.room_members(R).len(), 2);
        assert_eq!(e.client_count(), 2);
        assert_eq!(e.join_room(ClientId(9), R), Err(EngineError::UnknownClient(ClientId(9))));
    }

    #[test]
    fn leave_removes_empty_room() {
        let e = engine_with(&[1]);
        e.join_room(ClientId(1), R).unwrap();
        e.leave_room(ClientId(1), R).unwrap();
        assert!(e.rooms().is_empty());
        assert_eq!(
            e.leave_room(ClientId(9), R),
            Err(EngineError::NotAMember { client: ClientId(9), room: R })
        );
    }

    #[test]
    fn leave_clears_selected_speaker() {
        let e = engine_with(&[1, 2]);
        e.join_room(ClientId(1), R).unwrap();
        e.join_room(ClientId(2), R).unwrap();
        e.apply_chair_control(R, ChairAction::SelectSpeaker(ClientId(1))).unwrap();
        e.leave_room(ClientId(1), R).unwrap();
        assert_eq!(e.chair_state(R).selected_speaker, None);
    }

    #[test]
    fn membership_update_is_queued_once() {
        let e = engine_with(&[1]);
        assert_eq!(e.take_membership_update(), None);
        e.join_room(ClientId(1), R).unwrap();
        assert_eq!(e.take_membership_update(), Some(BTreeSet::from([R])));
        assert_eq!(e.take_membership_update(), None);
    }

    #[test]
    fn star_fanout_excludes_sender() {
        let e = engine_with(&[1, 2, 3]);
        for c in 1..=3 {
            e.join_room(ClientId(c), R).unwrap();
        }
        let f = e.forward(&packet(1, PayloadType::Opaque), Ingress::LocalClient(ClientId(1)));
        assert_eq!(
            f.actions,
            vec![Egress::DeliverLocal(ClientId(2)), Egress::DeliverLocal(ClientId(3))]
        );
    }

    #[test]
    fn unknown_room_dropped_and_counted() {
        let e = engine_with(&[1]);
        let f = e.forward(&packet(1, PayloadType::Opaque), Ingress::Peer(ReflectorId(2)));
        assert_eq!(f.dropped, Some(DropReason::UnknownRoom));
        assert!(f.actions.is_empty());
        assert_eq!(e.counters().dropped_unknown_room, 1);
    }

    #[test]
    fn audio_mute_filters_audio_only() {
        let e = engine_with(&[1, 2, 3]);
        for c in 1..=3 {
            e.join_room(ClientId(c), R).unwrap();
        }
        e.apply_chair_control(R, ChairAction::MuteAudio(ClientId(1))).unwrap();
        let audio = e.forward(&packet(1, PayloadType::AudioG711u), Ingress::LocalClient(ClientId(1)));
        assert!(audio.actions.is_empty());
        assert_eq!(audio.dropped, Some(DropReason::MutedAudio));
        let video = e.forward(&packet(1, PayloadType::VideoH261), Ingress::LocalClient(ClientId(1)));
        assert_eq!(locals(&video), vec![2, 3]);
    }

    #[test]
    fn mute_unmute_restores_state() {
        let e = engine_with(&[1]);
        e.join_room(ClientId(1), R).unwrap();
        let before = e.chair_state(R);
        e.apply_chair_control(R, ChairAction::MuteAudio(ClientId(1))).unwrap();
        assert_ne!(e.chair_state(R), before);
        e.apply_chair_control(R, ChairAction::UnmuteAudio(ClientId(1))).unwrap();
        assert_eq!(e.chair_state(R), before);
    }

    #[test]
    fn speaker_selection_filters_video() {
        let e = engine_with(&[1, 2, 3]);
        for c in 1..=3 {
            e.join_room(ClientId(c), R).unwrap();
        }
        e.apply_chair_control(R, ChairAction::SelectSpeaker(ClientId(2))).unwrap();
        let from1 = e.forward(&packet(1, PayloadType::VideoH261), Ingress::LocalClient(ClientId(1)));
        assert_eq!(from1.dropped, Some(DropReason::NotSelectedSpeaker));
        let from2 = e.forward(&packet(2, PayloadType::VideoH261), Ingress::LocalClient(ClientId(2)));
        assert_eq!(locals(&from2), vec![1, 3]);
        // audio is unaffected by speaker selection
        let audio1 = e.forward(&packet(1, PayloadType::AudioG711u), Ingress::LocalClient(ClientId(1)));
        assert_eq!(locals(&audio1), vec![2, 3]);
        assert_eq!(
            e.apply_chair_control(R, ChairAction::SelectSpeaker(ClientId(9))),
            Err(EngineError::NotAMember { client: ClientId(9), room: R })
        );
        assert_eq!(
            e.apply_chair_control(RoomId(77), ChairAction::ClearSpeaker),
            Err(EngineError::UnknownRoom(RoomId(77)))
        );
    }

    fn table(epoch: u64, neighbors: &[u32], room_peers: &[u32]) -> RoutingTable {
        let mut t = RoutingTable::new(epoch, neighbors.iter().map(|&r| ReflectorId(r)).collect());
        t.room_egress.insert(R, room_peers.iter().map(|&r| ReflectorId(r)).collect());
        t
    }

    #[test]
    fn epochs_must_increase() {
        let e = engine_with(&[]);
        assert_eq!(e.swap_routing_table(table(1, &[2], &[2])), Ok(0));
        assert_eq!(e.swap_routing_table(table(2, &[2], &[2])), Ok(1));
        assert_eq!(
            e.swap_routing_table(table(1, &[3], &[3])),
            Err(EngineError::StaleEpoch { installed: 2, offered: 1 })
        );
        assert_eq!(e.routing_table().tree_neighbors, BTreeSet::from([ReflectorId(2)]));
    }

    #[test]
    fn egress_outside_tree_rejected() {
        let e = engine_with(&[]);
        assert!(matches!(
            e.swap_routing_table(table(1, &[2], &[3])),
            Err(EngineError::InvalidTable(_))
        ));
    }

    #[test]
    fn ingress_peer_excluded() {
        let e = engine_with(&[1]);
        e.join_room(ClientId(1), R).unwrap();
        e.swap_routing_table(table(1, &[2, 3], &[2, 3])).unwrap();
        let f = e.forward(&packet(5, PayloadType::Opaque), Ingress::Peer(ReflectorId(2)));
        assert_eq!(
            f.actions,
            vec![Egress::DeliverLocal(ClientId(1)), Egress::SendPeer(ReflectorId(3))]
        );
    }

    #[test]
    fn packet_keeps_its_routing_epoch_across_swap() {
        let e = engine_with(&[]);
        e.swap_routing_table(table(1, &[2, 3], &[2, 3])).unwrap();
        e.swap_routing_table(table(2, &[4], &[4])).unwrap();
        let p = packet(5, PayloadType::Opaque);
        let old = e.forward_with_epoch(&p, Ingress::Peer(ReflectorId(2)), Some(1));
        assert_eq!(old.epoch, 1);
        assert_eq!(old.actions, vec![Egress::SendPeer(ReflectorId(3))]);
        let new = e.forward_with_epoch(&p, Ingress::Peer(ReflectorId(2)), Some(2));
        assert_eq!(new.epoch, 2);
        assert_eq!(new.actions, vec![Egress::SendPeer(ReflectorId(4))]);
        // unknown epochs fall back to the current table
        assert_eq!(e.forward_with_epoch(&p, Ingress::Peer(ReflectorId(2)), Some(0)).epoch, 2);
    }

    #[test]
    fn counters_track_wire_bytes() {
        let e = engine_with(&[1, 2, 3]);
        for c in 1..=3 {
            e.join_room(ClientId(c), R).unwrap();
        }
        e.forward(&packet(1, PayloadType::Opaque), Ingress::LocalClient(ClientId(1)));
        let c = e.counters();
        assert_eq!(c.packets_in, 1);
        assert_eq!(c.bytes_in, 32);
        assert_eq!(c.packets_out, 2);
        assert_eq!(c.bytes_out, 64);
    }

    #[test]
    fn disconnect_leaves_all_rooms() {
        let e = engine_with(&[1, 2]);
        e.join_room(ClientId(1), R).unwrap();
        e.join_room(ClientId(1), RoomId(2)).unwrap();
        e.join_room(ClientId(2), RoomId(2)).unwrap();
        assert_eq!(e.disconnect_client(ClientId(1)).unwrap(), vec![R, RoomId(2)]);
        assert_eq!(e.rooms(), BTreeSet::from([RoomId(2)]));
        assert_eq!(e.client_count(), 1);
    }
}
