//! Registry and control plane: registration with heartbeat leases, link and
//! membership aggregation, topology snapshots and routing distribution.

mod controller;
pub mod protocol;
mod registry;

use thiserror::Error;

pub use controller::{ControllerConfig, CycleReport, InstallReason, RoutingController};
pub use registry::{
    AddressProbe, AlwaysReachable, DeliveryReport, FlowSummary, LinkInfo, Registry, RegistryConfig, RegistryEntry,
    RegistryEvent, RoutingSink, TopologySnapshot, DEFAULT_HEARTBEAT_INTERVAL_MS, DEFAULT_PUBLISH_INTERVAL_MS,
};

use crate::model::{LinkKey, ReflectorId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("reflector {0} is already registered")]
    DuplicateId(ReflectorId),
    #[error("reflector id 0 is reserved")]
    InvalidId,
    #[error("control address {0:?} did not answer the registration probe")]
    ProbeFailed(String),
    #[error("unknown reflector {0}")]
    UnknownReflector(ReflectorId),
    #[error("routing epoch {offered} conflicts with last published epoch {last}")]
    EpochConflict { offered: u64, last: u64 },
    #[error("invalid link report for {0}")]
    InvalidLink(LinkKey),
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use super::*;
    use crate::engine::RoutingTable;
    use crate::model::{LinkStats, Millis, RoomId};
    use crate::queue::BoundedQueue;

    fn entry(id: u32, at: Millis) -> RegistryEntry {
        RegistryEntry::new(ReflectorId(id), format!("10.0.0.{id}:7000"), "US", at)
    }

    fn reg() -> Registry {
        Registry::new(RegistryConfig::default())
    }

    #[test]
    fn register_into_empty_registry() {
        let mut r = reg();
        r.register_reflector(entry(1, 0), &AlwaysReachable).unwrap();
        let s = r.snapshot();
        assert_eq!(s.reflectors.len(), 1);
        assert!(s.links.is_empty());
    }

    #[test]
    fn duplicate_and_probe_failures() {
        let mut r = reg();
        r.register_reflector(entry(1, 0), &AlwaysReachable).unwrap();
        assert_eq!(
            r.register_reflector(entry(1, 5), &AlwaysReachable),
            Err(ControlError::DuplicateId(ReflectorId(1)))
        );
        let unreachable = |_: &str| false;
        assert!(matches!(
            r.register_reflector(entry(2, 0), &unreachable),
            Err(ControlError::ProbeFailed(_))
        ));
        assert_eq!(
            r.register_reflector(entry(0, 0), &AlwaysReachable),
            Err(ControlError::InvalidId)
        );
    }

    #[test]
    fn heartbeat_liveness() {
        let mut r = reg();
        r.register_reflector(entry(1, 0), &AlwaysReachable).unwrap();
        r.register_reflector(entry(2, 0), &AlwaysReachable).unwrap();
        for t in (10_000..=60_000).step_by(10_000) {
            r.heartbeat(ReflectorId(1), t).unwrap();
            r.tick(t);
        }
        let live = r.snapshot().reflector_ids();
        assert!(live.contains(&ReflectorId(1)));
        assert!(!live.contains(&ReflectorId(2)));
        assert_eq!(
            r.heartbeat(ReflectorId(9), 0),
            Err(ControlError::UnknownReflector(ReflectorId(9)))
        );
    }

    #[test]
    fn silence_of_exactly_the_timeout_is_still_live() {
        let mut r = reg();
        r.register_reflector(entry(1, 0), &AlwaysReachable).unwrap();
        assert!(r.expire(30_000).is_empty());
        assert_eq!(r.expire(30_001), vec![ReflectorId(1)]);
    }

    #[test]
    fn advertise_and_withdraw() {
        let mut r = reg();
        r.register_reflector(entry(2, 0), &AlwaysReachable).unwrap();
        r.advertise_membership(ReflectorId(2), BTreeSet::from([RoomId(1)])).unwrap();
        assert!(r.snapshot().room_members[&RoomId(1)].contains(&ReflectorId(2)));
        r.advertise_membership(ReflectorId(2), BTreeSet::new()).unwrap();
        assert!(!r.snapshot().room_members.contains_key(&RoomId(1)));
        assert!(r.advertise_membership(ReflectorId(5), BTreeSet::new()).is_err());
    }

    #[test]
    fn publish_is_periodic_and_only_on_change() {
        let mut r = reg();
        assert!(r.tick(0).is_none());
        r.register_reflector(entry(1, 1), &AlwaysReachable).unwrap();
        assert!(r.tick(5_000).is_none(), "not due yet");
        let s = r.tick(10_000).expect("due and dirty");
        assert_eq!(s.epoch, 1);
        r.heartbeat(ReflectorId(1), 15_000).unwrap();
        assert!(r.tick(20_000).is_none(), "heartbeats alone do not change topology");
    }

    #[test]
    fn subscriber_sees_new_reflector_within_one_interval() {
        let mut r = reg();
        r.tick(0);
        let q = BoundedQueue::new(16);
        r.subscribe(q.clone());
        assert_eq!(q.drain().len(), 1);
        r.register_reflector(entry(4, 3_000), &AlwaysReachable).unwrap();
        let mut seen_at = None;
        for t in (3_000..=20_000).step_by(1_000) {
            r.tick(t);
            for ev in q.drain() {
                if let RegistryEvent::Snapshot(s) = ev {
                    if s.contains(ReflectorId(4)) && seen_at.is_none() {
                        seen_at = Some(t);
                    }
                }
            }
        }
        let seen_at = seen_at.expect("reflector appeared");
        assert!(seen_at - 3_000 <= r.config().publish_interval_ms);
    }

    #[test]
    fn unsubscribed_queue_gets_nothing_more() {
        let mut r = reg();
        let q = BoundedQueue::new(16);
        r.subscribe(q.clone());
        assert!(r.unsubscribe(&q));
        assert!(!r.unsubscribe(&q));
        q.drain();
        r.register_reflector(entry(1, 0), &AlwaysReachable).unwrap();
        r.publish();
        assert!(q.is_empty());
    }

    #[test]
    fn expiry_drops_links_tree_and_membership() {
        let mut r = reg();
        r.register_reflector(entry(1, 0), &AlwaysReachable).unwrap();
        r.register_reflector(entry(2, 0), &AlwaysReachable).unwrap();
        let key = crate::model::LinkKey::new(ReflectorId(1), ReflectorId(2));
        r.report_link(
            ReflectorId(1),
            LinkStats {
                link: key,
                rtt_ms: 10.0,
                loss_fraction: 0.0,
                capacity_kbps: 1000.0,
                sampled_at: 0,
            },
            None,
        )
        .unwrap();
        r.set_tree(BTreeSet::from([key]));
        r.advertise_membership(ReflectorId(2), BTreeSet::from([RoomId(1)])).unwrap();
        r.heartbeat(ReflectorId(1), 40_000).unwrap();
        r.expire(40_000);
        let s = r.snapshot();
        assert!(s.links.is_empty() && s.tree_edges.is_empty() && s.room_members.is_empty());
        s.check_consistency().unwrap();
    }

    struct Sink {
        down: BTreeSet<ReflectorId>,
    }

    impl RoutingSink for Sink {
        fn install(&mut self, reflector: ReflectorId, table: &RoutingTable) -> Result<u64, String> {
            if self.down.contains(&reflector) {
                Err("connection refused".into())
            } else {
                Ok(table.epoch - 1)
            }
        }
    }

    fn tables(epoch: u64, ids: &[u32]) -> BTreeMap<ReflectorId, RoutingTable> {
        ids.iter()
            .map(|&i| (ReflectorId(i), RoutingTable::new(epoch, BTreeSet::new())))
            .collect()
    }

    #[test]
    fn publish_routing_reports_partial_delivery() {
        let mut r = reg();
        for i in 1..=3 {
            r.register_reflector(entry(i, 0), &AlwaysReachable).unwrap();
        }
        let mut sink = Sink { down: BTreeSet::new() };
        let rep = r.publish_routing(&tables(1, &[1, 2, 3]), &mut sink).unwrap();
        assert_eq!(rep.acked.len(), 3);

        sink.down.insert(ReflectorId(2));
        let rep = r.publish_routing(&tables(2, &[1, 2, 3]), &mut sink).unwrap();
        assert_eq!(rep.acked.len(), 2);
        assert_eq!(rep.failed.keys().copied().collect::<Vec<_>>(), vec![ReflectorId(2)]);

        assert_eq!(
            r.publish_routing(&tables(2, &[1]), &mut sink),
            Err(ControlError::EpochConflict { offered: 2, last: 2 })
        );
        let mut mixed = tables(3, &[1]);
        mixed.insert(ReflectorId(2), RoutingTable::new(4, BTreeSet::new()));
        assert!(matches!(
            r.publish_routing(&mixed, &mut sink),
            Err(ControlError::EpochConflict { .. })
        ));
    }
}
