//! Connectionless broadcast of periodic state messages and action-triggered
//! messages, and the neighbor table each vehicle builds from what it hears.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cooperation::Action;
use crate::model::{
    ActionFootprint, AtmAction, JunctionId, Message, MessageClass, NodeId, Payload, Position,
    PsmPayload, RoadNetwork, SegmentId, SignalPlan, VehicleId, VehicleState,
};
use crate::radio::{deliver_at_distance, LinkModel, LinkOutcome};

/// Per-(sender, class) sequence numbers starting at 0.
#[derive(Debug, Clone, Default)]
pub struct Sequencer {
    next: BTreeMap<(NodeId, MessageClass), u64>,
}

impl Sequencer {
    pub fn next(&mut self, sender: NodeId, class: MessageClass) -> u64 {
        let slot = self.next.entry((sender, class)).or_insert(0);
        let seq = *slot;
        *slot += 1;
        seq
    }
}

/// Whether `id` beacons at `step` given a period of `period_steps` steps.
/// Vehicles are spread over the period by id.
pub fn psm_due(id: VehicleId, step: u64, period_steps: u64) -> bool {
    let p = period_steps.max(1);
    step % p == u64::from(id.0) % p
}

pub fn generate_psm(ego: &VehicleState, t: f64, seq: u64) -> Message {
    Message::new(
        NodeId::Vehicle(ego.id),
        t,
        seq,
        Payload::Psm(PsmPayload::of(ego)),
    )
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AtmError {
    #[error("{0:?} actions are not announced")]
    NotAnnounced(crate::cooperation::ActionKind),
    #[error("footprint does not fit the road network")]
    InvalidFootprint,
}

pub fn generate_atm(
    action: &Action,
    network: &RoadNetwork,
    t: f64,
    seq: u64,
) -> Result<Message, AtmError> {
    let tag = action
        .kind
        .atm_action()
        .ok_or(AtmError::NotAnnounced(action.kind))?;
    atm_message(NodeId::Vehicle(action.issuer), tag, action.footprint, network, t, seq)
}

/// ATM with an explicit tag, for senders that are not executing an
/// arbitrated action (cloud warnings, accident reports).
pub fn atm_message(
    sender: NodeId,
    action: AtmAction,
    footprint: ActionFootprint,
    network: &RoadNetwork,
    t: f64,
    seq: u64,
) -> Result<Message, AtmError> {
    if !footprint.is_valid_on(network) {
        return Err(AtmError::InvalidFootprint);
    }
    Ok(Message::new(sender, t, seq, Payload::Atm { action, footprint }))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Broadcast {
    pub delivered: Vec<(NodeId, f64)>,
    pub lost: Vec<NodeId>,
}

/// One-to-all broadcast over a single link kind. Candidates are visited in
/// the given order, one loss draw each for those in range; receivers out of
/// range are silently skipped. Deliveries arrive `base_latency` after
/// `on_air`.
pub fn atp_broadcast<R: Rng + ?Sized>(
    link: &LinkModel,
    on_air: f64,
    candidates: &[(NodeId, f64)],
    rng: &mut R,
) -> Broadcast {
    let mut out = Broadcast::default();
    for (node, distance) in candidates {
        if !link.in_range(*distance) {
            continue;
        }
        match deliver_at_distance(link, *distance, rng) {
            LinkOutcome::Delivered => out.delivered.push((*node, on_air + link.base_latency)),
            LinkOutcome::Lost => out.lost.push(*node),
        }
    }
    out
}

/// Road facts every vehicle knows in advance.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticContext {
    pub segments: BTreeMap<SegmentId, (f64, u8)>,
    pub signals: BTreeMap<JunctionId, Option<SignalPlan>>,
}

impl StaticContext {
    pub fn of(network: &RoadNetwork) -> Self {
        Self {
            segments: network
                .segments()
                .iter()
                .map(|s| (s.id, (s.speed_limit, s.lane_count)))
                .collect(),
            signals: network
                .intersections()
                .iter()
                .map(|i| (i.id, i.signal.clone()))
                .collect(),
        }
    }

    fn knows(&self, p: &Position) -> bool {
        self.segments
            .get(&p.segment)
            .is_some_and(|(_, lanes)| p.lane >= 1 && p.lane <= *lanes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub psm: PsmPayload,
    pub seq: u64,
    /// Generation time of the PSM.
    pub sent_at: f64,
    pub received_at: f64,
    pub stale: bool,
}

impl NeighborEntry {
    /// Position projected forward at constant speed to time `t`.
    pub fn extrapolated(&self, t: f64) -> Position {
        let mut p = self.psm.position;
        p.s += self.psm.speed * (t - self.sent_at).max(0.0);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeardAtm {
    pub sender: NodeId,
    pub seq: u64,
    pub action: AtmAction,
    pub footprint: ActionFootprint,
}

/// What one vehicle knows about the others. Holds only the latest message
/// per peer; there is no session state.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    owner: VehicleId,
    entries: BTreeMap<VehicleId, NeighborEntry>,
    events: BTreeMap<(NodeId, AtmAction), HeardAtm>,
}

impl NeighborTable {
    pub fn new(owner: VehicleId) -> Self {
        Self {
            owner,
            entries: BTreeMap::new(),
            events: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> VehicleId {
        self.owner
    }

    pub fn entries(&self) -> &BTreeMap<VehicleId, NeighborEntry> {
        &self.entries
    }

    pub fn get(&self, id: VehicleId) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    /// ATMs whose footprint has not yet expired, in (sender, tag) order.
    pub fn events(&self) -> impl Iterator<Item = &HeardAtm> {
        self.events.values()
    }
}

/// Applies deliveries received this step, then drops entries older than
/// three PSM periods and ATMs whose footprint window has passed.
pub fn sia_update(
    table: &mut NeighborTable,
    delivered: &[Message],
    ctx: &StaticContext,
    t: f64,
    psm_period: f64,
) {
    for msg in delivered {
        if msg.header.sender == NodeId::Vehicle(table.owner) {
            continue;
        }
        match msg.payload {
            Payload::Psm(psm) => {
                let Some(id) = msg.header.sender.vehicle() else {
                    continue;
                };
                if !ctx.knows(&psm.position) {
                    continue;
                }
                let newer = table
                    .entries
                    .get(&id)
                    .map_or(true, |e| msg.header.seq > e.seq);
                if newer {
                    table.entries.insert(
                        id,
                        NeighborEntry {
                            psm,
                            seq: msg.header.seq,
                            sent_at: msg.header.timestamp,
                            received_at: t,
                            stale: false,
                        },
                    );
                }
            }
            Payload::Atm { action, footprint } => {
                let key = (msg.header.sender, action);
                let newer = table
                    .events
                    .get(&key)
                    .map_or(true, |e| msg.header.seq > e.seq);
                if newer {
                    table.events.insert(
                        key,
                        HeardAtm {
                            sender: msg.header.sender,
                            seq: msg.header.seq,
                            action,
                            footprint,
                        },
                    );
                }
            }
            Payload::Infotainment { .. } => {}
        }
    }
    let horizon = 3.0 * psm_period + 1e-9;
    table.entries.retain(|_, e| t - e.sent_at <= horizon);
    for e in table.entries.values_mut() {
        e.stale = t - e.sent_at > 2.0 * psm_period + 1e-9;
    }
    table.events.retain(|_, e| t < e.footprint.time().1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BehaviorMode, Heading, VehicleKind};
    use crate::radio::LinkKind;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(id: u32, s: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            kind: VehicleKind::Adv,
            position: Position {
                segment: SegmentId(0),
                lane: 1,
                s,
            },
            speed: 20.0,
            heading: Heading::LaneAligned,
            accel: 0.0,
            length: 4.5,
            desired_speed: 25.0,
            malfunction: false,
            behavior: BehaviorMode::FreeDriving,
            emergency: false,
        }
    }

    fn ctx() -> StaticContext {
        StaticContext::of(&RoadNetwork::ring(1000.0, 2, 30.0).unwrap())
    }

    #[test]
    fn psm_copies_state_and_sequences_increase() {
        let mut ego = state(1, 10.0);
        ego.malfunction = true;
        let mut seqs = Sequencer::default();
        let a = generate_psm(&ego, 0.0, seqs.next(NodeId::Vehicle(ego.id), MessageClass::Psm));
        let b = generate_psm(&ego, 0.1, seqs.next(NodeId::Vehicle(ego.id), MessageClass::Psm));
        assert_eq!(b.header.seq, a.header.seq + 1);
        assert_eq!(a.class(), MessageClass::Psm);
        match a.payload {
            Payload::Psm(p) => {
                assert!(p.malfunction);
                assert_eq!(p, PsmPayload::of(&ego));
            }
            _ => panic!(),
        }
        // sequences are independent per class
        assert_eq!(seqs.next(NodeId::Vehicle(ego.id), MessageClass::Atm), 0);
    }

    #[test]
    fn psm_phase_offsets_spread_vehicles() {
        let due: Vec<u64> = (0..10).filter(|s| psm_due(VehicleId(3), *s, 4)).collect();
        assert_eq!(due, vec![3, 7]);
        assert!((0..5).all(|s| psm_due(VehicleId(9), s, 1)));
    }

    #[test]
    fn atm_requires_announceable_action_and_valid_footprint() {
        let net = RoadNetwork::ring(1000.0, 2, 30.0).unwrap();
        let table = crate::cooperation::PriorityTable::default();
        let fp = ActionFootprint::new(SegmentId(0), (1, 1), (0.0, 10.0), (0.0, 1.0)).unwrap();
        let lc = Action::new(
            crate::cooperation::ActionKind::LaneChanging { target_lane: 1 },
            fp,
            VehicleId(2),
            &table,
        );
        let msg = generate_atm(&lc, &net, 0.0, 0).unwrap();
        assert!(matches!(
            msg.payload,
            Payload::Atm {
                action: AtmAction::ChangeLanes,
                ..
            }
        ));
        let keep = Action::new(crate::cooperation::ActionKind::LaneKeeping, fp, VehicleId(2), &table);
        assert!(generate_atm(&keep, &net, 0.0, 0).is_err());
        let off = ActionFootprint::new(SegmentId(0), (3, 3), (0.0, 10.0), (0.0, 1.0)).unwrap();
        let lc3 = Action::new(
            crate::cooperation::ActionKind::LaneChanging { target_lane: 3 },
            off,
            VehicleId(2),
            &table,
        );
        assert_eq!(generate_atm(&lc3, &net, 0.0, 0), Err(AtmError::InvalidFootprint));
    }

    fn link(per: f64) -> LinkModel {
        LinkModel {
            kind: LinkKind::V2v,
            range: 300.0,
            base_per: per,
            base_latency: 0.002,
        }
    }

    #[test]
    fn broadcast_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(atp_broadcast(&link(0.0), 1.0, &[], &mut rng), Broadcast::default());
        let cands: Vec<_> = (1..=3).map(|i| (NodeId::Vehicle(VehicleId(i)), 50.0 * i as f64)).collect();
        let b = atp_broadcast(&link(0.0), 1.0, &cands, &mut rng);
        assert_eq!(b.delivered.len(), 3);
        assert!(b.delivered.iter().all(|(_, at)| (*at - 1.002).abs() < 1e-12));
        let far = [(NodeId::Vehicle(VehicleId(4)), 301.0)];
        assert_eq!(atp_broadcast(&link(0.0), 1.0, &far, &mut rng), Broadcast::default());
    }

    #[test]
    fn half_loss_link_delivers_about_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let one = [(NodeId::Vehicle(VehicleId(2)), 10.0)];
        let delivered = (0..1000)
            .filter(|_| !atp_broadcast(&link(0.5), 0.0, &one, &mut rng).delivered.is_empty())
            .count();
        let frac = delivered as f64 / 1000.0;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }

    #[test]
    fn table_evicts_and_ignores_self() {
        let c = ctx();
        let mut t = NeighborTable::new(VehicleId(1));
        let own = generate_psm(&state(1, 0.0), 0.0, 0);
        let other = generate_psm(&state(2, 50.0), 0.0, 0);
        sia_update(&mut t, &[own, other], &c, 0.0, 0.1);
        assert_eq!(t.entries().len(), 1);
        assert!(t.get(VehicleId(1)).is_none());
        sia_update(&mut t, &[], &c, 0.25, 0.1);
        assert!(t.get(VehicleId(2)).unwrap().stale);
        sia_update(&mut t, &[], &c, 0.3, 0.1);
        assert_eq!(t.entries().len(), 1);
        sia_update(&mut t, &[], &c, 0.31, 0.1);
        assert!(t.entries().is_empty());
    }

    #[test]
    fn extrapolation_uses_speed_and_age() {
        let c = ctx();
        let mut t = NeighborTable::new(VehicleId(1));
        sia_update(&mut t, &[generate_psm(&state(2, 50.0), 1.0, 0)], &c, 1.0, 0.1);
        let p = t.get(VehicleId(2)).unwrap().extrapolated(1.2);
        assert!((p.s - 54.0).abs() < 1e-9);
    }

    #[test]
    fn atm_events_expire_with_footprint() {
        let c = ctx();
        let mut t = NeighborTable::new(VehicleId(1));
        let fp = ActionFootprint::new(SegmentId(0), (1, 1), (0.0, 10.0), (0.0, 1.0)).unwrap();
        let m = Message::new(
            NodeId::Vehicle(VehicleId(2)),
            0.0,
            0,
            Payload::Atm {
                action: AtmAction::Brake,
                footprint: fp,
            },
        );
        sia_update(&mut t, &[m], &c, 0.0, 0.1);
        assert_eq!(t.events().count(), 1);
        sia_update(&mut t, &[], &c, 1.0, 0.1);
        assert_eq!(t.events().count(), 0);
    }

    #[test]
    fn latest_sequence_wins_under_any_delivery_order() {
        let c = ctx();
        let msgs: Vec<Message> = (0..8)
            .map(|seq| generate_psm(&state(2, seq as f64), 0.0, seq))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut order = msgs.clone();
            order.shuffle(&mut rng);
            let mut t = NeighborTable::new(VehicleId(1));
            // deliver one at a time, as separate steps would
            for m in &order {
                sia_update(&mut t, std::slice::from_ref(m), &c, 0.0, 0.1);
            }
            let oracle = msgs.iter().map(|m| m.header.seq).max().unwrap();
            assert_eq!(t.get(VehicleId(2)).unwrap().seq, oracle);
            assert_eq!(t.get(VehicleId(2)).unwrap().psm.position.s, 7.0);
        }
    }
}
