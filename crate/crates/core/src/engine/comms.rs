use std::collections::BTreeMap;

use crate::cloud::{uplink_budget, Chunk, InterestClass, Sample};
use crate::cooperation::{cloud_aea, cloud_ingest, Rule};
use crate::messaging::{atm_message, atp_broadcast, generate_atm, generate_psm, psm_due, sia_update};
use crate::model::{
    ActionFootprint, AtmAction, Message, MessageClass, NodeId, Payload, Position, SegmentId,
    VehicleId,
};
use crate::radio::{assign_subband, AccessResult, LinkKind, LinkModel, Subband};
use crate::trace::{Delivery, IncidentRecord, MsgSent, RecordBody, UplinkRecord};

use super::decide::Decision;
use super::perception::{lane_neighbors, Seen};
use super::{InFlight, Simulation};

/// How far behind a braking vehicle its warning reaches, m.
const BRAKE_WARNING_REACH: f64 = 100.0;
/// Validity of a brake warning, s.
const BRAKE_WARNING_WINDOW: f64 = 2.0;
/// Minimum spacing of brake warnings from one vehicle, s.
const BRAKE_WARNING_SPACING: f64 = 1.0;
/// Emergency corridor extent behind and ahead of the vehicle, m, and its
/// validity, s.
const CORRIDOR_BEHIND: f64 = 10.0;
const CORRIDOR_AHEAD: f64 = 250.0;
const CORRIDOR_WINDOW: f64 = 3.0;
/// Cloud warning reach upstream and downstream of an incident, m, and its
/// validity, s.
const AEA_UPSTREAM: f64 = 150.0;
const AEA_DOWNSTREAM: f64 = 10.0;
const AEA_WINDOW: f64 = 3.0;
/// Gap reported when no leader is within sensing range, m.
const GAP_CEILING: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    /// Broadcast to nearby vehicles, plus a copy to the cloud for PSMs.
    Broadcast { to_cloud: bool },
    /// Cloud only.
    Cloud,
}

struct Outgoing {
    msg: Message,
    size: u32,
    route: Route,
}

impl Simulation {
    /// Hands over every message due by `t`, in arrival order.
    pub(super) fn deliver(&mut self, t: f64) {
        let limit = t + 1e-9;
        let (mut due, rest): (Vec<InFlight>, Vec<InFlight>) =
            std::mem::take(&mut self.in_flight).into_iter().partition(|f| f.due <= limit);
        self.in_flight = rest;
        due.sort_by(|a, b| a.due.total_cmp(&b.due).then(a.order.cmp(&b.order)));
        for f in due {
            for r in &f.receivers {
                match r {
                    NodeId::Vehicle(v) => {
                        if let Some(a) = self.agents.get_mut(v) {
                            a.inbox.push(f.msg);
                        }
                    }
                    NodeId::Cloud => self.cloud_inbox.push((f.due, f.msg)),
                }
            }
            let h = f.msg.header;
            self.emit(
                f.due,
                h.sender.vehicle(),
                RecordBody::MsgDelivered(Delivery {
                    sender: h.sender,
                    class: h.class,
                    seq: h.seq,
                    link: f.link,
                    sent_at: h.timestamp,
                    receivers: f.receivers,
                }),
            );
        }
    }

    pub(super) fn refresh_tables(&mut self, t: f64) {
        let period = self.cfg.psm_period;
        for a in self.agents.values_mut() {
            let inbox = std::mem::take(&mut a.inbox);
            sia_update(&mut a.table, &inbox, &self.ctx, t, period);
        }
    }

    /// Cloud ingestion; each new incident triggers a brake warning to the
    /// vehicles on nearby segments.
    pub(super) fn cloud_phase(&mut self, t: f64) {
        let received = std::mem::take(&mut self.cloud_inbox);
        let incidents = cloud_ingest(
            &mut self.cloud,
            &self.network,
            &received,
            t,
            3.0 * self.cfg.psm_period,
        );
        for inc in incidents {
            let warned = cloud_aea(inc.segment, &self.network, self.cfg.cloud.aea_hops);
            let lanes = self.network.segment(inc.segment).map_or(1, |s| s.lane_count);
            let Ok(footprint) = ActionFootprint::new(
                inc.segment,
                (1, lanes),
                (inc.s - AEA_UPSTREAM, inc.s + AEA_DOWNSTREAM),
                (t, t + AEA_WINDOW),
            ) else {
                continue;
            };
            let seq = self.seq.next(NodeId::Cloud, MessageClass::Atm);
            let Ok(msg) = atm_message(NodeId::Cloud, AtmAction::Brake, footprint, &self.network, t, seq) else {
                continue;
            };
            let candidates: Vec<(NodeId, f64)> = self
                .agents
                .values()
                .filter(|a| warned.contains(&a.state.position.segment))
                .map(|a| (NodeId::Vehicle(a.state.id), 0.0))
                .collect();
            // the downlink is scheduled by the base station, not contended
            let slot = self.cfg.radio.subbands.slot;
            let access = AccessResult {
                latency: slot,
                attempts: 1,
            };
            self.emit(
                t,
                None,
                RecordBody::MsgSent(MsgSent {
                    sender: NodeId::Cloud,
                    class: MessageClass::Atm,
                    seq,
                    subband: Subband::One.number(),
                    size_bytes: self.cfg.radio.atm_bytes,
                    recipients: candidates.len() as u32,
                    attempts: access.attempts,
                    access_latency: access.latency,
                    atm: Some(AtmAction::Brake),
                    footprint: Some(footprint),
                    psm: None,
                }),
            );
            let v2b = self.cfg.radio.v2b.model(LinkKind::V2b);
            self.transmit(&msg, &v2b, t, t + access.latency, &candidates);
            self.emit(
                t,
                Some(inc.vehicle),
                RecordBody::Incident(IncidentRecord {
                    kind: inc.kind,
                    segment: inc.segment,
                    warned: warned.into_iter().collect(),
                }),
            );
        }
    }

    /// One broadcast over one link; returns the receivers in range.
    fn transmit(
        &mut self,
        msg: &Message,
        link: &LinkModel,
        sent: f64,
        on_air: f64,
        candidates: &[(NodeId, f64)],
    ) -> u32 {
        let in_range = candidates.iter().filter(|(_, d)| link.in_range(*d)).count() as u32;
        let b = atp_broadcast(link, on_air, candidates, &mut self.rng);
        if let Some(&(_, due)) = b.delivered.first() {
            self.in_flight.push(InFlight {
                due,
                order: self.flight_order,
                msg: *msg,
                link: link.kind,
                receivers: b.delivered.iter().map(|d| d.0).collect(),
            });
            self.flight_order += 1;
        }
        if !b.lost.is_empty() {
            let h = msg.header;
            self.emit(
                sent,
                h.sender.vehicle(),
                RecordBody::MsgLost(Delivery {
                    sender: h.sender,
                    class: h.class,
                    seq: h.seq,
                    link: link.kind,
                    sent_at: h.timestamp,
                    receivers: b.lost,
                }),
            );
        }
        in_range
    }

    fn next_seq(&mut self, id: VehicleId, class: MessageClass) -> u64 {
        self.seq.next(NodeId::Vehicle(id), class)
    }

    /// Message generation for step `step` (ending at `t1`), radio access
    /// per subband, and link delivery.
    pub(super) fn communicate(&mut self, step: u64, t1: f64, decisions: &BTreeMap<VehicleId, Decision>) {
        let psm_steps = self.cfg.psm_period_steps();
        let info_steps = self
            .cfg
            .radio
            .infotainment_period
            .map(|p| (p / self.cfg.dt).round().max(1.0) as u64);
        let radio = self.cfg.radio.clone();
        let b = self.cfg.behavior;
        let accidents = std::mem::take(&mut self.accidents);
        let mut out: Vec<Outgoing> = vec![];
        let ids: Vec<VehicleId> = self.agents.keys().copied().collect();
        for id in ids {
            let agent = &self.agents[&id];
            let state = agent.state.clone();
            let lane_count = self
                .network
                .segment(state.position.segment)
                .map_or(1, |s| s.lane_count);
            let broadcast = Route::Broadcast { to_cloud: false };

            let plan_atm = match (agent.announce, agent.plan) {
                (true, Some(p)) if p.action.kind.atm_action().is_some() => Some(p.action),
                _ => None,
            };
            if let Some(action) = plan_atm {
                let seq = self.next_seq(id, MessageClass::Atm);
                if let Ok(msg) = generate_atm(&action, &self.network, t1, seq) {
                    out.push(Outgoing {
                        msg,
                        size: radio.atm_bytes,
                        route: broadcast,
                    });
                }
            }
            let agent = self.agents.get_mut(&id).expect("listed");
            agent.announce = false;

            let precaution = decisions.get(&id).is_some_and(|d| d.rule == Rule::BrakeWarning);
            if state.accel <= -b.brake_announce
                && !precaution
                && t1 - agent.last_brake_atm >= BRAKE_WARNING_SPACING - 1e-9
            {
                agent.last_brake_atm = t1;
                let fp = ActionFootprint::new(
                    state.position.segment,
                    (state.lane(), state.lane()),
                    (state.rear() - BRAKE_WARNING_REACH, state.position.s),
                    (t1, t1 + BRAKE_WARNING_WINDOW),
                );
                if let Ok(fp) = fp {
                    let seq = self.next_seq(id, MessageClass::Atm);
                    if let Ok(msg) = atm_message(NodeId::Vehicle(id), AtmAction::Brake, fp, &self.network, t1, seq) {
                        out.push(Outgoing {
                            msg,
                            size: radio.atm_bytes,
                            route: broadcast,
                        });
                    }
                }
            }

            let beacon = psm_due(id, step, psm_steps);
            if state.emergency && state.speed > 0.1 && beacon {
                let fp = ActionFootprint::new(
                    state.position.segment,
                    (1, lane_count),
                    (state.rear() - CORRIDOR_BEHIND, state.position.s + CORRIDOR_AHEAD),
                    (t1, t1 + CORRIDOR_WINDOW),
                );
                if let Ok(fp) = fp {
                    let seq = self.next_seq(id, MessageClass::Atm);
                    let tag = AtmAction::EmergencyVehicleAvoidance;
                    if let Ok(msg) = atm_message(NodeId::Vehicle(id), tag, fp, &self.network, t1, seq) {
                        out.push(Outgoing {
                            msg,
                            size: radio.atm_bytes,
                            route: broadcast,
                        });
                    }
                }
            }

            if accidents.contains(&id) {
                let fp = ActionFootprint::new(
                    state.position.segment,
                    (state.lane(), state.lane()),
                    (state.rear(), state.position.s),
                    (t1, t1 + 10.0),
                );
                if let Ok(fp) = fp {
                    let seq = self.next_seq(id, MessageClass::Atm);
                    if let Ok(msg) = atm_message(NodeId::Vehicle(id), AtmAction::Other, fp, &self.network, t1, seq) {
                        out.push(Outgoing {
                            msg,
                            size: radio.atm_bytes,
                            route: Route::Cloud,
                        });
                    }
                }
            }

            if beacon {
                let seq = self.next_seq(id, MessageClass::Psm);
                out.push(Outgoing {
                    msg: generate_psm(&state, t1, seq),
                    size: radio.psm_bytes,
                    route: Route::Broadcast { to_cloud: true },
                });
            }

            if let Some(n) = info_steps {
                if step % n == u64::from(id.0) % n {
                    let seq = self.next_seq(id, MessageClass::Infotainment);
                    let payload = Payload::Infotainment {
                        size: radio.infotainment_bytes,
                    };
                    out.push(Outgoing {
                        msg: Message::new(NodeId::Vehicle(id), t1, seq, payload),
                        size: radio.infotainment_bytes,
                        route: Route::Cloud,
                    });
                }
            }
        }

        // radio access, one batch per subband in generation order
        let mut access = vec![
            AccessResult {
                latency: 0.0,
                attempts: 0
            };
            out.len()
        ];
        for sb in Subband::ALL {
            let idx: Vec<usize> = (0..out.len())
                .filter(|&i| assign_subband(out[i].msg.class()) == sb)
                .collect();
            let res = self.scheduler.schedule(sb, t1, idx.len(), &mut self.rng);
            for (i, r) in idx.into_iter().zip(res) {
                access[i] = r;
            }
        }

        let v2v = radio.v2v.model(LinkKind::V2v);
        let v2f = radio.v2f.model(LinkKind::V2f);
        let v2b = radio.v2b.model(LinkKind::V2b);
        for (o, acc) in out.iter().zip(access) {
            let NodeId::Vehicle(sender) = o.msg.header.sender else { continue };
            let Some(pos) = self.agents.get(&sender).map(|a| a.state.position) else { continue };
            let on_air = t1 + acc.latency;
            let mut recipients = 0;
            if let Route::Broadcast { .. } = o.route {
                let candidates: Vec<(NodeId, f64)> = self
                    .agents
                    .values()
                    .filter(|a| a.state.id != sender)
                    .map(|a| {
                        (
                            NodeId::Vehicle(a.state.id),
                            self.network.radio_distance(&pos, &a.state.position),
                        )
                    })
                    .collect();
                recipients += self.transmit(&o.msg, &v2v, t1, on_air, &candidates);
            }
            if matches!(o.route, Route::Cloud | Route::Broadcast { to_cloud: true }) {
                let fog = radio
                    .fog_nodes
                    .iter()
                    .map(|f| {
                        let at = Position {
                            segment: SegmentId(f.segment),
                            lane: 1,
                            s: f.s,
                        };
                        self.network.radio_distance(&pos, &at)
                    })
                    .fold(f64::INFINITY, f64::min);
                let (link, d) = if o.msg.class() == MessageClass::Psm && v2f.in_range(fog) {
                    (&v2f, fog)
                } else {
                    (&v2b, 0.0)
                };
                recipients += self.transmit(&o.msg, link, t1, on_air, &[(NodeId::Cloud, d)]);
            }
            let (atm, footprint, psm) = match o.msg.payload {
                Payload::Atm { action, footprint } => (Some(action), Some(footprint), None),
                Payload::Psm(p) => (None, None, Some(p)),
                Payload::Infotainment { .. } => (None, None, None),
            };
            self.emit(
                t1,
                Some(sender),
                RecordBody::MsgSent(MsgSent {
                    sender: o.msg.header.sender,
                    class: o.msg.class(),
                    seq: o.msg.header.seq,
                    subband: assign_subband(o.msg.class()).number(),
                    size_bytes: o.size,
                    recipients,
                    attempts: acc.attempts,
                    access_latency: acc.latency,
                    atm,
                    footprint,
                    psm,
                }),
            );
        }
    }

    /// Onboard sensor sampling, delta suppression, and the split between
    /// the per-segment vehicular cloud and the shared uplink.
    pub(super) fn sense(&mut self, t1: f64) {
        let sensors = self.cfg.sensors.clone();
        if !sensors.enabled {
            return;
        }
        let bytes = sensors.rate * self.cfg.dt / 3.0;
        let truth: Vec<Seen> = self.agents.values().map(|a| Seen::of(&a.state)).collect();
        let mut arrivals = vec![];
        let ids: Vec<VehicleId> = self.agents.keys().copied().collect();
        for id in ids {
            let state = self.agents[&id].state.clone();
            if !state.kind.is_autonomous() {
                continue;
            }
            let others: Vec<Seen> = truth.iter().filter(|s| s.id != id).copied().collect();
            let gap = lane_neighbors(&state, state.lane(), &others, &self.network)
                .leader
                .map_or(GAP_CEILING, |l| l.gap.min(GAP_CEILING));
            let roughness = 0.05 * (1.0 + (state.position.s / 37.0).sin());
            for (channel, value) in [
                (crate::cloud::Channel::Speed, state.speed),
                (crate::cloud::Channel::Gap, gap),
                (crate::cloud::Channel::Roughness, roughness),
            ] {
                let sample = Sample { t: t1, channel, value };
                let eps = sensors.epsilon.get(&channel).copied().unwrap_or(0.0);
                let agent = self.agents.get_mut(&id).expect("listed");
                if sensors.suppress && !agent.suppressor.keep(&sample, eps) {
                    continue;
                }
                match sensors.interest.get(&channel) {
                    Some(InterestClass::Local) => {
                        self.vc.insert(state.position.segment, id, sample, t1);
                    }
                    Some(InterestClass::Remote) => arrivals.push((
                        id,
                        Chunk {
                            channel,
                            bytes,
                            enqueued: t1,
                        },
                    )),
                    None => {}
                }
            }
        }
        let step = uplink_budget(
            &mut self.uplink,
            arrivals,
            sensors.uplink_capacity,
            self.cfg.dt,
            t1,
            sensors.uplink_ttl,
        );
        self.emit(t1, None, RecordBody::Uplink(UplinkRecord::from(&step)));
        self.vc.evict(t1, sensors.vc_ttl);
    }
}
