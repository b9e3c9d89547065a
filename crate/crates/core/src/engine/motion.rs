use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::config::{Arm, ScenarioKind};
use crate::cooperation::{ActionKind, Rule};
use crate::mobility::{idm_accel, integrate, lane_change_safe, OvertakeState, MAX_BRAKE};
use crate::model::{
    BehaviorMode, Heading, OvertakePhase, Position, TurnDirection, VehicleId, VehicleKind,
    VehicleState,
};
use crate::scenario::{disturbance_schedule, incoming_segment, new_vehicle, turn_lanes, PLATOON_HEADWAY};
use crate::trace::{Collision, Despawn, NearMiss, RecordBody, Spawn, StateUpdate};

use super::decide::Decision;
use super::perception::{lane_neighbors, Seen};
use super::{pair, Agent, Simulation};

/// Extra clearance required behind a spawn point, m.
const SPAWN_CLEARANCE: f64 = 2.0;

impl Simulation {
    pub(super) fn move_vehicles(&mut self, t: f64, t1: f64, decisions: &BTreeMap<VehicleId, Decision>) {
        self.apply_events(t);
        let dt = self.cfg.dt;
        let ids: Vec<VehicleId> = self.agents.keys().copied().collect();
        for id in &ids {
            let agent = &self.agents[id];
            let accel = decisions.get(id).map_or(0.0, |d| self.accel_for(agent, d, t));
            let agent = self.agents.get_mut(id).expect("listed");
            agent.state = integrate(&agent.state, accel, dt);
            if agent.wrecked {
                agent.state.speed = 0.0;
                agent.state.accel = 0.0;
            }
        }
        let changed = self.execute_lane_changes(t, &ids);
        self.transitions(t1, &ids);
        if self.cfg.kind == ScenarioKind::Intersection {
            self.spawn(t1);
        }

        for (id, agent) in self.agents.iter_mut() {
            let in_zone = self.network.in_intersection_zone(&agent.state.position);
            agent.state.heading = match agent.turn {
                Some(turn) if in_zone && self.network.intersection_at_end(agent.state.position.segment).is_some() => {
                    Heading::Turning(turn)
                }
                _ => Heading::LaneAligned,
            };
            agent.state.behavior = if changed.contains(id) {
                BehaviorMode::LaneChanging
            } else {
                decisions
                    .get(id)
                    .map_or(BehaviorMode::FreeDriving, |d| d.action.kind.behavior())
            };
        }
        self.detect_contacts(t1);

        let updates: Vec<(VehicleId, StateUpdate)> = self
            .agents
            .values()
            .map(|a| {
                let s = &a.state;
                (
                    s.id,
                    StateUpdate {
                        segment: s.position.segment,
                        lane: s.position.lane,
                        s: s.position.s,
                        speed: s.speed,
                        accel: s.accel,
                        behavior: s.behavior,
                        heading: s.heading,
                        malfunction: s.malfunction,
                        in_zone: self.network.in_intersection_zone(&s.position),
                    },
                )
            })
            .collect();
        for (id, u) in updates {
            self.emit(t1, Some(id), RecordBody::StateUpdate(u));
        }
    }

    /// Malfunction onsets and repairs, and the start of sudden braking
    /// events.
    fn apply_events(&mut self, t: f64) {
        for ev in self.malfunctions.iter_mut().filter(|e| !e.applied && t + 1e-9 >= e.at) {
            ev.applied = true;
            if let Some(a) = self.agents.get_mut(&ev.vehicle) {
                a.state.malfunction = true;
                a.repaired_at = ev.repair_after.map(|r| ev.at + r);
            }
        }
        let duration = self.cfg.events.disturbance_duration;
        for a in self.agents.values_mut() {
            if let Some(r) = a.repaired_at {
                if t + 1e-9 >= r && !a.wrecked {
                    a.state.malfunction = false;
                    a.repaired_at = None;
                }
            }
            while a.disturbances.front().is_some_and(|&s| s <= t + 1e-9) {
                a.disturbances.pop_front();
                a.disturbed_until = t + duration;
            }
        }
    }

    fn in_active_platoon(&self, id: VehicleId) -> bool {
        self.platoons
            .iter()
            .any(|p| p.active && p.followers.contains(&id))
    }

    fn accel_for(&self, agent: &Agent, d: &Decision, t: f64) -> f64 {
        let s = &agent.state;
        if agent.wrecked {
            return 0.0;
        }
        let limit = self
            .network
            .segment(s.position.segment)
            .map_or(s.desired_speed, |seg| seg.speed_limit);
        let mut idm = self.cfg.idm;
        if self.in_active_platoon(s.id) {
            idm.headway = PLATOON_HEADWAY;
        }
        let desired = s.desired_speed.min(limit);
        let leader = d.surround.current.leader.map(|l| (l.gap, l.speed));
        let mut a = idm_accel(s.speed, desired, leader, &idm).unwrap_or(-MAX_BRAKE);
        if d.queue {
            if let Some(ap) = d.approach.filter(|ap| ap.stop_distance > 0.0) {
                let stop = idm_accel(s.speed, desired, Some((ap.stop_distance, 0.0)), &idm)
                    .unwrap_or(-MAX_BRAKE);
                a = a.min(stop);
            }
        }
        match d.action.kind {
            ActionKind::Brake if d.rule == Rule::BrakeWarning => {
                a = a.min(-self.cfg.behavior.precaution_decel);
            }
            ActionKind::EmergencyAvoidance { .. } => a = a.min(-self.cfg.idm.b_comfort),
            _ => {}
        }
        if t < agent.disturbed_until {
            a = a.min(-self.cfg.events.disturbance_decel);
        }
        if s.malfunction {
            a = -MAX_BRAKE / 2.0;
        }
        a.min((limit - s.speed) / self.cfg.dt).max(-MAX_BRAKE)
    }

    fn truth_seen(&self, except: VehicleId) -> Vec<Seen> {
        self.agents
            .values()
            .filter(|a| a.state.id != except)
            .map(|a| Seen::of(&a.state))
            .collect()
    }

    /// Plans whose deadline has come execute one lane move each, in id
    /// order, if the target lane accepts the vehicle as it is now.
    fn execute_lane_changes(&mut self, t: f64, ids: &[VehicleId]) -> BTreeSet<VehicleId> {
        let backoff = self.cfg.behavior.retry_backoff;
        let mut changed = BTreeSet::new();
        for id in ids {
            let Some(agent) = self.agents.get(id) else { continue };
            let Some(plan) = agent.plan else { continue };
            if t + 1e-9 < plan.phase_deadline {
                continue;
            }
            let state = agent.state.clone();
            let lane = state.position.lane;
            let target = plan.target_lane.filter(|&l| l != lane);
            let accepted = target.map(|target| {
                let next = if target > lane { lane + 1 } else { lane - 1 };
                let seen = self.truth_seen(*id);
                let around = lane_neighbors(&state, next, &seen, &self.network);
                (next, lane_change_safe(&state, &around, &self.cfg.idm))
            });
            let agent = self.agents.get_mut(id).expect("listed");
            agent.plan = None;
            agent.announce = false;
            match accepted {
                None => {}
                Some((next, true)) => {
                    agent.state.position.lane = next;
                    changed.insert(*id);
                    match plan.action.kind {
                        ActionKind::Overtaking {
                            phase: OvertakePhase::One,
                            ..
                        } => {
                            agent.memory.overtake = OvertakeState::Passing {
                                origin_lane: plan.origin_lane.unwrap_or(lane),
                                overtaken: plan.overtaken,
                            };
                        }
                        ActionKind::Overtaking {
                            phase: OvertakePhase::Two,
                            ..
                        } => {
                            agent.memory.overtake = OvertakeState::Idle;
                            agent.memory.retry_at = t + backoff;
                        }
                        ActionKind::LaneChanging { .. } => agent.memory.retry_at = t + backoff,
                        _ => {}
                    }
                    // a member leaving its lane ends platoon mode for all
                    for p in self.platoons.iter_mut().filter(|p| p.active) {
                        if p.members().any(|m| m == *id) {
                            p.dissolve();
                        }
                    }
                }
                Some((_, false)) => agent.memory.retry_at = t + backoff,
            }
        }
        changed
    }

    /// Ring wrap-around, junction crossings and exits.
    fn transitions(&mut self, t1: f64, ids: &[VehicleId]) {
        for id in ids {
            let Some(agent) = self.agents.get_mut(id) else { continue };
            let pos = agent.state.position;
            let Some(seg) = self.network.segment(pos.segment) else { continue };
            if seg.is_ring() {
                agent.state.position.s = pos.s.rem_euclid(seg.length);
                continue;
            }
            if pos.s <= seg.length {
                continue;
            }
            let turn = agent.turn.unwrap_or(TurnDirection::Straight);
            let rule = self
                .network
                .intersection_at_end(pos.segment)
                .and_then(|i| i.turn(pos.segment, turn));
            match rule {
                Some(rule) => {
                    let to_len = self.network.segment(rule.to).map_or(0.0, |s| s.length);
                    agent.state.position = Position {
                        segment: rule.to,
                        lane: rule.to_lane,
                        s: (pos.s - seg.length).min(to_len),
                    };
                    agent.turn = None;
                    agent.plan = None;
                    agent.announce = false;
                    agent.memory.overtake = OvertakeState::Idle;
                }
                None => {
                    self.agents.remove(id);
                    self.emit(t1, Some(*id), RecordBody::Despawn(Despawn { segment: pos.segment }));
                }
            }
        }
    }

    /// Random arrivals on each approach, in arm order.
    fn spawn(&mut self, t1: f64) {
        let tr = self.cfg.traffic.clone();
        let p = tr.spawn_rate * self.cfg.dt;
        for arm in Arm::ALL {
            let u: f64 = self.rng.gen();
            if u >= p {
                continue;
            }
            let mix = tr.turn_mix;
            let x = self.rng.gen::<f64>() * (mix.left + mix.right + mix.straight);
            let turn = if x < mix.left {
                TurnDirection::Left
            } else if x < mix.left + mix.right {
                TurnDirection::Right
            } else {
                TurnDirection::Straight
            };
            let segment = incoming_segment(arm);
            let Some(seg) = self.network.segment(segment).cloned() else { continue };
            let (lo, hi) = turn_lanes(turn, seg.lane_count);
            let lane = self.rng.gen_range(lo..=hi);
            let desired = self
                .rng
                .gen_range(tr.desired_speed.0..=tr.desired_speed.1)
                .min(seg.speed_limit);
            let mdv = self.rng.gen::<f64>() < tr.mdv_fraction;
            let disturbances = disturbance_schedule(
                self.cfg.events.disturbance_rate,
                t1,
                self.cfg.duration,
                &mut self.rng,
            );

            let ahead = self
                .agents
                .values()
                .filter(|a| a.state.position.segment == segment && a.state.position.lane == lane)
                .min_by(|a, b| a.state.rear().total_cmp(&b.state.rear()));
            if ahead.is_some_and(|a| a.state.rear() < tr.length + self.cfg.idm.s0 + SPAWN_CLEARANCE) {
                continue;
            }
            let speed = match ahead {
                Some(a) if a.state.rear() < 60.0 => desired.min(a.state.speed),
                _ => desired,
            };
            let id = VehicleId(self.next_id);
            self.next_id += 1;
            let kind = if mdv { VehicleKind::Mdv } else { VehicleKind::Adv };
            let position = Position { segment, lane, s: 0.0 };
            let state = new_vehicle(id, kind, position, speed, desired, tr.length);
            self.agents.insert(id, Agent::new(state, Some(turn), disturbances));
            self.emit(
                t1,
                Some(id),
                RecordBody::Spawn(Spawn {
                    kind,
                    segment,
                    lane,
                    s: 0.0,
                    speed,
                    turn: Some(turn),
                }),
            );
        }
    }

    /// Collisions (overlap between lane neighbors) and near misses (time to
    /// collision under the threshold), both counted on their rising edge.
    fn detect_contacts(&mut self, t1: f64) {
        let mut lanes: BTreeMap<(crate::model::SegmentId, u8), Vec<VehicleState>> = BTreeMap::new();
        for a in self.agents.values() {
            lanes
                .entry((a.state.position.segment, a.state.position.lane))
                .or_default()
                .push(a.state.clone());
        }
        let ttc_max = self.cfg.perception.ttc_threshold;
        let mut near_now = BTreeSet::new();
        let mut records = vec![];
        let mut wrecked = vec![];
        for ((segment, _), mut group) in lanes {
            group.sort_by(|a, b| a.position.s.total_cmp(&b.position.s).then(a.id.cmp(&b.id)));
            let ring = self.network.segment(segment).filter(|s| s.is_ring()).map(|s| s.length);
            let n = group.len();
            let pairs = match ring {
                Some(_) if n > 1 => n,
                _ => n.saturating_sub(1),
            };
            for i in 0..pairs {
                let back = &group[i];
                let front = &group[(i + 1) % n];
                let mut ahead = front.position.s - back.position.s;
                if let Some(l) = ring {
                    ahead = ahead.rem_euclid(l);
                }
                let gap = ahead - front.length;
                let key = pair(back.id, front.id);
                if self.wrecks.contains(&key) {
                    continue;
                }
                if gap < 0.0 {
                    self.wrecks.insert(key);
                    wrecked.extend([back.id, front.id]);
                    records.push((back.id, RecordBody::Collision(Collision { other: front.id, gap })));
                    self.accidents.push(back.id);
                    continue;
                }
                let closing = back.speed - front.speed;
                if closing > 0.0 && gap / closing < ttc_max {
                    near_now.insert(key);
                    if !self.near.contains(&key) {
                        records.push((
                            back.id,
                            RecordBody::NearMiss(NearMiss {
                                other: front.id,
                                ttc: gap / closing,
                            }),
                        ));
                    }
                }
            }
        }
        self.near = near_now;
        for id in wrecked {
            if let Some(a) = self.agents.get_mut(&id) {
                a.wrecked = true;
                a.plan = None;
                a.state.speed = 0.0;
                a.state.accel = 0.0;
                a.state.malfunction = true;
                a.repaired_at = None;
            }
        }
        for (id, body) in records {
            self.emit(t1, Some(id), body);
        }
    }
}
