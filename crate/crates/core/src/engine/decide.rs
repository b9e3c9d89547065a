use std::collections::BTreeMap;

use crate::cooperation::{
    acd_check, apa_resolve, fallback_for, lane_tube, oas_select, Action, ActionKind, Approach,
    AtmEvent, BehaviorParams, Fallback, ResolutionBasis, Rule, SiaView,
};
use crate::mobility::{ManeuverContext, Surroundings};
use crate::model::{AtmAction, NodeId, OvertakePhase, VehicleId, VehicleKind, VehicleState};
use crate::trace::{ActionResolved, ConflictDetected, Outcome, RecordBody};

use super::perception::{align, approach, exit_of, fused_view, inferred_action, surroundings, Seen};
use super::Simulation;

/// What a vehicle decided this step.
#[derive(Debug, Clone)]
pub(crate) struct Decision {
    pub action: Action,
    pub rule: Rule,
    pub surround: Surroundings,
    pub approach: Option<Approach>,
    /// Stop at the stop line.
    pub queue: bool,
    pub seen: Vec<Seen>,
}

fn is_safety_rule(rule: Rule) -> bool {
    matches!(rule, Rule::Emergency | Rule::TooClose | Rule::Hazard | Rule::BrakeWarning)
}

/// Action announced by a heard ATM, as the receiver understands it.
fn announced_kind(action: AtmAction, lanes: (u8, u8)) -> Option<ActionKind> {
    match action {
        AtmAction::ChangeLanes => Some(ActionKind::LaneChanging { target_lane: lanes.0 }),
        AtmAction::Overtake => Some(ActionKind::Overtaking {
            phase: OvertakePhase::One,
            target_lane: Some(lanes.0),
        }),
        AtmAction::Brake => Some(ActionKind::Brake),
        AtmAction::EmergencyVehicleAvoidance | AtmAction::Other => None,
    }
}

fn strip_lateral(kind: ActionKind) -> ActionKind {
    match kind {
        ActionKind::EmergencyAvoidance { .. } => ActionKind::EmergencyAvoidance { target_lane: None },
        ActionKind::Avoidance { .. } => ActionKind::Avoidance { target_lane: None },
        other => other,
    }
}

impl Simulation {
    pub(super) fn ctx_for(&self, state: &VehicleState, now: f64) -> ManeuverContext<'_> {
        let b = &self.cfg.behavior;
        ManeuverContext {
            now,
            dt: self.cfg.dt,
            lead: 2.0 * self.cfg.dt,
            lane_count: self
                .network
                .segment(state.position.segment)
                .map_or(1, |s| s.lane_count),
            idm: &self.cfg.idm,
            hysteresis: b.hysteresis,
            retry_backoff: b.retry_backoff,
            lane_change_hold: b.lane_change_hold,
            priorities: &self.cfg.priorities,
        }
    }

    fn params_for(&self, kind: VehicleKind) -> BehaviorParams {
        let mut p = self.cfg.behavior;
        if kind == VehicleKind::Mdv {
            p.overtaking = false;
            p.discretionary_lane_change = false;
        }
        p
    }

    pub(super) fn select(&mut self, t: f64, world: &[VehicleState]) -> BTreeMap<VehicleId, Decision> {
        let mut out = BTreeMap::new();
        let ids: Vec<VehicleId> = self.agents.keys().copied().collect();
        for id in ids {
            let agent = &self.agents[&id];
            let state = agent.state.clone();
            let seen = fused_view(&state, &agent.table, world, &self.network, t, &self.cfg.perception);
            let look = agent
                .turn
                .and_then(|turn| exit_of(&self.network, state.position.segment, turn));
            let surround = surroundings(&state, &seen, &self.network, look);
            let ap = agent.turn.and_then(|turn| {
                approach(&state.position, state.speed, state.length, turn, &self.network, t)
            });
            let tube = lane_tube(&state, t, self.cfg.behavior.tube_horizon, self.cfg.idm.s0);

            if agent.wrecked || state.malfunction {
                let action = Action::new(ActionKind::LaneKeeping, tube, id, &self.cfg.priorities);
                self.agents.get_mut(&id).expect("listed").plan = None;
                out.insert(
                    id,
                    Decision {
                        action,
                        rule: Rule::Follow,
                        surround,
                        approach: ap,
                        queue: false,
                        seen,
                    },
                );
                continue;
            }

            let events: Vec<AtmEvent> = if self.cfg.cooperation {
                agent
                    .table
                    .events()
                    .filter(|e| {
                        state.kind != VehicleKind::Mdv
                            || e.action == AtmAction::EmergencyVehicleAvoidance
                    })
                    .map(|e| AtmEvent {
                        sender: e.sender,
                        action: e.action,
                        footprint: align(e.footprint, state.position.s, &self.network),
                    })
                    .collect()
            } else {
                vec![]
            };
            let view = SiaView {
                now: t,
                surround,
                events,
                approach: ap,
            };
            let platoon = self.platoons.iter().find(|p| p.members().any(|m| m == id));
            let params = self.params_for(state.kind);
            let ctx = self.ctx_for(&state, t);
            let memory = agent.memory;
            let sel = oas_select(&state, &view, &memory, platoon, &ctx, &params);

            let agent = self.agents.get_mut(&id).expect("listed");
            if let Some(r) = sel.retry_at {
                agent.memory.retry_at = r;
            }
            // A pending plan runs to its deadline unless a safety rule
            // overrides a non-safety plan.
            let keep = agent
                .plan
                .as_ref()
                .is_some_and(|p| !(is_safety_rule(sel.rule) && !p.action.class().is_safety()));
            let (action, rule) = if keep {
                let p = agent.plan.as_ref().expect("checked");
                (p.action, Rule::Overtake)
            } else {
                agent.plan = sel.plan;
                agent.announce = sel.plan.is_some();
                (sel.action, sel.rule)
            };
            let queue = action.kind == ActionKind::IntersectionQueuing;
            out.insert(
                id,
                Decision {
                    action,
                    rule,
                    surround,
                    approach: ap,
                    queue,
                    seen,
                },
            );
        }
        out
    }

    /// Conflict detection and arbitration for every action that claims
    /// space beyond the ego's own lane.
    pub(super) fn arbitrate(&mut self, t: f64, decisions: &mut BTreeMap<VehicleId, Decision>) {
        let ids: Vec<VehicleId> = decisions.keys().copied().collect();
        for id in ids {
            let d = &decisions[&id];
            if !d.action.kind.claims_space() {
                continue;
            }
            let agent = &self.agents[&id];
            let ego_s = agent.state.position.s;
            let mut neighbors: Vec<Action> = d
                .seen
                .iter()
                .filter_map(|s| {
                    inferred_action(
                        s,
                        &self.network,
                        t,
                        self.cfg.behavior.tube_horizon,
                        self.cfg.idm.s0,
                        &self.cfg.priorities,
                    )
                })
                .collect();
            if agent.state.kind != VehicleKind::Mdv {
                for e in agent.table.events() {
                    let NodeId::Vehicle(sender) = e.sender else {
                        continue;
                    };
                    if let Some(kind) = announced_kind(e.action, e.footprint.lanes()) {
                        neighbors.push(Action::new(
                            kind,
                            e.footprint,
                            sender,
                            &self.cfg.priorities,
                        ));
                    }
                }
            }
            for n in &mut neighbors {
                n.footprint = align(n.footprint, ego_s, &self.network);
            }
            let mine = d.action;
            let conflicts = acd_check(&mine, &neighbors);
            for c in &conflicts {
                self.emit(
                    t,
                    Some(id),
                    RecordBody::ConflictDetected(ConflictDetected {
                        other: c.issuer,
                        mine: mine.kind,
                        theirs: c.kind,
                    }),
                );
            }
            let (outcome, basis, winner) = if conflicts.is_empty() {
                (Outcome::Executed, ResolutionBasis::Uncontested, id)
            } else {
                let mut set = vec![mine];
                set.extend(conflicts);
                let res = apa_resolve(&set).expect("non-empty");
                if res.winner.issuer == id {
                    (Outcome::Executed, res.basis, id)
                } else {
                    let outcome = self.fall_back(t, id, decisions.get_mut(&id).expect("listed"));
                    (outcome, res.basis, res.winner.issuer)
                }
            };
            self.emit(
                t,
                Some(id),
                RecordBody::ActionResolved(ActionResolved {
                    action: mine.kind,
                    outcome,
                    basis,
                    winner,
                }),
            );
        }
    }

    fn fall_back(&mut self, t: f64, id: VehicleId, d: &mut Decision) -> Outcome {
        let backoff = self.cfg.behavior.retry_backoff;
        let agent = self.agents.get_mut(&id).expect("listed");
        let tube = lane_tube(&agent.state, t, self.cfg.behavior.tube_horizon, self.cfg.idm.s0);
        match fallback_for(&d.action.kind) {
            Fallback::LaneKeeping => {
                agent.plan = None;
                agent.announce = false;
                agent.memory.retry_at = t + backoff;
                d.action = Action::new(ActionKind::LaneKeeping, tube, id, &self.cfg.priorities);
                Outcome::FellBack
            }
            Fallback::Queue => {
                d.queue = true;
                d.action = Action::new(ActionKind::IntersectionQueuing, tube, id, &self.cfg.priorities);
                Outcome::FellBack
            }
            Fallback::Hold => {
                agent.plan = None;
                agent.announce = false;
                d.action.kind = strip_lateral(d.action.kind);
                Outcome::Deferred
            }
            Fallback::Keep => Outcome::Executed,
        }
    }
}
