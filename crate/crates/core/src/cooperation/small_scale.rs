use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use super::{Action, ActionClass, ActionKind};
use crate::mobility::{
    emergency_pullover, idm_accel, lane_change_safe, plan_overtake, turn_rank, ManeuverContext,
    ManeuverPlan, OvertakeDecision, OvertakeState, PulloverDecision, Side, Surroundings,
};
use crate::model::{
    footprints_conflict, ActionFootprint, AtmAction, NodeId, OvertakePhase, PlatoonDescriptor,
    TurnDirection, VehicleState,
};

/// Tunables of the per-vehicle decision pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorParams {
    /// Leader must be this much slower than the ego's desired speed before
    /// an overtake is considered, m/s.
    pub hysteresis: f64,
    pub retry_backoff: f64,
    /// A leader farther than this does not constrain the ego, m.
    pub follow_range: f64,
    /// Malfunctioning vehicles closer than this are evaded, m.
    pub hazard_range: f64,
    /// Look-ahead of the tube footprint implied by keeping one's lane, s.
    pub tube_horizon: f64,
    /// How long a lane-change footprint claims the target lane, s.
    pub lane_change_hold: f64,
    pub overtaking: bool,
    pub discretionary_lane_change: bool,
    /// Acceleration advantage required for a discretionary lane change.
    pub lane_change_gain: f64,
    /// Decelerations at least this hard are announced with a brake ATM.
    pub brake_announce: f64,
    /// Deceleration applied on receipt of a brake warning.
    pub precaution_decel: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            hysteresis: 2.0,
            retry_backoff: 2.0,
            follow_range: 100.0,
            hazard_range: 80.0,
            tube_horizon: 1.0,
            lane_change_hold: 1.0,
            overtaking: false,
            discretionary_lane_change: false,
            lane_change_gain: 0.3,
            brake_announce: 3.0,
            precaution_decel: 1.0,
        }
    }
}

impl BehaviorParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        for (name, v) in [
            ("hysteresis", self.hysteresis),
            ("retry_backoff", self.retry_backoff),
            ("lane_change_gain", self.lane_change_gain),
        ] {
            if !(v >= 0.0) {
                errs.push(format!("behavior.{name} must be non-negative"));
            }
        }
        for (name, v) in [
            ("follow_range", self.follow_range),
            ("hazard_range", self.hazard_range),
            ("tube_horizon", self.tube_horizon),
            ("lane_change_hold", self.lane_change_hold),
            ("brake_announce", self.brake_announce),
            ("precaution_decel", self.precaution_decel),
        ] {
            if !(v > 0.0) {
                errs.push(format!("behavior.{name} must be positive"));
            }
        }
        errs
    }
}

/// Announced action of another node, aligned to the ego's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtmEvent {
    pub sender: NodeId,
    pub action: AtmAction,
    pub footprint: ActionFootprint,
}

/// The ego's pending movement through the intersection ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Approach {
    pub turn: TurnDirection,
    /// Incoming lanes from which the movement is allowed.
    pub lanes: (u8, u8),
    pub in_zone: bool,
    pub may_enter: bool,
    /// Front bumper to stop line, m.
    pub stop_distance: f64,
    /// Space claimed on the outgoing lane.
    pub footprint: ActionFootprint,
}

/// Everything the ego knows this step: fused neighbors, announced actions
/// and static road context.
#[derive(Debug, Clone, PartialEq)]
pub struct SiaView {
    pub now: f64,
    pub surround: Surroundings,
    pub events: Vec<AtmEvent>,
    pub approach: Option<Approach>,
}

/// Per-vehicle decision memory carried across steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionState {
    pub overtake: OvertakeState,
    /// No discretionary or overtaking lane change before this time.
    pub retry_at: f64,
}

impl Default for DecisionState {
    fn default() -> Self {
        Self {
            overtake: OvertakeState::Idle,
            retry_at: f64::NEG_INFINITY,
        }
    }
}

/// Cascade rule that produced a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Emergency,
    TooClose,
    Hazard,
    BrakeWarning,
    Platoon,
    Overtake,
    DiscretionaryLaneChange,
    Intersection,
    Follow,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub action: Action,
    pub plan: Option<ManeuverPlan>,
    pub rule: Rule,
    /// Set when a lane change was wanted but the gap test failed.
    pub retry_at: Option<f64>,
}

/// Space directly ahead of a vehicle keeping its lane for `horizon`.
pub fn lane_tube(state: &VehicleState, now: f64, horizon: f64, s0: f64) -> ActionFootprint {
    ActionFootprint::new(
        state.position.segment,
        (state.position.lane, state.position.lane),
        (
            state.rear(),
            state.position.s + (state.speed * horizon).max(s0),
        ),
        (now, now + horizon),
    )
    .expect("positive length and horizon")
}

/// Rule cascade choosing the ego's action for the next interval.
#[allow(clippy::too_many_arguments)]
pub fn oas_select(
    ego: &VehicleState,
    view: &SiaView,
    memory: &DecisionState,
    platoon: Option<&PlatoonDescriptor>,
    ctx: &ManeuverContext<'_>,
    params: &BehaviorParams,
) -> Selection {
    let now = view.now;
    let tube = lane_tube(ego, now, params.tube_horizon, ctx.idm.s0);
    let simple = |kind: ActionKind, rule: Rule| Selection {
        action: Action::new(kind, tube, ego.id, ctx.priorities),
        plan: None,
        rule,
        retry_at: None,
    };
    let from_plan = |plan: ManeuverPlan, rule: Rule| Selection {
        action: plan.action,
        plan: Some(plan),
        rule,
        retry_at: None,
    };

    // (1) emergency corridor covering the ego
    if !ego.emergency {
        let covering = view.events.iter().find(|e| {
            e.action == AtmAction::EmergencyVehicleAvoidance && covers(&e.footprint, ego, now)
        });
        if let Some(e) = covering {
            return match emergency_pullover(ego, &e.footprint, platoon, ctx) {
                PulloverDecision::Plan(p) => from_plan(p, Rule::Emergency),
                PulloverDecision::DeferToHead(_) => simple(ActionKind::Platooning, Rule::Emergency),
            };
        }
    }

    // (2) imminent danger
    let leader = view.surround.current.leader;
    if leader.is_some_and(|l| l.gap < ctx.idm.s0) {
        return simple(ActionKind::Brake, Rule::TooClose);
    }
    if leader.is_some_and(|l| l.malfunction && l.gap < params.hazard_range) {
        let escape = [Side::Left, Side::Right].into_iter().find_map(|side| {
            let lanes = view.surround.lane(side)?;
            lane_change_safe(ego, lanes, ctx.idm).then(|| match side {
                Side::Left => ego.position.lane - 1,
                Side::Right => ego.position.lane + 1,
            })
        });
        let kind = ActionKind::Avoidance {
            target_lane: escape,
        };
        let plan = escape.map(|lane| ManeuverPlan {
            action: Action::new(kind, ctx.lane_claim(ego, lane), ego.id, ctx.priorities),
            phase_deadline: now + ctx.lead,
            target_lane: Some(lane),
            decel: None,
            origin_lane: None,
            overtaken: None,
        });
        return match plan {
            Some(p) => from_plan(p, Rule::Hazard),
            None => simple(kind, Rule::Hazard),
        };
    }
    let warned = view.events.iter().any(|e| {
        e.action == AtmAction::Brake
            && e.sender != NodeId::Vehicle(ego.id)
            && footprints_conflict(&e.footprint, &tube)
    });
    if warned {
        return simple(ActionKind::Brake, Rule::BrakeWarning);
    }

    if platoon.is_some_and(|p| p.active && p.members().any(|m| m == ego.id)) {
        return simple(ActionKind::Platooning, Rule::Platoon);
    }

    // (3) overtaking and discretionary lane changes
    let mut retry_at = None;
    let may_change = now >= memory.retry_at;
    if params.overtaking && ego.kind.is_autonomous() && view.approach.is_none() {
        match memory.overtake {
            OvertakeState::Passing { .. } => {
                return match plan_overtake(ego, &view.surround, memory.overtake, ctx) {
                    OvertakeDecision::Plan(p) => from_plan(p, Rule::Overtake),
                    _ => simple(
                        ActionKind::Overtaking {
                            phase: OvertakePhase::Two,
                            target_lane: None,
                        },
                        Rule::Overtake,
                    ),
                };
            }
            OvertakeState::Idle if may_change => {
                match plan_overtake(ego, &view.surround, memory.overtake, ctx) {
                    OvertakeDecision::Plan(p) => return from_plan(p, Rule::Overtake),
                    OvertakeDecision::Wait { retry_at: r } => retry_at = Some(r),
                    _ => {}
                }
            }
            OvertakeState::Idle => {}
        }
    }
    let constrained = leader.filter(|l| l.gap < params.follow_range);
    if params.discretionary_lane_change && may_change && view.approach.is_none() {
        if let Some(l) = constrained {
            let here = idm_accel(ego.speed, ego.desired_speed, Some((l.gap, l.speed)), ctx.idm)
                .unwrap_or(f64::NEG_INFINITY);
            for side in [Side::Left, Side::Right] {
                let Some(lanes) = view.surround.lane(side) else {
                    continue;
                };
                if !lane_change_safe(ego, lanes, ctx.idm) {
                    continue;
                }
                let there = idm_accel(
                    ego.speed,
                    ego.desired_speed,
                    lanes.leader.map(|n| (n.gap, n.speed)),
                    ctx.idm,
                )
                .unwrap_or(f64::NEG_INFINITY);
                if there - here > params.lane_change_gain {
                    let target = match side {
                        Side::Left => ego.position.lane - 1,
                        Side::Right => ego.position.lane + 1,
                    };
                    return from_plan(
                        lane_change_plan(ego, target, now, ctx),
                        Rule::DiscretionaryLaneChange,
                    );
                }
            }
        }
    }

    // (4) intersection approach
    if let Some(ap) = &view.approach {
        let lane = ego.position.lane;
        if !ap.in_zone && (lane < ap.lanes.0 || lane > ap.lanes.1) {
            let (side, target) = if lane < ap.lanes.0 {
                (Side::Right, lane + 1)
            } else {
                (Side::Left, lane - 1)
            };
            let safe = view
                .surround
                .lane(side)
                .is_some_and(|n| lane_change_safe(ego, n, ctx.idm));
            if safe && may_change {
                return from_plan(lane_change_plan(ego, target, now, ctx), Rule::Intersection);
            }
        }
        if ap.in_zone {
            let can_stop = ap.stop_distance > 0.0
                && ego.speed * ego.speed / (2.0 * ap.stop_distance) <= 2.0 * ctx.idm.b_comfort;
            let kind = if !ap.may_enter && can_stop {
                ActionKind::IntersectionQueuing
            } else {
                ActionKind::Turning { turn: ap.turn }
            };
            let footprint = match kind {
                ActionKind::Turning { .. } => ap.footprint,
                _ => tube,
            };
            return Selection {
                action: Action::new(kind, footprint, ego.id, ctx.priorities),
                plan: None,
                rule: Rule::Intersection,
                retry_at,
            };
        }
    }

    // (5) car following or free driving
    let mut sel = if constrained.is_some() {
        simple(ActionKind::CarFollowing, Rule::Follow)
    } else {
        simple(ActionKind::FreeDriving, Rule::Free)
    };
    sel.retry_at = retry_at;
    sel
}

fn lane_change_plan(ego: &VehicleState, target: u8, now: f64, ctx: &ManeuverContext<'_>) -> ManeuverPlan {
    let kind = ActionKind::LaneChanging {
        target_lane: target,
    };
    ManeuverPlan {
        action: Action::new(kind, ctx.lane_claim(ego, target), ego.id, ctx.priorities),
        phase_deadline: now + ctx.lead,
        target_lane: Some(target),
        decel: None,
        origin_lane: Some(ego.position.lane),
        overtaken: None,
    }
}

fn covers(f: &ActionFootprint, ego: &VehicleState, now: f64) -> bool {
    let (s0, s1) = f.longitudinal();
    let (t0, t1) = f.time();
    f.segment() == ego.position.segment
        && f.contains_lane(ego.position.lane)
        && ego.position.s > s0
        && ego.rear() < s1
        && now >= t0
        && now < t1
}

/// Neighbor actions whose footprints conflict with `mine`.
pub fn acd_check(mine: &Action, neighbors: &[Action]) -> Vec<Action> {
    neighbors
        .iter()
        .filter(|n| n.issuer != mine.issuer && footprints_conflict(&mine.footprint, &n.footprint))
        .copied()
        .collect()
}

/// What a losing action turns into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Abandon the lane change and retry after the backoff.
    LaneKeeping,
    /// Wait at the stop line.
    Queue,
    /// Safety action keeps executing; only its lateral part waits.
    Hold,
    /// Nothing to give up.
    Keep,
}

pub fn fallback_for(kind: &ActionKind) -> Fallback {
    if kind.class().is_safety() {
        return Fallback::Hold;
    }
    match kind {
        ActionKind::LaneChanging { .. } | ActionKind::PlatoonJoin => Fallback::LaneKeeping,
        ActionKind::Overtaking {
            target_lane: Some(_),
            ..
        } => Fallback::LaneKeeping,
        ActionKind::Turning { .. } => Fallback::Queue,
        _ => Fallback::Keep,
    }
}

/// Which rule separated the winner from the runner-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionBasis {
    Uncontested,
    Priority,
    MeetingPriority,
    IdTieBreak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub winner: Action,
    pub losers: Vec<(Action, Fallback)>,
    pub basis: ResolutionBasis,
}

/// Arbitration key: table priority, then turn precedence among turning
/// movements, then the lower id.
fn apa_key(a: &Action) -> (u8, u8, Reverse<crate::model::VehicleId>) {
    let turn = match a.kind {
        ActionKind::Turning { turn } => turn_rank(turn),
        _ => 0,
    };
    (a.priority, turn, Reverse(a.issuer))
}

/// Picks the single action allowed to proceed among mutually conflicting
/// ones. Returns `None` for an empty set.
pub fn apa_resolve(conflicts: &[Action]) -> Option<Resolution> {
    let mut ranked: Vec<Action> = conflicts.to_vec();
    ranked.sort_by(|a, b| apa_key(b).cmp(&apa_key(a)));
    let winner = *ranked.first()?;
    let basis = match ranked.get(1) {
        None => ResolutionBasis::Uncontested,
        Some(second) => {
            let (wk, sk) = (apa_key(&winner), apa_key(second));
            let both_turning = winner.class() == ActionClass::Turning
                && second.class() == ActionClass::Turning;
            if wk.0 != sk.0 {
                ResolutionBasis::Priority
            } else if wk.1 != sk.1 && both_turning {
                ResolutionBasis::MeetingPriority
            } else if wk.1 != sk.1 {
                ResolutionBasis::Priority
            } else {
                ResolutionBasis::IdTieBreak
            }
        }
    };
    let losers = ranked[1..]
        .iter()
        .map(|a| (*a, fallback_for(&a.kind)))
        .collect();
    Some(Resolution {
        winner,
        losers,
        basis,
    })
}
