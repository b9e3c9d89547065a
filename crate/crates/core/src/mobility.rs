//! Longitudinal and lane dynamics.
//!
//! Car following uses the Intelligent Driver Model. Lane changes are
//! instantaneous and gated by desired-gap acceptance on the target lane:
//! the gap ahead must be at least the ego's desired gap to the new leader
//! and the gap behind at least the new follower's desired gap to the ego.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cooperation::{Action, ActionKind, PriorityTable};
use crate::model::{
    ActionFootprint, OvertakePhase, PlatoonDescriptor, TurnDirection, VehicleId, VehicleKind,
    VehicleState,
};

/// Emergency braking cap, m/s^2.
pub const MAX_BRAKE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub a_max: f64,
    pub b_comfort: f64,
    /// Minimum standstill gap, m.
    pub s0: f64,
    /// Desired time headway, s.
    pub headway: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 1.5,
            b_comfort: 2.0,
            s0: 2.0,
            headway: 1.5,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Vec<String> {
        let all_positive = [self.a_max, self.b_comfort, self.s0, self.headway, self.delta]
            .iter()
            .all(|x| *x > 0.0);
        if all_positive {
            vec![]
        } else {
            vec!["IDM parameters must all be strictly positive".into()]
        }
    }
}

/// Bumper-to-bumper gap to the vehicle ahead is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("collision condition: gap {gap} m to leader")]
pub struct CollisionCondition {
    pub gap: f64,
}

/// Desired dynamic gap `s0 + max(0, vT + v*dv / (2 sqrt(a b)))` where `dv`
/// is the approach rate (ego minus leader speed).
pub fn desired_gap(speed: f64, approach_rate: f64, p: &IdmParams) -> f64 {
    let dynamic = speed * p.headway + speed * approach_rate / (2.0 * (p.a_max * p.b_comfort).sqrt());
    p.s0 + dynamic.max(0.0)
}

/// IDM acceleration for an ego at `speed` wanting `desired`, optionally
/// behind an obstacle at bumper gap `gap` moving at `leader_speed`.
pub fn idm_accel(
    speed: f64,
    desired: f64,
    leader: Option<(f64, f64)>,
    p: &IdmParams,
) -> Result<f64, CollisionCondition> {
    let free = if desired > 0.0 {
        1.0 - (speed / desired).powf(p.delta)
    } else if speed > 0.0 {
        -f64::INFINITY
    } else {
        0.0
    };
    let interaction = match leader {
        None => 0.0,
        Some((gap, leader_speed)) => {
            if gap <= 0.0 {
                return Err(CollisionCondition { gap });
            }
            let s_star = desired_gap(speed, speed - leader_speed, p);
            (s_star / gap).powi(2)
        }
    };
    Ok((p.a_max * (free - interaction)).clamp(-MAX_BRAKE, p.a_max))
}

/// IDM acceleration of `ego` behind `leader` in the same lane of the same
/// segment.
pub fn car_following_accel(
    ego: &VehicleState,
    leader: Option<&VehicleState>,
    p: &IdmParams,
) -> Result<f64, CollisionCondition> {
    let obstacle = leader.map(|l| (l.rear() - ego.position.s, l.speed));
    idm_accel(ego.speed, ego.desired_speed, obstacle, p)
}

/// Semi-implicit Euler step: speed first (never negative), then position
/// with the new speed.
pub fn integrate(ego: &VehicleState, accel: f64, dt: f64) -> VehicleState {
    let speed = (ego.speed + accel * dt).max(0.0);
    let mut next = ego.clone();
    next.speed = speed;
    next.accel = accel;
    next.position.s += speed * dt;
    next
}

/// Moves the vehicle one lane toward the plan's target once the plan's
/// deadline has passed.
pub fn complete_lane_change(ego: &VehicleState, plan: &ManeuverPlan, now: f64) -> VehicleState {
    let mut next = ego.clone();
    if let Some(target) = plan.target_lane {
        if now + 1e-9 >= plan.phase_deadline && target != ego.position.lane {
            next.position.lane = if target > ego.position.lane {
                ego.position.lane + 1
            } else {
                ego.position.lane - 1
            };
        }
    }
    next
}

/// A known vehicle relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: VehicleId,
    /// Bumper-to-bumper gap; for leaders measured ahead of the ego's front,
    /// for followers behind the ego's rear.
    pub gap: f64,
    pub speed: f64,
    pub length: f64,
    pub malfunction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneNeighbors {
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

/// Nearest known vehicles around the ego. `left` is the lane with the
/// smaller index (the passing side).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Surroundings {
    pub current: LaneNeighbors,
    pub left: Option<LaneNeighbors>,
    pub right: Option<LaneNeighbors>,
}

impl Surroundings {
    pub fn lane(&self, side: Side) -> Option<&LaneNeighbors> {
        match side {
            Side::Left => self.left.as_ref(),
            Side::Right => self.right.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Gap acceptance for moving the ego into a lane with the given neighbors.
pub fn lane_change_safe(ego: &VehicleState, target: &LaneNeighbors, p: &IdmParams) -> bool {
    let lead_ok = target.leader.map_or(true, |l| {
        l.gap >= desired_gap(ego.speed, ego.speed - l.speed, p)
    });
    let lag_ok = target.follower.map_or(true, |f| {
        f.gap >= desired_gap(f.speed, f.speed - ego.speed, p)
    });
    lead_ok && lag_ok
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPlan {
    pub action: Action,
    /// Time at which the current phase executes (lane changes) or ends
    /// (speed reductions).
    pub phase_deadline: f64,
    pub target_lane: Option<u8>,
    /// Commanded deceleration held until the deadline.
    pub decel: Option<f64>,
    pub origin_lane: Option<u8>,
    pub overtaken: Option<VehicleId>,
}

impl ManeuverPlan {
    pub fn footprint(&self) -> &ActionFootprint {
        &self.action.footprint
    }
}

/// Knobs shared by the maneuver planners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverContext<'a> {
    pub now: f64,
    pub dt: f64,
    /// Delay between announcing a lane change and executing it.
    pub lead: f64,
    pub lane_count: u8,
    pub idm: &'a IdmParams,
    pub hysteresis: f64,
    pub retry_backoff: f64,
    /// How long a lane-change footprint claims the target lane.
    pub lane_change_hold: f64,
    pub priorities: &'a PriorityTable,
}

impl ManeuverContext<'_> {
    /// Footprint claiming `lane` alongside the ego from now until the hold
    /// expires.
    pub fn lane_claim(&self, ego: &VehicleState, lane: u8) -> ActionFootprint {
        ActionFootprint::new(
            ego.position.segment,
            (lane, lane),
            (ego.rear() - self.idm.s0, ego.position.s + self.idm.s0),
            (self.now, self.now + self.lane_change_hold),
        )
        .expect("vehicle length and hold are positive")
    }
}

/// Where the ego stands in an overtaking maneuver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OvertakeState {
    Idle,
    Passing {
        origin_lane: u8,
        overtaken: Option<VehicleId>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OvertakeDecision {
    /// Preconditions do not hold (no slower leader, no passing lane, ...).
    NotApplicable,
    /// Keep passing in the current lane.
    KeepPassing,
    /// Gap test failed; try again no earlier than `retry_at`.
    Wait { retry_at: f64 },
    Plan(ManeuverPlan),
}

/// Two-phase overtaking. Phase 1 changes into the adjacent passing lane when
/// the ego is held up by a slower leader and the passing lane accepts it.
/// Phase 2 accelerates past and returns once the ego leads the overtaken
/// vehicle by at least that vehicle's desired gap plus the ego's length.
pub fn plan_overtake(
    ego: &VehicleState,
    surround: &Surroundings,
    state: OvertakeState,
    ctx: &ManeuverContext<'_>,
) -> OvertakeDecision {
    match state {
        OvertakeState::Idle => {
            use crate::model::BehaviorMode as B;
            if !matches!(ego.behavior, B::CarFollowing | B::FreeDriving | B::LaneKeeping) {
                return OvertakeDecision::NotApplicable;
            }
            let Some(leader) = surround.current.leader else {
                return OvertakeDecision::NotApplicable;
            };
            if leader.speed >= ego.desired_speed - ctx.hysteresis || ego.position.lane <= 1 {
                return OvertakeDecision::NotApplicable;
            }
            let Some(passing) = surround.left else {
                return OvertakeDecision::NotApplicable;
            };
            if !lane_change_safe(ego, &passing, ctx.idm) {
                return OvertakeDecision::Wait {
                    retry_at: ctx.now + ctx.retry_backoff,
                };
            }
            let target = ego.position.lane - 1;
            let action = Action::new(
                ActionKind::Overtaking {
                    phase: OvertakePhase::One,
                    target_lane: Some(target),
                },
                ctx.lane_claim(ego, target),
                ego.id,
                ctx.priorities,
            );
            OvertakeDecision::Plan(ManeuverPlan {
                action,
                phase_deadline: ctx.now + ctx.lead,
                target_lane: Some(target),
                decel: None,
                origin_lane: Some(ego.position.lane),
                overtaken: Some(leader.id),
            })
        }
        OvertakeState::Passing {
            origin_lane,
            overtaken,
        } => {
            let Some(origin) = (if origin_lane > ego.position.lane {
                surround.right
            } else {
                surround.left
            }) else {
                return OvertakeDecision::KeepPassing;
            };
            // The overtaken vehicle must be behind in the origin lane with
            // its own steady-state desired gap to the ego's rear, however
            // fast the ego is pulling away.
            let behind_ok = match (overtaken, origin.follower, origin.leader) {
                (Some(id), _, Some(l)) if l.id == id => false,
                (Some(id), Some(f), _) if f.id == id => f.gap >= desired_gap(f.speed, 0.0, ctx.idm),
                _ => true,
            };
            if !behind_ok || !lane_change_safe(ego, &origin, ctx.idm) {
                return OvertakeDecision::KeepPassing;
            }
            let action = Action::new(
                ActionKind::Overtaking {
                    phase: OvertakePhase::Two,
                    target_lane: Some(origin_lane),
                },
                ctx.lane_claim(ego, origin_lane),
                ego.id,
                ctx.priorities,
            );
            OvertakeDecision::Plan(ManeuverPlan {
                action,
                phase_deadline: ctx.now + ctx.lead,
                target_lane: Some(origin_lane),
                decel: None,
                origin_lane: Some(origin_lane),
                overtaken,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulloverDecision {
    Plan(ManeuverPlan),
    /// Platoon followers leave lateral control to their head.
    DeferToHead(VehicleId),
}

/// Reaction to an emergency-vehicle corridor: head for the rightmost lane
/// and brake at the comfortable rate until the corridor's time window ends.
/// The deadline is the lane move when one is needed, else the window end.
pub fn emergency_pullover(
    ego: &VehicleState,
    corridor: &ActionFootprint,
    platoon: Option<&PlatoonDescriptor>,
    ctx: &ManeuverContext<'_>,
) -> PulloverDecision {
    if ego.kind == VehicleKind::PlatoonFollower {
        if let Some(p) = platoon.filter(|p| p.active) {
            return PulloverDecision::DeferToHead(p.head);
        }
    }
    let rightmost = ctx.lane_count;
    let lane = ego.position.lane;
    let until = corridor.time().1.max(ctx.now + ctx.dt);
    let footprint = if lane < rightmost {
        ActionFootprint::new(
            ego.position.segment,
            (lane + 1, rightmost),
            (ego.rear() - ctx.idm.s0, ego.position.s + ctx.idm.s0),
            (ctx.now, ctx.now + ctx.lane_change_hold),
        )
    } else {
        ActionFootprint::new(
            ego.position.segment,
            (lane, lane),
            (ego.rear(), ego.position.s + ego.speed.max(1.0)),
            (ctx.now, until),
        )
    }
    .expect("intervals are non-empty");
    let target = (lane < rightmost).then_some(rightmost);
    let action = Action::new(
        ActionKind::EmergencyAvoidance { target_lane: target },
        footprint,
        ego.id,
        ctx.priorities,
    );
    PulloverDecision::Plan(ManeuverPlan {
        action,
        phase_deadline: if target.is_some() { ctx.now + ctx.lead } else { until },
        target_lane: target,
        decel: Some(ctx.idm.b_comfort),
        origin_lane: None,
        overtaken: None,
    })
}

/// Precedence among turning movements into the same outgoing lane:
/// straight over right turn over left turn.
pub fn turn_rank(turn: TurnDirection) -> u8 {
    match turn {
        TurnDirection::Straight => 3,
        TurnDirection::Right => 2,
        TurnDirection::Left => 1,
    }
}

/// Winner of a car meeting: the higher turn rank, then the lower id.
pub fn meeting_priority(a: (VehicleId, TurnDirection), b: (VehicleId, TurnDirection)) -> VehicleId {
    match turn_rank(a.1).cmp(&turn_rank(b.1)) {
        std::cmp::Ordering::Greater => a.0,
        std::cmp::Ordering::Less => b.0,
        std::cmp::Ordering::Equal => a.0.min(b.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BehaviorMode, Heading, Position, SegmentId};
    use proptest::prelude::*;

    fn car(id: u32, lane: u8, s: f64, speed: f64, desired: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            kind: VehicleKind::Adv,
            position: Position {
                segment: SegmentId(0),
                lane,
                s,
            },
            speed,
            heading: Heading::LaneAligned,
            accel: 0.0,
            length: 4.5,
            desired_speed: desired,
            malfunction: false,
            behavior: BehaviorMode::CarFollowing,
            emergency: false,
        }
    }

    #[test]
    fn free_flow_equilibrium_has_zero_accel() {
        let ego = car(1, 1, 0.0, 25.0, 25.0);
        let a = car_following_accel(&ego, None, &IdmParams::default()).unwrap();
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn at_desired_gap_only_free_term_remains() {
        let p = IdmParams::default();
        let ego = car(1, 1, 0.0, 20.0, 30.0);
        let s_star = desired_gap(20.0, 0.0, &p);
        let leader = car(2, 1, s_star + 4.5, 20.0, 30.0);
        let a = car_following_accel(&ego, Some(&leader), &p).unwrap();
        let expected = -p.a_max * (20.0f64 / 30.0).powi(4);
        assert!((a - expected).abs() < 1e-12);
        assert!(a <= 0.0);
    }

    #[test]
    fn hand_evaluated_case() {
        // v=20, v0=30, dv=0, s=30 with defaults:
        // s* = 2 + 20*1.5 = 32
        // a = 1.5 * (1 - (2/3)^4 - (32/30)^2) = -0.50296296...
        let p = IdmParams::default();
        let ego = car(1, 1, 0.0, 20.0, 30.0);
        let leader = car(2, 1, 34.5, 20.0, 30.0);
        let a = car_following_accel(&ego, Some(&leader), &p).unwrap();
        assert!((a - (-0.502_962_962_962_963)).abs() < 1e-12, "{a}");
    }

    #[test]
    fn non_positive_gap_is_a_collision_condition() {
        let ego = car(1, 1, 10.0, 20.0, 30.0);
        let leader = car(2, 1, 12.0, 20.0, 30.0);
        assert!(car_following_accel(&ego, Some(&leader), &IdmParams::default()).is_err());
    }

    #[test]
    fn integrate_uniform_and_clamped() {
        let ego = car(1, 1, 0.0, 10.0, 30.0);
        let n = integrate(&ego, 0.0, 0.1);
        assert_eq!(n.speed, 10.0);
        assert!((n.position.s - 1.0).abs() < 1e-12);

        let slow = car(1, 1, 0.0, 1.0, 30.0);
        let n = integrate(&slow, -20.0, 0.1);
        assert_eq!(n.speed, 0.0);
        assert_eq!(n.position.s, 0.0);
    }

    #[test]
    fn constant_accel_from_rest_matches_hand_sum() {
        // v_k = 0.1 k, s = sum_{k=1..10} 0.1 k * 0.1 = 0.55
        let mut v = car(1, 1, 0.0, 0.0, 30.0);
        for _ in 0..10 {
            v = integrate(&v, 1.0, 0.1);
        }
        assert!((v.speed - 1.0).abs() < 1e-12);
        assert!((v.position.s - 0.55).abs() < 1e-12);
    }

    fn ctx<'a>(idm: &'a IdmParams, table: &'a PriorityTable) -> ManeuverContext<'a> {
        ManeuverContext {
            now: 10.0,
            dt: 0.1,
            lead: 0.2,
            lane_count: 2,
            idm,
            hysteresis: 2.0,
            retry_backoff: 2.0,
            lane_change_hold: 1.2,
            priorities: table,
        }
    }

    fn slow_leader() -> Neighbor {
        Neighbor {
            id: VehicleId(2),
            gap: 40.0,
            speed: 20.0,
            length: 4.5,
            malfunction: false,
        }
    }

    #[test]
    fn overtake_into_empty_passing_lane() {
        let idm = IdmParams::default();
        let table = PriorityTable::default();
        let c = ctx(&idm, &table);
        let ego = car(3, 2, 100.0, 25.0, 30.0);
        let s = Surroundings {
            current: LaneNeighbors {
                leader: Some(slow_leader()),
                follower: None,
            },
            left: Some(LaneNeighbors::default()),
            right: None,
        };
        match plan_overtake(&ego, &s, OvertakeState::Idle, &c) {
            OvertakeDecision::Plan(p) => {
                assert_eq!(p.target_lane, Some(1));
                assert_eq!(p.overtaken, Some(VehicleId(2)));
                assert_eq!(p.origin_lane, Some(2));
                assert!(p.footprint().contains_lane(1));
                assert!(!p.footprint().contains_lane(2));
            }
            other => panic!("expected plan, got {other:?}"),
        }
    }

    #[test]
    fn occupied_passing_lane_schedules_retry() {
        let idm = IdmParams::default();
        let table = PriorityTable::default();
        let c = ctx(&idm, &table);
        let ego = car(3, 2, 100.0, 25.0, 30.0);
        let alongside = Neighbor {
            id: VehicleId(7),
            gap: -2.0,
            speed: 25.0,
            length: 4.5,
            malfunction: false,
        };
        let s = Surroundings {
            current: LaneNeighbors {
                leader: Some(slow_leader()),
                follower: None,
            },
            left: Some(LaneNeighbors {
                leader: Some(alongside),
                follower: None,
            }),
            right: None,
        };
        assert_eq!(
            plan_overtake(&ego, &s, OvertakeState::Idle, &c),
            OvertakeDecision::Wait { retry_at: 12.0 }
        );
    }

    #[test]
    fn return_waits_for_overtaken_vehicle_gap() {
        let idm = IdmParams::default();
        let table = PriorityTable::default();
        let c = ctx(&idm, &table);
        let mut ego = car(3, 1, 200.0, 30.0, 30.0);
        ego.behavior = BehaviorMode::Overtaking(OvertakePhase::Two);
        let state = OvertakeState::Passing {
            origin_lane: 2,
            overtaken: Some(VehicleId(2)),
        };
        let behind = |gap| Surroundings {
            current: LaneNeighbors::default(),
            left: None,
            right: Some(LaneNeighbors {
                leader: None,
                follower: Some(Neighbor {
                    id: VehicleId(2),
                    gap,
                    speed: 20.0,
                    length: 4.5,
                    malfunction: false,
                }),
            }),
        };
        // Overtaken vehicle is slower, so its desired gap collapses to s0.
        assert_eq!(
            plan_overtake(&ego, &behind(1.0), state, &c),
            OvertakeDecision::KeepPassing
        );
        match plan_overtake(&ego, &behind(40.0), state, &c) {
            OvertakeDecision::Plan(p) => assert_eq!(p.target_lane, Some(2)),
            other => panic!("expected return plan, got {other:?}"),
        }
    }

    #[test]
    fn pullover_from_rightmost_lane_is_speed_only() {
        let idm = IdmParams::default();
        let table = PriorityTable::default();
        let mut c = ctx(&idm, &table);
        c.lane_count = 3;
        let corridor =
            ActionFootprint::new(SegmentId(0), (1, 3), (0.0, 300.0), (10.0, 13.0)).unwrap();
        let ego = car(1, 3, 100.0, 25.0, 30.0);
        let PulloverDecision::Plan(p) = emergency_pullover(&ego, &corridor, None, &c) else {
            panic!()
        };
        assert_eq!(p.target_lane, None);
        assert_eq!(p.decel, Some(2.0));
        assert_eq!(p.phase_deadline, 13.0);

        let ego = car(1, 2, 100.0, 25.0, 30.0);
        let PulloverDecision::Plan(p) = emergency_pullover(&ego, &corridor, None, &c) else {
            panic!()
        };
        assert_eq!(p.target_lane, Some(3));
        assert_eq!(p.decel, Some(2.0));
    }

    #[test]
    fn platoon_follower_defers_pullover_to_head() {
        let idm = IdmParams::default();
        let table = PriorityTable::default();
        let c = ctx(&idm, &table);
        let corridor =
            ActionFootprint::new(SegmentId(0), (1, 2), (0.0, 300.0), (10.0, 13.0)).unwrap();
        let mut ego = car(6, 1, 100.0, 25.0, 30.0);
        ego.kind = VehicleKind::PlatoonFollower;
        let p = PlatoonDescriptor {
            head: VehicleId(5),
            followers: vec![VehicleId(6)],
            active: true,
        };
        assert_eq!(
            emergency_pullover(&ego, &corridor, Some(&p), &c),
            PulloverDecision::DeferToHead(VehicleId(5))
        );
    }

    #[test]
    fn meeting_priority_rules() {
        use TurnDirection::*;
        assert_eq!(meeting_priority((VehicleId(1), Right), (VehicleId(2), Left)), VehicleId(1));
        assert_eq!(meeting_priority((VehicleId(9), Left), (VehicleId(4), Left)), VehicleId(4));
        assert_eq!(meeting_priority((VehicleId(4), Left), (VehicleId(9), Left)), VehicleId(4));
        assert_eq!(meeting_priority((VehicleId(8), Straight), (VehicleId(1), Right)), VehicleId(8));
    }

    #[test]
    fn meeting_priority_matches_rule_table() {
        use TurnDirection::*;
        // (a, b) -> does a beat b, by class alone
        let table = [
            (Straight, Straight, None),
            (Straight, Right, Some(true)),
            (Straight, Left, Some(true)),
            (Right, Straight, Some(false)),
            (Right, Right, None),
            (Right, Left, Some(true)),
            (Left, Straight, Some(false)),
            (Left, Right, Some(false)),
            (Left, Left, None),
        ];
        for (a, b, a_wins) in table {
            for (ia, ib) in [(1, 2), (2, 1)] {
                let w = meeting_priority((VehicleId(ia), a), (VehicleId(ib), b));
                let expected = match a_wins {
                    Some(true) => VehicleId(ia),
                    Some(false) => VehicleId(ib),
                    None => VehicleId(ia.min(ib)),
                };
                assert_eq!(w, expected, "{a:?} vs {b:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn more_gap_never_means_less_accel(
            v in 0.0f64..40.0,
            v0 in 1.0f64..40.0,
            vl in 0.0f64..40.0,
            g1 in 0.1f64..200.0,
            extra in 0.0f64..200.0,
        ) {
            let p = IdmParams::default();
            let a1 = idm_accel(v, v0, Some((g1, vl)), &p).unwrap();
            let a2 = idm_accel(v, v0, Some((g1 + extra, vl)), &p).unwrap();
            prop_assert!(a2 >= a1 - 1e-12);
            prop_assert!(a1.abs() <= MAX_BRAKE && a1 <= p.a_max);
        }

        #[test]
        fn integration_never_reverses(v in 0.0f64..40.0, a in -8.0f64..1.5) {
            let ego = car(1, 1, 0.0, v, 30.0);
            let n = integrate(&ego, a, 0.1);
            prop_assert!(n.speed >= 0.0);
            prop_assert!(n.position.s >= 0.0);
        }
    }
}
