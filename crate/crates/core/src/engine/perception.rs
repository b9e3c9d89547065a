//! What a vehicle believes about its surroundings: onboard sensing within
//! range, PSM-based extrapolation beyond it.

use crate::config::PerceptionSpec;
use crate::cooperation::{lane_tube, Action, ActionKind, Approach};
use crate::messaging::NeighborTable;
use crate::mobility::{LaneNeighbors, Neighbor, Surroundings};
use crate::model::{
    ActionFootprint, Heading, Position, RoadNetwork, SegmentId, TurnDirection, VehicleId,
    VehicleState,
};
use crate::scenario::turn_lanes;

/// Another vehicle as the ego perceives it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seen {
    pub id: VehicleId,
    pub position: Position,
    pub speed: f64,
    pub length: f64,
    pub malfunction: bool,
    pub heading: Heading,
    /// From onboard sensing rather than a beacon.
    pub sensed: bool,
}

impl Seen {
    /// Ground truth of `v`.
    pub fn of(v: &VehicleState) -> Self {
        Self {
            id: v.id,
            position: v.position,
            speed: v.speed,
            length: v.length,
            malfunction: v.malfunction,
            heading: v.heading,
            sensed: true,
        }
    }
}

/// Fuses ground truth within sensor range with extrapolated table entries.
/// `world` must be sorted by id; the result follows the same order.
pub fn fused_view(
    ego: &VehicleState,
    table: &NeighborTable,
    world: &[VehicleState],
    network: &RoadNetwork,
    t: f64,
    perception: &PerceptionSpec,
) -> Vec<Seen> {
    let mut out = Vec::new();
    for v in world {
        if v.id == ego.id {
            continue;
        }
        let d = network.radio_distance(&ego.position, &v.position);
        if d <= perception.sensor_range {
            out.push(Seen::of(v));
        } else if let Some(e) = table.get(v.id) {
            let mut position = e.extrapolated(t);
            if let Some(seg) = network.segment(position.segment).filter(|s| s.is_ring()) {
                position.s = position.s.rem_euclid(seg.length);
            }
            out.push(Seen {
                id: v.id,
                position,
                speed: e.psm.speed,
                length: perception.assumed_length,
                malfunction: e.psm.malfunction,
                heading: e.psm.direction,
                sensed: false,
            });
        }
    }
    out
}

fn neighbor(s: &Seen, gap: f64) -> Neighbor {
    Neighbor {
        id: s.id,
        gap,
        speed: s.speed,
        length: s.length,
        malfunction: s.malfunction,
    }
}

/// Nearest leader and follower in `lane` of the ego's segment.
pub fn lane_neighbors(ego: &VehicleState, lane: u8, seen: &[Seen], network: &RoadNetwork) -> LaneNeighbors {
    let seg = ego.position.segment;
    let mut lead: Option<(f64, &Seen)> = None;
    let mut follow: Option<(f64, &Seen)> = None;
    for s in seen.iter().filter(|s| s.position.segment == seg && s.position.lane == lane) {
        let d = network.forward_offset(seg, ego.position.s, s.position.s);
        if d > 0.0 {
            if lead.map_or(true, |(best, _)| d < best) {
                lead = Some((d, s));
            }
        } else if follow.map_or(true, |(best, _)| d > best) {
            follow = Some((d, s));
        }
    }
    LaneNeighbors {
        leader: lead.map(|(d, s)| neighbor(s, d - s.length)),
        follower: follow.map(|(d, s)| neighbor(s, -d - ego.length)),
    }
}

/// Nearest perceived vehicles around the ego. With `look_through` set, a
/// missing leader in the current lane is searched for on that segment and
/// lane beyond the end of the ego's segment.
pub fn surroundings(
    ego: &VehicleState,
    seen: &[Seen],
    network: &RoadNetwork,
    look_through: Option<(SegmentId, u8)>,
) -> Surroundings {
    let lane = ego.position.lane;
    let lane_count = network
        .segment(ego.position.segment)
        .map_or(1, |s| s.lane_count);
    let mut current = lane_neighbors(ego, lane, seen, network);
    if current.leader.is_none() {
        if let Some((next, next_lane)) = look_through {
            let remaining = network
                .segment(ego.position.segment)
                .map_or(0.0, |s| s.length - ego.position.s);
            current.leader = seen
                .iter()
                .filter(|s| s.position.segment == next && s.position.lane == next_lane)
                .map(|s| (remaining + s.position.s, s))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(d, s)| neighbor(s, d - s.length));
        }
    }
    Surroundings {
        current,
        left: (lane > 1).then(|| lane_neighbors(ego, lane - 1, seen, network)),
        right: (lane < lane_count).then(|| lane_neighbors(ego, lane + 1, seen, network)),
    }
}

/// Segment and lane a vehicle turning `turn` ends up on.
pub fn exit_of(network: &RoadNetwork, segment: SegmentId, turn: TurnDirection) -> Option<(SegmentId, u8)> {
    let rule = network.intersection_at_end(segment)?.turn(segment, turn)?;
    Some((rule.to, rule.to_lane))
}

/// Approach state of a vehicle heading for a junction. The footprint
/// claims the start of the exit lane until the vehicle has crossed the
/// zone at its current speed (at least 1 m/s).
pub fn approach(
    position: &Position,
    speed: f64,
    length: f64,
    turn: TurnDirection,
    network: &RoadNetwork,
    t: f64,
) -> Option<Approach> {
    let seg = network.segment(position.segment)?;
    let junction = network.intersection_at_end(position.segment)?;
    let rule = junction.turn(position.segment, turn)?;
    let stop_distance = seg.length - position.s;
    let clear = (stop_distance.max(0.0) + junction.zone_length) / speed.max(1.0);
    let footprint = ActionFootprint::new(
        rule.to,
        (rule.to_lane, rule.to_lane),
        (-length, junction.zone_length),
        (t, t + clear),
    )
    .ok()?;
    Some(Approach {
        turn,
        lanes: turn_lanes(turn, seg.lane_count),
        in_zone: stop_distance <= junction.zone_length,
        may_enter: junction.may_enter(position.segment, t),
        stop_distance,
        footprint,
    })
}

/// Action the ego attributes to a neighbor it has no ATM from: turning
/// when its heading shows it inside a junction zone, else keeping its lane.
pub fn inferred_action(
    s: &Seen,
    network: &RoadNetwork,
    t: f64,
    horizon: f64,
    s0: f64,
    priorities: &crate::cooperation::PriorityTable,
) -> Option<Action> {
    if let Heading::Turning(turn) = s.heading {
        if let Some(ap) = approach(&s.position, s.speed, s.length, turn, network, t) {
            return Some(Action::new(ActionKind::Turning { turn }, ap.footprint, s.id, priorities));
        }
    }
    let mut state = crate::scenario::new_vehicle(
        s.id,
        crate::model::VehicleKind::Adv,
        s.position,
        s.speed,
        s.speed,
        s.length,
    );
    state.heading = s.heading;
    let tube = lane_tube(&state, t, horizon, s0);
    Some(Action::new(ActionKind::LaneKeeping, tube, s.id, priorities))
}

/// Moves `f` by whole ring lengths so that it lies as close as possible to
/// `s`. Footprints on other segment kinds are returned unchanged.
pub fn align(f: ActionFootprint, s: f64, network: &RoadNetwork) -> ActionFootprint {
    match network.segment(f.segment()).filter(|seg| seg.is_ring()) {
        Some(seg) => {
            let (a, b) = f.longitudinal();
            let k = (((a + b) / 2.0 - s) / seg.length).round();
            if k == 0.0 {
                f
            } else {
                f.shifted(-k * seg.length)
            }
        }
        None => f,
    }
}
