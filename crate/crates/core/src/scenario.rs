//! Turns a validated configuration into a road network and an initial
//! vehicle population.

use rand::Rng;

use crate::config::{Arm, RoadSpec, ScenarioConfig, VehicleSpec};
use crate::model::{
    validate_world, BehaviorMode, CrosswalkWindow, GreenWindow, Heading, Intersection, JunctionId,
    NetworkError, PlatoonDescriptor, Position, RoadNetwork, Segment, SegmentId, SignalPlan,
    TurnDirection, TurnRule, VehicleId, VehicleKind, VehicleState,
};

/// Bundled reference configurations by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("freeflow-small", include_str!("../scenarios/freeflow-small.toml")),
    ("syncflow-reference", include_str!("../scenarios/syncflow-reference.toml")),
    ("intersection-reference", include_str!("../scenarios/intersection-reference.toml")),
    ("overtake", include_str!("../scenarios/overtake.toml")),
    ("intersection-meeting", include_str!("../scenarios/intersection-meeting.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub const CENTER: JunctionId = JunctionId(0);

pub fn incoming_segment(arm: Arm) -> SegmentId {
    SegmentId(arm.index() + 1)
}

pub fn outgoing_segment(arm: Arm) -> SegmentId {
    SegmentId(arm.index() + 5)
}

/// Arm a movement leaves through. Arms are numbered clockwise from north.
pub fn exit_arm(from: Arm, turn: TurnDirection) -> Arm {
    let offset = match turn {
        TurnDirection::Straight => 2,
        TurnDirection::Right => 3,
        TurnDirection::Left => 1,
    };
    Arm::ALL[((from.index() + offset) % 4) as usize]
}

/// Incoming lanes from which `turn` may be made.
pub fn turn_lanes(turn: TurnDirection, lanes: u8) -> (u8, u8) {
    match turn {
        TurnDirection::Left => (1, 1),
        TurnDirection::Right => (lanes, lanes),
        TurnDirection::Straight => (1, lanes),
    }
}

pub fn build_network(cfg: &ScenarioConfig) -> Result<RoadNetwork, NetworkError> {
    match &cfg.road {
        RoadSpec::Ring {
            length,
            lanes,
            speed_limit,
        } => RoadNetwork::ring(*length, *lanes, *speed_limit),
        RoadSpec::Intersection {
            arm_length,
            in_lanes,
            out_lanes,
            speed_limit,
            zone_length,
            signal,
            crosswalks,
        } => {
            let mut segments = vec![];
            let mut turns = vec![];
            for arm in Arm::ALL {
                segments.push(Segment {
                    id: incoming_segment(arm),
                    from: JunctionId(10 + arm.index()),
                    to: CENTER,
                    length: *arm_length,
                    lane_count: *in_lanes,
                    speed_limit: *speed_limit,
                });
                segments.push(Segment {
                    id: outgoing_segment(arm),
                    from: CENTER,
                    to: JunctionId(20 + arm.index()),
                    length: *arm_length,
                    lane_count: *out_lanes,
                    speed_limit: *speed_limit,
                });
                for turn in [TurnDirection::Left, TurnDirection::Right, TurnDirection::Straight] {
                    turns.push(TurnRule {
                        from: incoming_segment(arm),
                        turn,
                        to: outgoing_segment(exit_arm(arm, turn)),
                        to_lane: if turn == TurnDirection::Right { *out_lanes } else { 1 },
                    });
                }
            }
            let signal = signal.as_ref().map(|s| SignalPlan {
                cycle: s.cycle,
                green: Arm::ALL
                    .iter()
                    .map(|&arm| {
                        let (start, end) = match arm {
                            Arm::North | Arm::South => s.north_south,
                            Arm::East | Arm::West => s.east_west,
                        };
                        GreenWindow {
                            segment: incoming_segment(arm),
                            start,
                            end,
                        }
                    })
                    .collect(),
            });
            let crosswalks = crosswalks
                .iter()
                .map(|c| CrosswalkWindow {
                    segment: incoming_segment(c.arm),
                    start: c.start,
                    end: c.end,
                })
                .collect();
            RoadNetwork::new(
                segments,
                vec![Intersection {
                    id: CENTER,
                    incoming: Arm::ALL.iter().map(|&a| incoming_segment(a)).collect(),
                    signal,
                    speed_limit: *speed_limit,
                    zone_length: *zone_length,
                    turns,
                    crosswalks,
                }],
            )
        }
    }
}

/// One vehicle of the initial population with its engine-side extras.
#[derive(Debug, Clone, PartialEq)]
pub struct Placed {
    pub state: VehicleState,
    pub turn: Option<TurnDirection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub vehicles: Vec<Placed>,
    pub platoons: Vec<PlatoonDescriptor>,
}

pub fn new_vehicle(
    id: VehicleId,
    kind: VehicleKind,
    position: Position,
    speed: f64,
    desired_speed: f64,
    length: f64,
) -> VehicleState {
    VehicleState {
        id,
        kind,
        position,
        speed,
        heading: Heading::LaneAligned,
        accel: 0.0,
        length,
        desired_speed,
        malfunction: false,
        behavior: BehaviorMode::FreeDriving,
        emergency: false,
    }
}

/// Builds the initial population. Ring roads get evenly spaced vehicles
/// lane by lane; junction scenarios start with the explicit vehicles only.
/// Random draws: one desired speed per generated vehicle, then one kind
/// draw per ordinary vehicle, all in id order.
pub fn materialize<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    network: &RoadNetwork,
    rng: &mut R,
) -> Result<Population, Vec<String>> {
    let t = &cfg.traffic;
    let mut vehicles: Vec<Placed> = vec![];
    let mut platoons = vec![];
    let explicit_max = t.explicit.iter().map(|v| v.id).max().unwrap_or(0);

    if let RoadSpec::Ring {
        length,
        lanes,
        speed_limit,
    } = cfg.road
    {
        let n = cfg.ring_vehicle_count();
        // (lane, s) slots, stagger lanes so neighbors are not side by side
        let mut slots: Vec<(u8, f64, f64)> = vec![];
        for lane in 1..=lanes {
            let m = (0..n).filter(|i| (i % u32::from(lanes)) as u8 + 1 == lane).count();
            if m == 0 {
                continue;
            }
            let spacing = length / m as f64;
            let offset = f64::from(lane - 1) * spacing / f64::from(lanes);
            for j in 0..m {
                slots.push((lane, (offset + j as f64 * spacing) % length, spacing));
            }
        }
        slots.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (lo, hi) = t.desired_speed;
        let mut generated: Vec<VehicleState> = slots
            .iter()
            .enumerate()
            .map(|(i, &(lane, s, spacing))| {
                let desired = rng.gen_range(lo..=hi).min(speed_limit);
                let gap = spacing - t.length;
                let speed = desired.min(((gap - cfg.idm.s0) / cfg.idm.headway).max(0.0));
                new_vehicle(
                    VehicleId(explicit_max + 1 + i as u32),
                    VehicleKind::Adv,
                    Position {
                        segment: SegmentId(0),
                        lane,
                        s,
                    },
                    speed,
                    desired,
                    t.length,
                )
            })
            .collect();

        let mut special = vec![false; generated.len()];
        // emergency vehicles take the first slots of the passing lane
        let mut ev_left = t.emergency_vehicles;
        for (i, v) in generated.iter_mut().enumerate() {
            if ev_left == 0 {
                break;
            }
            if v.position.lane == 1 {
                v.emergency = true;
                v.desired_speed = hi.min(speed_limit);
                special[i] = true;
                ev_left -= 1;
            }
        }
        // platoons take consecutive slots in the rightmost lane and close up
        // behind the last of them
        let right: Vec<usize> = (0..generated.len())
            .filter(|&i| generated[i].position.lane == lanes && !special[i])
            .collect();
        let mut cursor = 0;
        for &size in &t.platoon_sizes {
            let size = size as usize;
            if cursor + size > right.len() {
                return Err(vec![format!(
                    "traffic.platoon_sizes: not enough vehicles in lane {lanes} for a platoon of {size}"
                )]);
            }
            let members = &right[cursor..cursor + size];
            cursor += size;
            let head_i = members[size - 1];
            let head = generated[head_i].clone();
            let gap = cfg.idm.s0 + PLATOON_HEADWAY * head.speed;
            generated[head_i].kind = VehicleKind::PlatoonHead;
            special[head_i] = true;
            let mut followers = vec![];
            for (k, &i) in members[..size - 1].iter().rev().enumerate() {
                let v = &mut generated[i];
                v.kind = VehicleKind::PlatoonFollower;
                v.speed = head.speed;
                v.desired_speed = head.desired_speed;
                v.position.s = (head.position.s - (k + 1) as f64 * (gap + t.length)).rem_euclid(length);
                special[i] = true;
                followers.push(v.id);
            }
            platoons.push(PlatoonDescriptor {
                head: head.id,
                followers,
                active: true,
            });
        }
        for (i, v) in generated.iter_mut().enumerate() {
            let mdv = rng.gen::<f64>() < t.mdv_fraction;
            if mdv && !special[i] {
                v.kind = VehicleKind::Mdv;
            }
        }
        vehicles.extend(generated.into_iter().map(|state| Placed { state, turn: None }));
    }

    for spec in &t.explicit {
        vehicles.push(place_explicit(cfg, spec));
    }
    vehicles.sort_by_key(|p| p.state.id);

    let states: Vec<VehicleState> = vehicles.iter().map(|p| p.state.clone()).collect();
    let violations = validate_world(network, &states, &platoons);
    if !violations.is_empty() {
        return Err(violations.iter().map(|v| format!("initial world: {v}")).collect());
    }
    Ok(Population { vehicles, platoons })
}

/// Desired time headway inside a platoon, s.
pub const PLATOON_HEADWAY: f64 = 0.6;

fn place_explicit(cfg: &ScenarioConfig, spec: &VehicleSpec) -> Placed {
    let segment = spec.arm.map_or(SegmentId(0), incoming_segment);
    let mut state = new_vehicle(
        VehicleId(spec.id),
        spec.kind,
        Position {
            segment,
            lane: spec.lane,
            s: spec.s,
        },
        spec.speed,
        spec.desired_speed,
        spec.length.unwrap_or(cfg.traffic.length),
    );
    state.emergency = spec.emergency;
    Placed {
        state,
        turn: spec.turn,
    }
}

/// Start times of random hard-braking events for one vehicle over
/// `[from, until)`, as a Poisson process of the given rate.
pub fn disturbance_schedule<R: Rng + ?Sized>(rate: f64, from: f64, until: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![];
    if !(rate > 0.0) {
        return out;
    }
    let mut t = from;
    loop {
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / rate;
        if t >= until {
            return out;
        }
        out.push(t);
    }
}
