//! Domain types shared by every part of the simulator: vehicles, roads,
//! platoons, control messages and action footprints.
//!
//! Roads are one-dimensional per segment. A position is a segment, a lane
//! index and the longitudinal coordinate of the vehicle's front bumper.
//! Lanes are numbered from 1 (leftmost, the passing lane) to `lane_count`
//! (rightmost).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed cap inside urban intersection zones, 40 km/h.
pub const URBAN_INTERSECTION_CAP: f64 = 40.0 / 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

impl fmt::Display for JunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seg{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JunctionId(pub u32);

/// Originator of a message: a vehicle or the centralized cloud server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Vehicle(VehicleId),
    Cloud,
}

impl NodeId {
    pub fn vehicle(self) -> Option<VehicleId> {
        match self {
            NodeId::Vehicle(v) => Some(v),
            NodeId::Cloud => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Mdv,
    Adv,
    PlatoonHead,
    PlatoonFollower,
}

impl VehicleKind {
    pub fn is_autonomous(self) -> bool {
        !matches!(self, VehicleKind::Mdv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    LaneAligned,
    Turning(TurnDirection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OvertakePhase {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorMode {
    FreeDriving,
    CarFollowing,
    LaneKeeping,
    LaneChanging,
    Overtaking(OvertakePhase),
    Avoidance,
    EmergencyAvoidance,
    Platooning,
    IntersectionQueuing,
    Turning(TurnDirection),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub segment: SegmentId,
    pub lane: u8,
    /// Front bumper, meters from the segment start.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub position: Position,
    pub speed: f64,
    pub heading: Heading,
    pub accel: f64,
    pub length: f64,
    pub desired_speed: f64,
    pub malfunction: bool,
    pub behavior: BehaviorMode,
    /// Emergency vehicles are ordinary ADVs that broadcast an avoidance
    /// corridor while moving.
    #[serde(default)]
    pub emergency: bool,
}

impl VehicleState {
    pub fn rear(&self) -> f64 {
        self.position.s - self.length
    }

    pub fn lane(&self) -> u8 {
        self.position.lane
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatoonDescriptor {
    pub head: VehicleId,
    pub followers: Vec<VehicleId>,
    pub active: bool,
}

impl PlatoonDescriptor {
    pub fn members(&self) -> impl Iterator<Item = VehicleId> + '_ {
        std::iter::once(self.head).chain(self.followers.iter().copied())
    }

    /// Head's right to interrupt platoon mode; all members leave at once.
    pub fn dissolve(&mut self) {
        self.active = false;
    }

    /// Vehicle directly ahead of `member` within the platoon.
    pub fn predecessor(&self, member: VehicleId) -> Option<VehicleId> {
        let idx = self.followers.iter().position(|&f| f == member)?;
        Some(if idx == 0 {
            self.head
        } else {
            self.followers[idx - 1]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub from: JunctionId,
    pub to: JunctionId,
    pub length: f64,
    pub lane_count: u8,
    pub speed_limit: f64,
}

impl Segment {
    /// A ring segment starts and ends at the same junction.
    pub fn is_ring(&self) -> bool {
        self.from == self.to
    }
}

/// Green windows per incoming segment within a repeating cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub cycle: f64,
    pub green: Vec<GreenWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenWindow {
    pub segment: SegmentId,
    pub start: f64,
    pub end: f64,
}

impl SignalPlan {
    pub fn is_green(&self, segment: SegmentId, t: f64) -> bool {
        let phase = t.rem_euclid(self.cycle);
        self.green
            .iter()
            .any(|w| w.segment == segment && phase >= w.start && phase < w.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnRule {
    pub from: SegmentId,
    pub turn: TurnDirection,
    pub to: SegmentId,
    pub to_lane: u8,
}

/// Pedestrian crosswalk occupancy in front of an incoming segment's stop line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosswalkWindow {
    pub segment: SegmentId,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: JunctionId,
    pub incoming: Vec<SegmentId>,
    pub signal: Option<SignalPlan>,
    pub speed_limit: f64,
    /// Length of the intersection zone on each side of the stop line.
    pub zone_length: f64,
    pub turns: Vec<TurnRule>,
    #[serde(default)]
    pub crosswalks: Vec<CrosswalkWindow>,
}

impl Intersection {
    pub fn turn(&self, from: SegmentId, turn: TurnDirection) -> Option<&TurnRule> {
        self.turns.iter().find(|r| r.from == from && r.turn == turn)
    }

    /// True when vehicles on `segment` may enter at time `t`.
    pub fn may_enter(&self, segment: SegmentId, t: f64) -> bool {
        let light = self.signal.as_ref().map_or(true, |s| s.is_green(segment, t));
        let crossing = self
            .crosswalks
            .iter()
            .any(|c| c.segment == segment && t >= c.start && t < c.end);
        light && !crossing
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate segment id {0}")]
    DuplicateSegment(SegmentId),
    #[error("segment {0} has non-positive length or zero lanes")]
    BadSegment(SegmentId),
    #[error("intersection {0:?} speed limit {1} m/s exceeds the urban cap")]
    IntersectionSpeed(JunctionId, f64),
    #[error("intersection {0:?} references unknown segment {1}")]
    UnknownSegment(JunctionId, SegmentId),
    #[error("turn rule into {0} targets lane {1} outside the segment")]
    BadTurnLane(SegmentId, u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    segments: Vec<Segment>,
    intersections: Vec<Intersection>,
}

impl RoadNetwork {
    pub fn new(
        mut segments: Vec<Segment>,
        intersections: Vec<Intersection>,
    ) -> Result<Self, NetworkError> {
        segments.sort_by_key(|s| s.id);
        for w in segments.windows(2) {
            if w[0].id == w[1].id {
                return Err(NetworkError::DuplicateSegment(w[0].id));
            }
        }
        for s in &segments {
            if !(s.length > 0.0) || s.lane_count == 0 || !(s.speed_limit > 0.0) {
                return Err(NetworkError::BadSegment(s.id));
            }
        }
        let net = Self {
            segments,
            intersections,
        };
        for i in &net.intersections {
            if i.speed_limit > URBAN_INTERSECTION_CAP + 1e-9 {
                return Err(NetworkError::IntersectionSpeed(i.id, i.speed_limit));
            }
            for seg in i.incoming.iter().chain(i.turns.iter().map(|r| &r.to)) {
                if net.segment(*seg).is_none() {
                    return Err(NetworkError::UnknownSegment(i.id, *seg));
                }
            }
            for r in &i.turns {
                let to = net.segment(r.to).expect("checked above");
                if r.to_lane == 0 || r.to_lane > to.lane_count {
                    return Err(NetworkError::BadTurnLane(r.to, r.to_lane));
                }
            }
        }
        Ok(net)
    }

    /// Single-segment ring road.
    pub fn ring(length: f64, lane_count: u8, speed_limit: f64) -> Result<Self, NetworkError> {
        Self::new(
            vec![Segment {
                id: SegmentId(0),
                from: JunctionId(0),
                to: JunctionId(0),
                length,
                lane_count,
                speed_limit,
            }],
            vec![],
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn segment(&self, id: SegmentId) -> Option<&Segment> {
        self.segments
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.segments[i])
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Segments that directly continue `id` (their start junction is its end).
    pub fn successors(&self, id: SegmentId) -> Vec<SegmentId> {
        let Some(seg) = self.segment(id) else {
            return vec![];
        };
        self.segments
            .iter()
            .filter(|s| s.from == seg.to)
            .map(|s| s.id)
            .collect()
    }

    /// Undirected segment adjacency: segments sharing a junction.
    pub fn neighbors(&self, id: SegmentId) -> BTreeSet<SegmentId> {
        let Some(seg) = self.segment(id) else {
            return BTreeSet::new();
        };
        self.segments
            .iter()
            .filter(|s| s.id != id)
            .filter(|s| {
                s.from == seg.to || s.to == seg.from || s.from == seg.from || s.to == seg.to
            })
            .map(|s| s.id)
            .collect()
    }

    /// Intersection whose stop line ends segment `id`.
    pub fn intersection_at_end(&self, id: SegmentId) -> Option<&Intersection> {
        self.intersections.iter().find(|i| i.incoming.contains(&id))
    }

    /// Intersection that segment `id` leaves from.
    pub fn intersection_at_start(&self, id: SegmentId) -> Option<&Intersection> {
        let seg = self.segment(id)?;
        self.intersections
            .iter()
            .find(|i| i.id == seg.from && !i.incoming.contains(&id))
    }

    /// Signed forward distance from `from` to `to` on the same segment,
    /// wrapping around ring segments into `(-L/2, L/2]`.
    pub fn forward_offset(&self, segment: SegmentId, from: f64, to: f64) -> f64 {
        let d = to - from;
        match self.segment(segment) {
            Some(seg) if seg.is_ring() => {
                let l = seg.length;
                let mut d = d.rem_euclid(l);
                if d > l / 2.0 {
                    d -= l;
                }
                d
            }
            _ => d,
        }
    }

    /// Distance used for radio range checks. Vehicles on different segments
    /// are measured through the junction they share; unrelated segments are
    /// out of reach.
    pub fn radio_distance(&self, a: &Position, b: &Position) -> f64 {
        if a.segment == b.segment {
            return self.forward_offset(a.segment, a.s, b.s).abs();
        }
        let (Some(sa), Some(sb)) = (self.segment(a.segment), self.segment(b.segment)) else {
            return f64::INFINITY;
        };
        let to_junction = |seg: &Segment, s: f64, j: JunctionId| -> Option<f64> {
            if seg.to == j {
                Some((seg.length - s).max(0.0))
            } else if seg.from == j {
                Some(s.max(0.0))
            } else {
                None
            }
        };
        [sa.from, sa.to]
            .into_iter()
            .filter_map(|j| Some(to_junction(sa, a.s, j)? + to_junction(sb, b.s, j)?))
            .fold(f64::INFINITY, f64::min)
    }

    /// True when `pos` lies within the intersection zone on either side of a
    /// stop line.
    pub fn in_intersection_zone(&self, pos: &Position) -> bool {
        if let Some(i) = self.intersection_at_end(pos.segment) {
            let len = self.segment(pos.segment).map_or(0.0, |s| s.length);
            if pos.s >= len - i.zone_length {
                return true;
            }
        }
        if let Some(i) = self.intersection_at_start(pos.segment) {
            if pos.s <= i.zone_length {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageClass {
    Psm,
    Atm,
    Infotainment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtmAction {
    ChangeLanes,
    Overtake,
    Brake,
    EmergencyVehicleAvoidance,
    /// Accident report; carries no maneuver.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageHeader {
    pub sender: NodeId,
    pub timestamp: f64,
    pub seq: u64,
    pub class: MessageClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmPayload {
    pub position: Position,
    pub direction: Heading,
    pub speed: f64,
    pub malfunction: bool,
}

impl PsmPayload {
    pub fn of(state: &VehicleState) -> Self {
        Self {
            position: state.position,
            direction: state.heading,
            speed: state.speed,
            malfunction: state.malfunction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Psm(PsmPayload),
    Atm {
        action: AtmAction,
        footprint: ActionFootprint,
    },
    Infotainment {
        size: u32,
    },
}

impl Payload {
    pub fn class(&self) -> MessageClass {
        match self {
            Payload::Psm(_) => MessageClass::Psm,
            Payload::Atm { .. } => MessageClass::Atm,
            Payload::Infotainment { .. } => MessageClass::Infotainment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub header: MessageHeader,
    pub payload: Payload,
}

impl Message {
    pub fn new(sender: NodeId, timestamp: f64, seq: u64, payload: Payload) -> Self {
        Self {
            header: MessageHeader {
                sender,
                timestamp,
                seq,
                class: payload.class(),
            },
            payload,
        }
    }

    pub fn class(&self) -> MessageClass {
        self.header.class
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FootprintError {
    #[error("lane interval ({0}, {1}) is empty or zero-based")]
    Lanes(u8, u8),
    #[error("longitudinal interval ({0}, {1}) is empty")]
    Longitudinal(f64, f64),
    #[error("time interval ({0}, {1}) is empty")]
    Time(f64, f64),
}

/// Axis-aligned box in (lane, position, time) claimed by an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFootprint", into = "RawFootprint")]
pub struct ActionFootprint {
    segment: SegmentId,
    lanes: (u8, u8),
    s: (f64, f64),
    t: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct RawFootprint {
    segment: SegmentId,
    lanes: (u8, u8),
    s: (f64, f64),
    t: (f64, f64),
}

impl TryFrom<RawFootprint> for ActionFootprint {
    type Error = FootprintError;
    fn try_from(r: RawFootprint) -> Result<Self, Self::Error> {
        ActionFootprint::new(r.segment, r.lanes, r.s, r.t)
    }
}

impl From<ActionFootprint> for RawFootprint {
    fn from(f: ActionFootprint) -> Self {
        RawFootprint {
            segment: f.segment,
            lanes: f.lanes,
            s: f.s,
            t: f.t,
        }
    }
}

impl ActionFootprint {
    pub fn new(
        segment: SegmentId,
        lanes: (u8, u8),
        s: (f64, f64),
        t: (f64, f64),
    ) -> Result<Self, FootprintError> {
        if lanes.0 == 0 || lanes.0 > lanes.1 {
            return Err(FootprintError::Lanes(lanes.0, lanes.1));
        }
        if !(s.0 < s.1) {
            return Err(FootprintError::Longitudinal(s.0, s.1));
        }
        if !(t.0 < t.1) {
            return Err(FootprintError::Time(t.0, t.1));
        }
        Ok(Self {
            segment,
            lanes,
            s,
            t,
        })
    }

    pub fn segment(&self) -> SegmentId {
        self.segment
    }
    pub fn lanes(&self) -> (u8, u8) {
        self.lanes
    }
    pub fn longitudinal(&self) -> (f64, f64) {
        self.s
    }
    pub fn time(&self) -> (f64, f64) {
        self.t
    }

    pub fn contains_lane(&self, lane: u8) -> bool {
        lane >= self.lanes.0 && lane <= self.lanes.1
    }

    /// Same box moved by `ds` meters.
    pub fn shifted(&self, ds: f64) -> Self {
        Self {
            s: (self.s.0 + ds, self.s.1 + ds),
            ..*self
        }
    }

    /// Lane indices valid for the segment in `network`.
    pub fn is_valid_on(&self, network: &RoadNetwork) -> bool {
        network
            .segment(self.segment)
            .is_some_and(|seg| self.lanes.1 <= seg.lane_count)
    }
}

/// Two footprints conflict iff they share a segment and their lane, position
/// and time intervals all overlap. Lane intervals are closed; position and
/// time intervals are open so that boxes which merely touch do not conflict.
pub fn footprints_conflict(a: &ActionFootprint, b: &ActionFootprint) -> bool {
    a.segment == b.segment
        && a.lanes.0 <= b.lanes.1
        && b.lanes.0 <= a.lanes.1
        && a.s.0 < b.s.1
        && b.s.0 < a.s.1
        && a.t.0 < b.t.1
        && b.t.0 < a.t.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "violation")]
pub enum Violation {
    Overlap { a: VehicleId, b: VehicleId },
    SpeedAboveLimit { vehicle: VehicleId, speed: f64, limit: f64 },
    DesiredSpeedAboveLimit { vehicle: VehicleId, desired: f64, limit: f64 },
    NegativeSpeed { vehicle: VehicleId },
    NonPositiveLength { vehicle: VehicleId },
    LaneOutOfRange { vehicle: VehicleId, lane: u8 },
    UnknownSegment { vehicle: VehicleId, segment: SegmentId },
    PositionOffSegment { vehicle: VehicleId, s: f64 },
    DuplicateId { vehicle: VehicleId },
    DanglingPlatoonHead { follower: VehicleId, head: VehicleId },
    FollowerWithoutPlatoon { follower: VehicleId },
    HeadInFollowers { head: VehicleId },
    EmptyActivePlatoon { head: VehicleId },
    OvertakingPhase { vehicle: VehicleId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Overlap { a, b } => write!(f, "overlap: {a} and {b} occupy the same space"),
            Violation::SpeedAboveLimit { vehicle, speed, limit } => {
                write!(f, "speed above limit: {vehicle} at {speed} > {limit}")
            }
            Violation::DesiredSpeedAboveLimit { vehicle, desired, limit } => {
                write!(f, "desired speed above limit: {vehicle} wants {desired} > {limit}")
            }
            Violation::NegativeSpeed { vehicle } => write!(f, "negative speed: {vehicle}"),
            Violation::NonPositiveLength { vehicle } => write!(f, "non-positive length: {vehicle}"),
            Violation::LaneOutOfRange { vehicle, lane } => {
                write!(f, "lane out of range: {vehicle} in lane {lane}")
            }
            Violation::UnknownSegment { vehicle, segment } => {
                write!(f, "unknown segment: {vehicle} on {segment}")
            }
            Violation::PositionOffSegment { vehicle, s } => {
                write!(f, "position off segment: {vehicle} at {s}")
            }
            Violation::DuplicateId { vehicle } => write!(f, "duplicate id: {vehicle}"),
            Violation::DanglingPlatoonHead { follower, head } => {
                write!(f, "dangling platoon head: {follower} follows absent {head}")
            }
            Violation::FollowerWithoutPlatoon { follower } => {
                write!(f, "follower without platoon: {follower}")
            }
            Violation::HeadInFollowers { head } => write!(f, "platoon head {head} listed as follower"),
            Violation::EmptyActivePlatoon { head } => {
                write!(f, "active platoon of {head} has no followers")
            }
            Violation::OvertakingPhase { vehicle } => write!(f, "bad overtaking phase: {vehicle}"),
        }
    }
}

/// Collects every invariant violation of an initial (or current) world.
/// An empty list means the world is valid.
pub fn validate_world(
    network: &RoadNetwork,
    vehicles: &[VehicleState],
    platoons: &[PlatoonDescriptor],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_id: BTreeMap<VehicleId, &VehicleState> = BTreeMap::new();
    for v in vehicles {
        if by_id.insert(v.id, v).is_some() {
            out.push(Violation::DuplicateId { vehicle: v.id });
        }
    }

    let mut lanes: BTreeMap<(SegmentId, u8), Vec<&VehicleState>> = BTreeMap::new();
    for v in vehicles {
        if !(v.speed >= 0.0) {
            out.push(Violation::NegativeSpeed { vehicle: v.id });
        }
        if !(v.length > 0.0) {
            out.push(Violation::NonPositiveLength { vehicle: v.id });
        }
        let Some(seg) = network.segment(v.position.segment) else {
            out.push(Violation::UnknownSegment {
                vehicle: v.id,
                segment: v.position.segment,
            });
            continue;
        };
        if v.position.lane == 0 || v.position.lane > seg.lane_count {
            out.push(Violation::LaneOutOfRange {
                vehicle: v.id,
                lane: v.position.lane,
            });
        }
        if !(v.position.s >= 0.0 && v.position.s <= seg.length) {
            out.push(Violation::PositionOffSegment {
                vehicle: v.id,
                s: v.position.s,
            });
        }
        if v.speed > seg.speed_limit + 1e-9 {
            out.push(Violation::SpeedAboveLimit {
                vehicle: v.id,
                speed: v.speed,
                limit: seg.speed_limit,
            });
        }
        if v.desired_speed > seg.speed_limit + 1e-9 {
            out.push(Violation::DesiredSpeedAboveLimit {
                vehicle: v.id,
                desired: v.desired_speed,
                limit: seg.speed_limit,
            });
        }
        lanes
            .entry((v.position.segment, v.position.lane))
            .or_default()
            .push(v);
    }

    for ((segment, _), mut group) in lanes {
        group.sort_by(|a, b| a.position.s.total_cmp(&b.position.s).then(a.id.cmp(&b.id)));
        let ring = network.segment(segment).is_some_and(Segment::is_ring);
        let n = group.len();
        for i in 0..n {
            let pairs = if ring && n > 1 { n } else { n.saturating_sub(1) };
            if i >= pairs {
                break;
            }
            let back = group[i];
            let front = group[(i + 1) % n];
            let mut ahead = front.position.s - back.position.s;
            if ring {
                let len = network.segment(segment).map_or(f64::INFINITY, |s| s.length);
                ahead = ahead.rem_euclid(len);
            }
            let gap = ahead - front.length;
            let same_spot = back.position.s == front.position.s;
            if same_spot || gap < 0.0 {
                let (a, b) = if back.id < front.id {
                    (back.id, front.id)
                } else {
                    (front.id, back.id)
                };
                let v = Violation::Overlap { a, b };
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
    }

    let mut followers_seen = BTreeSet::new();
    for p in platoons {
        if p.followers.contains(&p.head) {
            out.push(Violation::HeadInFollowers { head: p.head });
        }
        if p.active && p.followers.is_empty() {
            out.push(Violation::EmptyActivePlatoon { head: p.head });
        }
        let head_ok = by_id
            .get(&p.head)
            .is_some_and(|h| h.kind == VehicleKind::PlatoonHead);
        for f in &p.followers {
            followers_seen.insert(*f);
            if !head_ok {
                out.push(Violation::DanglingPlatoonHead {
                    follower: *f,
                    head: p.head,
                });
            }
        }
    }
    for v in vehicles {
        if v.kind == VehicleKind::PlatoonFollower && !followers_seen.contains(&v.id) {
            out.push(Violation::FollowerWithoutPlatoon { follower: v.id });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(lanes: (u8, u8), s: (f64, f64), t: (f64, f64)) -> ActionFootprint {
        ActionFootprint::new(SegmentId(0), lanes, s, t).unwrap()
    }

    pub(crate) fn car(id: u32, lane: u8, s: f64, speed: f64) -> VehicleState {
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
            desired_speed: 30.0,
            malfunction: false,
            behavior: BehaviorMode::FreeDriving,
            emergency: false,
        }
    }

    #[test]
    fn overlapping_boxes_conflict() {
        let a = fp((1, 2), (0.0, 50.0), (0.0, 3.0));
        let b = fp((2, 2), (40.0, 90.0), (2.0, 5.0));
        assert!(footprints_conflict(&a, &b));
        assert!(footprints_conflict(&b, &a));
    }

    #[test]
    fn disjoint_lanes_do_not_conflict() {
        let a = fp((1, 1), (0.0, 50.0), (0.0, 3.0));
        let b = fp((2, 2), (0.0, 50.0), (0.0, 3.0));
        assert!(!footprints_conflict(&a, &b));
    }

    #[test]
    fn touching_intervals_do_not_conflict() {
        let a = fp((1, 1), (0.0, 50.0), (0.0, 3.0));
        let b = fp((1, 1), (50.0, 60.0), (0.0, 3.0));
        assert!(!footprints_conflict(&a, &b));
    }

    #[test]
    fn different_segments_never_conflict() {
        let a = fp((1, 1), (0.0, 50.0), (0.0, 3.0));
        let b = ActionFootprint::new(SegmentId(1), (1, 1), (0.0, 50.0), (0.0, 3.0)).unwrap();
        assert!(!footprints_conflict(&a, &b));
    }

    #[test]
    fn footprint_rejects_degenerate_intervals() {
        assert!(ActionFootprint::new(SegmentId(0), (2, 1), (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(ActionFootprint::new(SegmentId(0), (0, 1), (0.0, 1.0), (0.0, 1.0)).is_err());
        assert!(ActionFootprint::new(SegmentId(0), (1, 1), (1.0, 1.0), (0.0, 1.0)).is_err());
        assert!(ActionFootprint::new(SegmentId(0), (1, 1), (0.0, 1.0), (2.0, 1.0)).is_err());
        let bad = r#"{"segment":0,"lanes":[1,1],"s":[5.0,1.0],"t":[0.0,1.0]}"#;
        assert!(serde_json::from_str::<ActionFootprint>(bad).is_err());
    }

    #[test]
    fn empty_world_is_valid() {
        let net = RoadNetwork::ring(1000.0, 3, 30.0).unwrap();
        assert!(validate_world(&net, &[], &[]).is_empty());
    }

    #[test]
    fn same_spot_is_overlap() {
        let net = RoadNetwork::ring(1000.0, 3, 30.0).unwrap();
        let v = validate_world(&net, &[car(1, 2, 100.0, 10.0), car(2, 2, 100.0, 10.0)], &[]);
        assert_eq!(
            v,
            vec![Violation::Overlap {
                a: VehicleId(1),
                b: VehicleId(2)
            }]
        );
        assert!(v[0].to_string().starts_with("overlap"));
    }

    #[test]
    fn ring_overlap_across_origin() {
        let net = RoadNetwork::ring(1000.0, 1, 30.0).unwrap();
        let v = validate_world(&net, &[car(1, 1, 998.0, 10.0), car(2, 1, 2.0, 10.0)], &[]);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn follower_with_absent_head_is_dangling() {
        let net = RoadNetwork::ring(1000.0, 3, 30.0).unwrap();
        let mut f = car(5, 1, 100.0, 10.0);
        f.kind = VehicleKind::PlatoonFollower;
        let p = PlatoonDescriptor {
            head: VehicleId(4),
            followers: vec![VehicleId(5)],
            active: true,
        };
        let v = validate_world(&net, &[f], &[p]);
        assert_eq!(
            v,
            vec![Violation::DanglingPlatoonHead {
                follower: VehicleId(5),
                head: VehicleId(4)
            }]
        );
        assert!(v[0].to_string().contains("dangling platoon head"));
    }

    #[test]
    fn speed_and_lane_violations_are_reported() {
        let net = RoadNetwork::ring(1000.0, 2, 30.0).unwrap();
        let mut a = car(1, 3, 100.0, 35.0);
        a.desired_speed = 40.0;
        let v = validate_world(&net, &[a], &[]);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn radio_distance_wraps_on_ring_and_crosses_junctions() {
        let net = RoadNetwork::ring(1000.0, 1, 30.0).unwrap();
        let a = Position { segment: SegmentId(0), lane: 1, s: 990.0 };
        let b = Position { segment: SegmentId(0), lane: 1, s: 10.0 };
        assert!((net.radio_distance(&a, &b) - 20.0).abs() < 1e-9);

        let seg = |id, from, to| Segment {
            id: SegmentId(id),
            from: JunctionId(from),
            to: JunctionId(to),
            length: 100.0,
            lane_count: 1,
            speed_limit: 10.0,
        };
        let net = RoadNetwork::new(vec![seg(1, 0, 1), seg(2, 1, 2), seg(3, 5, 6)], vec![]).unwrap();
        let a = Position { segment: SegmentId(1), lane: 1, s: 90.0 };
        let b = Position { segment: SegmentId(2), lane: 1, s: 15.0 };
        let c = Position { segment: SegmentId(3), lane: 1, s: 15.0 };
        assert!((net.radio_distance(&a, &b) - 25.0).abs() < 1e-9);
        assert!(net.radio_distance(&a, &c).is_infinite());
    }

    #[test]
    fn intersection_speed_above_cap_is_rejected() {
        let r = RoadNetwork::new(
            vec![],
            vec![Intersection {
                id: JunctionId(0),
                incoming: vec![],
                signal: None,
                speed_limit: 50.0 / 3.6,
                zone_length: 20.0,
                turns: vec![],
                crosswalks: vec![],
            }],
        );
        assert!(matches!(r, Err(NetworkError::IntersectionSpeed(..))));
    }
}
