//! Scenario configuration: a versioned TOML document describing the road,
//! the vehicle census, radio, cooperation and cloud settings of one run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{unmapped, Channel, InterestClass, InterestMap};
use crate::cooperation::{BehaviorParams, CloudParams, PriorityTable};
use crate::mobility::IdmParams;
use crate::model::{TurnDirection, VehicleKind, URBAN_INTERSECTION_CAP};
use crate::radio::{LinkKind, LinkModel, SubbandConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Highest per-lane density (veh/km) accepted for free flow; synchronized
/// flow must be at least this dense.
pub const FREEFLOW_MAX_LANE_DENSITY: f64 = 15.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Freeflow,
    Syncflow,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_psm_period")]
    pub psm_period: f64,
    #[serde(default = "yes")]
    pub cooperation: bool,
    pub road: RoadSpec,
    #[serde(default)]
    pub traffic: TrafficSpec,
    #[serde(default)]
    pub events: EventSpec,
    #[serde(default)]
    pub idm: IdmParams,
    #[serde(default)]
    pub behavior: BehaviorParams,
    #[serde(default)]
    pub priorities: PriorityTable,
    #[serde(default)]
    pub perception: PerceptionSpec,
    #[serde(default)]
    pub radio: RadioSpec,
    #[serde(default)]
    pub cloud: CloudParams,
    #[serde(default)]
    pub sensors: SensorSpec,
}

fn default_dt() -> f64 {
    0.1
}
fn default_psm_period() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    North,
    East,
    South,
    West,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::North, Arm::East, Arm::South, Arm::West];

    pub fn index(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoadSpec {
    /// Closed single-segment highway loop.
    Ring {
        length: f64,
        lanes: u8,
        speed_limit: f64,
    },
    /// Four-arm junction: one incoming and one outgoing segment per arm.
    Intersection {
        arm_length: f64,
        in_lanes: u8,
        #[serde(default = "one")]
        out_lanes: u8,
        speed_limit: f64,
        zone_length: f64,
        #[serde(default)]
        signal: Option<SignalSpec>,
        #[serde(default)]
        crosswalks: Vec<CrosswalkSpec>,
    },
}

fn one() -> u8 {
    1
}

impl RoadSpec {
    /// Total lane-kilometres is not needed; this is the plain road length.
    pub fn length(&self) -> f64 {
        match self {
            RoadSpec::Ring { length, .. } => *length,
            RoadSpec::Intersection { arm_length, .. } => 8.0 * arm_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub cycle: f64,
    /// Green window (start, end) within the cycle for north and south.
    pub north_south: (f64, f64),
    /// Green window for east and west.
    pub east_west: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosswalkSpec {
    pub arm: Arm,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSpec {
    /// Vehicle count on a ring road; alternatively give `density`.
    pub vehicles: Option<u32>,
    /// Vehicles per km across all lanes.
    pub density: Option<f64>,
    pub mdv_fraction: f64,
    pub platoon_sizes: Vec<u32>,
    pub emergency_vehicles: u32,
    pub desired_speed: (f64, f64),
    pub length: f64,
    /// Arrivals per second per intersection arm.
    pub spawn_rate: f64,
    pub turn_mix: TurnMix,
    #[serde(rename = "vehicle")]
    pub explicit: Vec<VehicleSpec>,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self {
            vehicles: None,
            density: None,
            mdv_fraction: 0.0,
            platoon_sizes: vec![],
            emergency_vehicles: 0,
            desired_speed: (25.0, 30.0),
            length: 4.5,
            spawn_rate: 0.0,
            turn_mix: TurnMix::default(),
            explicit: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurnMix {
    pub left: f64,
    pub right: f64,
    pub straight: f64,
}

impl Default for TurnMix {
    fn default() -> Self {
        Self {
            left: 0.25,
            right: 0.25,
            straight: 0.5,
        }
    }
}

/// A vehicle placed by hand. On rings `arm` is ignored; at intersections
/// the vehicle starts on the arm's incoming segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: u32,
    #[serde(default = "adv")]
    pub kind: VehicleKind,
    #[serde(default)]
    pub arm: Option<Arm>,
    pub lane: u8,
    pub s: f64,
    pub speed: f64,
    pub desired_speed: f64,
    #[serde(default)]
    pub emergency: bool,
    #[serde(default)]
    pub turn: Option<TurnDirection>,
    #[serde(default)]
    pub length: Option<f64>,
}

fn adv() -> VehicleKind {
    VehicleKind::Adv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventSpec {
    /// Sudden braking events per vehicle per second.
    pub disturbance_rate: f64,
    pub disturbance_decel: f64,
    pub disturbance_duration: f64,
    #[serde(rename = "malfunction")]
    pub malfunctions: Vec<MalfunctionSpec>,
}

impl Default for EventSpec {
    fn default() -> Self {
        Self {
            disturbance_rate: 0.0,
            disturbance_decel: 5.0,
            disturbance_duration: 1.5,
            malfunctions: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalfunctionSpec {
    pub vehicle: u32,
    pub at: f64,
    #[serde(default)]
    pub repair_after: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionSpec {
    /// Onboard sensing reach, m.
    pub sensor_range: f64,
    /// Length assumed for vehicles known only from PSMs, m.
    pub assumed_length: f64,
    /// Time-to-collision below which a following pair counts as a near
    /// miss, s.
    pub ttc_threshold: f64,
}

impl Default for PerceptionSpec {
    fn default() -> Self {
        Self {
            sensor_range: 100.0,
            assumed_length: 4.5,
            ttc_threshold: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub range: f64,
    pub per: f64,
    pub latency: f64,
}

impl LinkSpec {
    pub fn model(&self, kind: LinkKind) -> LinkModel {
        LinkModel {
            kind,
            range: self.range,
            base_per: self.per,
            base_latency: self.latency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FogSpec {
    pub segment: u32,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSpec {
    pub subbands: SubbandConfig,
    pub v2v: LinkSpec,
    pub v2f: LinkSpec,
    pub v2b: LinkSpec,
    #[serde(rename = "fog")]
    pub fog_nodes: Vec<FogSpec>,
    pub psm_bytes: u32,
    pub atm_bytes: u32,
    /// Seconds between infotainment requests per vehicle; none when unset.
    pub infotainment_period: Option<f64>,
    pub infotainment_bytes: u32,
}

impl Default for RadioSpec {
    fn default() -> Self {
        Self {
            subbands: SubbandConfig::default(),
            v2v: LinkSpec {
                range: 300.0,
                per: 0.0,
                latency: 0.0,
            },
            v2f: LinkSpec {
                range: 500.0,
                per: 0.0,
                latency: 0.001,
            },
            v2b: LinkSpec {
                range: 0.0,
                per: 0.0,
                latency: 0.02,
            },
            fog_nodes: vec![],
            psm_bytes: 300,
            atm_bytes: 200,
            infotainment_period: None,
            infotainment_bytes: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub enabled: bool,
    /// Raw rate per autonomous vehicle, bytes/s.
    pub rate: f64,
    pub suppress: bool,
    pub epsilon: BTreeMap<Channel, f64>,
    pub interest: InterestMap,
    /// V2B uplink capacity shared by all vehicles, bytes/s.
    pub uplink_capacity: f64,
    pub vc_ttl: f64,
    pub uplink_ttl: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            rate: 1e9,
            suppress: true,
            epsilon: BTreeMap::from([
                (Channel::Speed, 0.5),
                (Channel::Gap, 1.0),
                (Channel::Roughness, 0.05),
            ]),
            interest: BTreeMap::from([
                (Channel::Speed, InterestClass::Remote),
                (Channel::Gap, InterestClass::Local),
                (Channel::Roughness, InterestClass::Local),
            ]),
            uplink_capacity: 10e9 / 8.0,
            vc_ttl: 10.0,
            uplink_ttl: 5.0,
        }
    }
}

impl ScenarioConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let issues = cfg.validate();
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Steps the run takes: `ceil(duration / dt)`.
    pub fn steps(&self) -> u64 {
        if self.duration <= 0.0 {
            return 0;
        }
        let n = self.duration / self.dt;
        // tolerate representation error in exact multiples
        let r = n.round();
        if (n - r).abs() < 1e-9 {
            r as u64
        } else {
            n.ceil() as u64
        }
    }

    pub fn psm_period_steps(&self) -> u64 {
        (self.psm_period / self.dt).round().max(1.0) as u64
    }

    /// Number of ring vehicles implied by `vehicles` or `density`.
    pub fn ring_vehicle_count(&self) -> u32 {
        let t = &self.traffic;
        match (t.vehicles, t.density) {
            (Some(n), _) => n,
            (None, Some(d)) => (d * self.road.length() / 1000.0).round() as u32,
            (None, None) => 0,
        }
    }

    /// Vehicles per km per lane on ring roads.
    pub fn lane_density(&self) -> Option<f64> {
        match self.road {
            RoadSpec::Ring { length, lanes, .. } => {
                let n = self.ring_vehicle_count() + self.traffic.explicit.len() as u32;
                Some(n as f64 / (length / 1000.0) / lanes as f64)
            }
            RoadSpec::Intersection { .. } => None,
        }
    }

    pub fn speed_limit(&self) -> f64 {
        match self.road {
            RoadSpec::Ring { speed_limit, .. } | RoadSpec::Intersection { speed_limit, .. } => {
                speed_limit
            }
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.dt > 0.0) {
            errs.push("dt: must be positive".into());
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            errs.push("duration: must be a finite non-negative number of seconds".into());
        }
        if self.dt > 0.0 {
            let ratio = self.psm_period / self.dt;
            if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-6 {
                errs.push(format!(
                    "psm_period: {} is not an integer multiple of dt ({})",
                    self.psm_period, self.dt
                ));
            }
        }
        errs.extend(prefixed("radio.subbands", self.radio.subbands.validate()));
        for (name, kind, spec) in [
            ("radio.v2v", LinkKind::V2v, &self.radio.v2v),
            ("radio.v2f", LinkKind::V2f, &self.radio.v2f),
            ("radio.v2b", LinkKind::V2b, &self.radio.v2b),
        ] {
            errs.extend(prefixed(name, spec.model(kind).validate()));
        }
        if let Some(p) = self.radio.infotainment_period {
            if !(p > 0.0) {
                errs.push("radio.infotainment_period: must be positive".into());
            }
        }
        errs.extend(prefixed("idm", self.idm.validate()));
        errs.extend(self.behavior.validate());
        errs.extend(self.cloud.validate());
        let p = &self.perception;
        if !(p.sensor_range >= 0.0) || !(p.assumed_length > 0.0) || !(p.ttc_threshold > 0.0) {
            errs.push("perception: sensor_range must be >= 0, assumed_length and ttc_threshold > 0".into());
        }
        errs.extend(self.validate_sensors());
        errs.extend(self.validate_road_and_traffic());
        errs
    }

    fn validate_sensors(&self) -> Vec<String> {
        let s = &self.sensors;
        let mut errs = vec![];
        for c in unmapped(&s.interest) {
            errs.push(format!("sensors.interest: channel {c:?} is not mapped"));
        }
        for c in Channel::ALL {
            match s.epsilon.get(&c) {
                Some(e) if *e >= 0.0 => {}
                Some(_) => errs.push(format!("sensors.epsilon: {c:?} must be non-negative")),
                None => errs.push(format!("sensors.epsilon: channel {c:?} is missing")),
            }
        }
        if !(s.rate >= 0.0) {
            errs.push("sensors.rate: must be non-negative".into());
        }
        if !(s.uplink_capacity > 0.0) {
            errs.push("sensors.uplink_capacity: must be positive".into());
        }
        if !(s.vc_ttl > 0.0) || !(s.uplink_ttl > 0.0) {
            errs.push("sensors: TTLs must be positive".into());
        }
        errs
    }

    fn validate_road_and_traffic(&self) -> Vec<String> {
        let mut errs = vec![];
        let t = &self.traffic;
        match (&self.road, self.kind) {
            (RoadSpec::Ring { length, lanes, speed_limit }, ScenarioKind::Freeflow | ScenarioKind::Syncflow) => {
                if !(*length > 0.0) || *lanes == 0 || !(*speed_limit > 0.0) {
                    errs.push("road: ring needs positive length, lanes and speed_limit".into());
                }
                if t.vehicles.is_some() && t.density.is_some() {
                    errs.push("traffic: give either vehicles or density, not both".into());
                }
                if let Some(d) = t.density {
                    if !(d >= 0.0) {
                        errs.push("traffic.density: must be non-negative".into());
                    }
                }
                if let Some(d) = self.lane_density() {
                    match self.kind {
                        ScenarioKind::Freeflow if d >= FREEFLOW_MAX_LANE_DENSITY => errs.push(format!(
                            "traffic: free flow needs fewer than {FREEFLOW_MAX_LANE_DENSITY} veh/km per lane, got {d:.1}"
                        )),
                        ScenarioKind::Syncflow if d < FREEFLOW_MAX_LANE_DENSITY => errs.push(format!(
                            "traffic: synchronized flow needs at least {FREEFLOW_MAX_LANE_DENSITY} veh/km per lane, got {d:.1}"
                        )),
                        _ => {}
                    }
                }
                let special: u32 = t.platoon_sizes.iter().sum::<u32>() + t.emergency_vehicles;
                if special > self.ring_vehicle_count() {
                    errs.push("traffic: more platoon members and emergency vehicles than vehicles".into());
                }
                if t.platoon_sizes.iter().any(|s| *s < 2) {
                    errs.push("traffic.platoon_sizes: platoons need at least two vehicles".into());
                }
            }
            (
                RoadSpec::Intersection {
                    arm_length,
                    in_lanes,
                    out_lanes,
                    speed_limit,
                    zone_length,
                    signal,
                    crosswalks,
                },
                ScenarioKind::Intersection,
            ) => {
                if !(*arm_length > 0.0) || *in_lanes == 0 || *out_lanes == 0 {
                    errs.push("road: intersection needs positive arm_length and lane counts".into());
                }
                if !(*speed_limit > 0.0) || *speed_limit > URBAN_INTERSECTION_CAP + 1e-9 {
                    errs.push(format!(
                        "road.speed_limit: must lie in (0, {:.3}] m/s (40 km/h) at intersections",
                        URBAN_INTERSECTION_CAP
                    ));
                }
                if !(*zone_length > 0.0) || *zone_length >= *arm_length {
                    errs.push("road.zone_length: must be positive and shorter than arm_length".into());
                }
                if let Some(s) = signal {
                    let ok = |w: (f64, f64)| w.0 >= 0.0 && w.0 < w.1 && w.1 <= s.cycle;
                    if !(s.cycle > 0.0) || !ok(s.north_south) || !ok(s.east_west) {
                        errs.push("road.signal: green windows must lie inside a positive cycle".into());
                    }
                }
                if crosswalks.iter().any(|c| !(c.start < c.end)) {
                    errs.push("road.crosswalks: windows need start < end".into());
                }
                if t.vehicles.is_some() || t.density.is_some() || !t.platoon_sizes.is_empty() {
                    errs.push("traffic: intersections use spawn_rate and explicit vehicles only".into());
                }
                if !(t.spawn_rate >= 0.0) {
                    errs.push("traffic.spawn_rate: must be non-negative".into());
                }
                let m = t.turn_mix;
                if m.left < 0.0 || m.right < 0.0 || m.straight < 0.0 || m.left + m.right + m.straight <= 0.0 {
                    errs.push("traffic.turn_mix: weights must be non-negative and not all zero".into());
                }
                if t.explicit.iter().any(|v| v.arm.is_none() || v.turn.is_none()) {
                    errs.push("traffic.vehicle: intersection vehicles need an arm and a turn".into());
                }
            }
            (_, kind) => errs.push(format!("road: layout does not match scenario kind {kind:?}")),
        }
        let (lo, hi) = t.desired_speed;
        if !(lo > 0.0 && lo <= hi && hi <= self.speed_limit() + 1e-9) {
            errs.push(format!(
                "traffic.desired_speed: need 0 < min <= max <= speed limit {}",
                self.speed_limit()
            ));
        }
        if !(0.0..=1.0).contains(&t.mdv_fraction) {
            errs.push("traffic.mdv_fraction: must lie in [0, 1]".into());
        }
        if !(t.length > 0.0) {
            errs.push("traffic.length: must be positive".into());
        }
        let e = &self.events;
        if !(e.disturbance_rate >= 0.0) || !(e.disturbance_decel > 0.0) || !(e.disturbance_duration > 0.0) {
            errs.push("events: disturbance rate must be >= 0, decel and duration > 0".into());
        }
        errs
    }
}

fn prefixed(prefix: &str, issues: Vec<String>) -> Vec<String> {
    issues.into_iter().map(|i| format!("{prefix}: {i}")).collect()
}
