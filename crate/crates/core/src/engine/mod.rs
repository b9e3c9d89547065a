//! Fixed-step simulation loop. Each step runs, in order: message delivery,
//! neighbor-table refresh (and cloud ingestion), action selection, conflict
//! detection and arbitration, vehicle motion, then message generation and
//! radio access. All randomness comes from one seeded generator and every
//! iteration over vehicles is in ascending id order.

mod comms;
mod decide;
mod motion;
pub mod perception;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cloud::{Suppressor, UplinkQueues, VehicularCloud};
use crate::config::ScenarioConfig;
use crate::cooperation::{CloudState, DecisionState};
use crate::messaging::{NeighborTable, Sequencer, StaticContext};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::mobility::ManeuverPlan;
use crate::model::{
    Message, NetworkError, PlatoonDescriptor, RoadNetwork, TurnDirection, VehicleId, VehicleState,
};
use crate::radio::{LinkKind, Subband, SubbandScheduler};
use crate::scenario::{build_network, disturbance_schedule, materialize};
use crate::trace::{Record, RecordBody, TraceHeader, TraceSink, TRACE_SCHEMA, TRACE_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("road network: {0}")]
    Network(#[from] NetworkError),
    #[error("step {step} (t = {t:.3} s) broke a world invariant: {}", .violations.join("; "))]
    Invariant {
        step: u64,
        t: f64,
        violations: Vec<String>,
    },
    #[error("trace output: {0}")]
    Io(#[from] io::Error),
}

/// A vehicle together with its onboard decision state.
#[derive(Debug, Clone)]
pub(crate) struct Agent {
    pub state: VehicleState,
    pub turn: Option<TurnDirection>,
    pub memory: DecisionState,
    pub plan: Option<ManeuverPlan>,
    /// The plan has not been announced yet.
    pub announce: bool,
    pub table: NeighborTable,
    pub inbox: Vec<Message>,
    /// Pending start times of sudden braking events.
    pub disturbances: VecDeque<f64>,
    pub disturbed_until: f64,
    pub repaired_at: Option<f64>,
    pub wrecked: bool,
    pub last_brake_atm: f64,
    pub suppressor: Suppressor,
}

impl Agent {
    fn new(state: VehicleState, turn: Option<TurnDirection>, disturbances: Vec<f64>) -> Self {
        Self {
            table: NeighborTable::new(state.id),
            state,
            turn,
            memory: DecisionState::default(),
            plan: None,
            announce: false,
            inbox: vec![],
            disturbances: disturbances.into(),
            disturbed_until: f64::NEG_INFINITY,
            repaired_at: None,
            wrecked: false,
            last_brake_atm: f64::NEG_INFINITY,
            suppressor: Suppressor::default(),
        }
    }
}

/// A message on its way to one or more receivers over one link.
#[derive(Debug, Clone)]
pub(crate) struct InFlight {
    pub due: f64,
    pub order: u64,
    pub msg: Message,
    pub link: LinkKind,
    pub receivers: Vec<crate::model::NodeId>,
}

#[derive(Debug, Clone)]
pub(crate) struct MalfunctionEvent {
    pub vehicle: VehicleId,
    pub at: f64,
    pub repair_after: Option<f64>,
    pub applied: bool,
}

pub struct Simulation {
    pub(crate) cfg: ScenarioConfig,
    pub(crate) network: RoadNetwork,
    pub(crate) ctx: StaticContext,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) agents: BTreeMap<VehicleId, Agent>,
    pub(crate) platoons: Vec<PlatoonDescriptor>,
    pub(crate) step: u64,
    pub(crate) next_id: u32,
    pub(crate) seq: Sequencer,
    pub(crate) scheduler: SubbandScheduler,
    pub(crate) in_flight: Vec<InFlight>,
    pub(crate) flight_order: u64,
    pub(crate) cloud: CloudState,
    pub(crate) cloud_inbox: Vec<(f64, Message)>,
    pub(crate) uplink: UplinkQueues,
    pub(crate) vc: VehicularCloud,
    pub(crate) malfunctions: Vec<MalfunctionEvent>,
    /// Accident reports to send at the end of the step.
    pub(crate) accidents: Vec<VehicleId>,
    pub(crate) near: BTreeSet<(VehicleId, VehicleId)>,
    pub(crate) wrecks: BTreeSet<(VehicleId, VehicleId)>,
    pending: Vec<(u64, Record)>,
    record_seq: u64,
}

pub(crate) fn pair(a: VehicleId, b: VehicleId) -> (VehicleId, VehicleId) {
    (a.min(b), a.max(b))
}

impl Simulation {
    /// Validates the config and builds the initial world.
    pub fn new(cfg: ScenarioConfig) -> Result<Self, EngineError> {
        let issues = cfg.validate();
        if !issues.is_empty() {
            return Err(EngineError::Config(issues));
        }
        let network = build_network(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pop = materialize(&cfg, &network, &mut rng).map_err(EngineError::Config)?;
        let mut agents = BTreeMap::new();
        for placed in pop.vehicles {
            let d = disturbance_schedule(cfg.events.disturbance_rate, 0.0, cfg.duration, &mut rng);
            agents.insert(placed.state.id, Agent::new(placed.state, placed.turn, d));
        }
        let next_id = agents.keys().next_back().map_or(1, |v| v.0 + 1);
        let malfunctions = cfg
            .events
            .malfunctions
            .iter()
            .map(|m| MalfunctionEvent {
                vehicle: VehicleId(m.vehicle),
                at: m.at,
                repair_after: m.repair_after,
                applied: false,
            })
            .collect();
        Ok(Self {
            ctx: StaticContext::of(&network),
            cloud: CloudState::new(&network, cfg.cloud.history_len),
            scheduler: SubbandScheduler::new(cfg.radio.subbands.clone()),
            network,
            rng,
            agents,
            platoons: pop.platoons,
            step: 0,
            next_id,
            seq: Sequencer::default(),
            in_flight: vec![],
            flight_order: 0,
            cloud_inbox: vec![],
            uplink: UplinkQueues::new(),
            vc: VehicularCloud::default(),
            malfunctions,
            accidents: vec![],
            near: BTreeSet::new(),
            wrecks: BTreeSet::new(),
            pending: vec![],
            record_seq: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn cloud_state(&self) -> &CloudState {
        &self.cloud
    }

    pub fn vehicular_cloud(&self) -> &VehicularCloud {
        &self.vc
    }

    /// Steps taken so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Simulation time at the start of the next step.
    pub fn now(&self) -> f64 {
        self.time_of(self.step)
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.agents.values().map(|a| &a.state)
    }

    pub fn platoons(&self) -> &[PlatoonDescriptor] {
        &self.platoons
    }

    pub fn header(&self) -> TraceHeader {
        let sb = &self.cfg.radio.subbands;
        TraceHeader {
            schema: TRACE_SCHEMA.into(),
            schema_version: TRACE_SCHEMA_VERSION,
            config: self.cfg.clone(),
            road_length: self.network.total_length(),
            subband_capacity_bps: Subband::ALL.map(|s| sb.capacity_bps(s)),
        }
    }

    pub(crate) fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.cfg.dt
    }

    pub(crate) fn emit(&mut self, t: f64, vehicle: Option<VehicleId>, body: RecordBody) {
        self.pending.push((self.record_seq, Record::new(t, vehicle, body)));
        self.record_seq += 1;
    }

    /// Advances one step and writes every record that can no longer be
    /// preceded by a later one.
    pub fn step<S: TraceSink + ?Sized>(&mut self, sink: &mut S) -> Result<(), EngineError> {
        let k = self.step;
        let t = self.time_of(k);
        let t1 = self.time_of(k + 1);

        self.deliver(t);
        self.refresh_tables(t);
        self.cloud_phase(t);
        let world: Vec<VehicleState> = self.agents.values().map(|a| a.state.clone()).collect();
        let mut decisions = self.select(t, &world);
        if self.cfg.cooperation {
            self.arbitrate(t, &mut decisions);
        }
        self.move_vehicles(t, t1, &decisions);
        self.communicate(k + 1, t1, &decisions);
        self.sense(t1);
        self.check_invariants(k + 1, t1)?;
        self.step += 1;
        self.flush(Some(t), sink)?;
        Ok(())
    }

    /// Writes all remaining records. Messages still in flight are not
    /// delivered.
    pub fn finish<S: TraceSink + ?Sized>(&mut self, sink: &mut S) -> Result<(), EngineError> {
        self.flush(None, sink)?;
        sink.finish()?;
        Ok(())
    }

    fn flush<S: TraceSink + ?Sized>(&mut self, upto: Option<f64>, sink: &mut S) -> Result<(), EngineError> {
        let limit = upto.map_or(f64::INFINITY, |t| t + 1e-9);
        let (mut ready, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|(_, r)| r.t <= limit);
        self.pending = rest;
        ready.sort_by(|a, b| a.1.cmp_key(&b.1).then(a.0.cmp(&b.0)));
        for (_, r) in &ready {
            sink.record(r)?;
        }
        Ok(())
    }

    fn check_invariants(&self, step: u64, t: f64) -> Result<(), EngineError> {
        let states: Vec<VehicleState> = self.agents.values().map(|a| a.state.clone()).collect();
        let violations: Vec<String> = crate::model::validate_world(&self.network, &states, &self.platoons)
            .into_iter()
            .filter(|v| match v {
                crate::model::Violation::Overlap { a, b } => !self.wrecks.contains(&pair(*a, *b)),
                _ => true,
            })
            .map(|v| v.to_string())
            .collect();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(EngineError::Invariant { step, t, violations })
        }
    }
}

/// Runs a whole scenario into `sink` and returns the metrics of the trace.
pub fn run<S: TraceSink>(cfg: &ScenarioConfig, sink: S) -> Result<MetricsReport, EngineError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut both = (sink, MetricsAccumulator::new());
    both.header(&sim.header())?;
    for _ in 0..cfg.steps() {
        sim.step(&mut both)?;
    }
    sim.finish(&mut both)?;
    Ok(both.1.report())
}
