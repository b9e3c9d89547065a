//! Sensor data path: per-vehicle sample streams, delta suppression,
//! local/remote routing, the per-segment vehicular-cloud store and the
//! shared V2B uplink budget.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{SegmentId, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Speed,
    Gap,
    Roughness,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Speed, Channel::Gap, Channel::Roughness];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub channel: Channel,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStream {
    pub vehicle: VehicleId,
    /// Nominal raw rate, bytes/s.
    pub rate: f64,
    pub samples: Vec<Sample>,
}

/// Streaming form of the keep rule: remembers the last kept value per
/// channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Suppressor {
    last: BTreeMap<Channel, f64>,
}

impl Suppressor {
    /// Keeps the sample iff it is the channel's first or differs from the
    /// last kept value by more than `epsilon`.
    pub fn keep(&mut self, sample: &Sample, epsilon: f64) -> bool {
        let keep = self
            .last
            .get(&sample.channel)
            .map_or(true, |last| (sample.value - last).abs() > epsilon);
        if keep {
            self.last.insert(sample.channel, sample.value);
        }
        keep
    }
}

pub fn delta_suppress(samples: &[Sample], epsilon: f64) -> Vec<Sample> {
    let mut s = Suppressor::default();
    samples
        .iter()
        .filter(|x| s.keep(x, epsilon))
        .copied()
        .collect()
}

/// Value seen at each original sample when every channel holds its last
/// kept sample. `kept` must be a subsequence of `original`.
pub fn hold_reconstruct(original: &[Sample], kept: &[Sample]) -> Vec<f64> {
    let mut held: BTreeMap<Channel, f64> = BTreeMap::new();
    let mut next = 0;
    original
        .iter()
        .map(|o| {
            if kept.get(next) == Some(o) {
                held.insert(o.channel, o.value);
                next += 1;
            }
            held.get(&o.channel).copied().unwrap_or(f64::NAN)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterestClass {
    Local,
    Remote,
}

pub type InterestMap = BTreeMap<Channel, InterestClass>;

/// Channels missing from `map`; configurations must leave this empty.
pub fn unmapped(map: &InterestMap) -> Vec<Channel> {
    Channel::ALL
        .iter()
        .filter(|c| !map.contains_key(c))
        .copied()
        .collect()
}

/// Splits samples into (vehicular cloud, remote cloud). Every channel must
/// be mapped; this is checked when the configuration is loaded.
pub fn classify_and_route(samples: &[Sample], map: &InterestMap) -> (Vec<Sample>, Vec<Sample>) {
    samples
        .iter()
        .partition(|s| map[&s.channel] == InterestClass::Local)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stored {
    pub vehicle: VehicleId,
    pub sample: Sample,
    pub stored_at: f64,
}

/// Per-segment store of locally relevant samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicularCloud {
    by_segment: BTreeMap<SegmentId, Vec<Stored>>,
}

impl VehicularCloud {
    pub fn insert(&mut self, segment: SegmentId, vehicle: VehicleId, sample: Sample, now: f64) {
        self.by_segment.entry(segment).or_default().push(Stored {
            vehicle,
            sample,
            stored_at: now,
        });
    }

    /// Forgets samples stored more than `ttl` ago; returns how many.
    pub fn evict(&mut self, now: f64, ttl: f64) -> usize {
        let mut n = 0;
        for v in self.by_segment.values_mut() {
            let before = v.len();
            v.retain(|s| now - s.stored_at <= ttl + 1e-9);
            n += before - v.len();
        }
        n
    }

    pub fn len(&self) -> usize {
        self.by_segment.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateView {
    pub samples: Vec<(VehicleId, Sample)>,
    /// Distinct contributing vehicles.
    pub coverage: usize,
}

/// Union of retained samples on `segment` for `channel` across vehicles,
/// without duplicate (vehicle, time) entries, ordered by time then vehicle.
pub fn vc_aggregate(store: &VehicularCloud, segment: SegmentId, channel: Channel) -> AggregateView {
    let mut seen = BTreeSet::new();
    let mut samples: Vec<(VehicleId, Sample)> = store
        .by_segment
        .get(&segment)
        .into_iter()
        .flatten()
        .filter(|s| s.sample.channel == channel)
        .filter(|s| seen.insert((s.vehicle, s.sample.t.to_bits())))
        .map(|s| (s.vehicle, s.sample))
        .collect();
    samples.sort_by(|a, b| a.1.t.total_cmp(&b.1.t).then(a.0.cmp(&b.0)));
    let coverage = samples.iter().map(|s| s.0).collect::<BTreeSet<_>>().len();
    AggregateView { samples, coverage }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub channel: Channel,
    pub bytes: f64,
    pub enqueued: f64,
}

/// Byte accounting of one uplink step. `offered` is the backlog carried in
/// plus this step's arrivals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UplinkStep {
    pub offered: f64,
    pub admitted: f64,
    pub deferred: f64,
    pub dropped: f64,
    pub admitted_per_vehicle: BTreeMap<VehicleId, f64>,
    pub channels: BTreeSet<Channel>,
}

pub type UplinkQueues = BTreeMap<VehicleId, VecDeque<Chunk>>;

/// Shares `capacity * dt` bytes among vehicles with queued data. Chunks
/// older than `ttl` are dropped first; the budget is then split max-min
/// fairly (each round offers every backlogged vehicle an equal share, and
/// unused share is redistributed), serving each queue front to back.
pub fn uplink_budget(
    queues: &mut UplinkQueues,
    arrivals: Vec<(VehicleId, Chunk)>,
    capacity: f64,
    dt: f64,
    now: f64,
    ttl: f64,
) -> UplinkStep {
    let mut step = UplinkStep::default();
    for (v, c) in arrivals {
        queues.entry(v).or_default().push_back(c);
    }
    for q in queues.values_mut() {
        step.offered += q.iter().map(|c| c.bytes).sum::<f64>();
        while q.front().is_some_and(|c| now - c.enqueued > ttl + 1e-9) {
            step.dropped += q.pop_front().map_or(0.0, |c| c.bytes);
        }
    }

    let mut budget = capacity * dt;
    let mut want: BTreeMap<VehicleId, f64> = queues
        .iter()
        .map(|(v, q)| (*v, q.iter().map(|c| c.bytes).sum::<f64>()))
        .filter(|(_, b)| *b > 0.0)
        .collect();
    let mut grant: BTreeMap<VehicleId, f64> = BTreeMap::new();
    while budget > 0.0 && !want.is_empty() {
        let share = budget / want.len() as f64;
        let mut satisfied = vec![];
        for (v, w) in want.iter_mut() {
            let g = w.min(share);
            *grant.entry(*v).or_default() += g;
            *w -= g;
            budget -= g;
            if *w <= 0.0 {
                satisfied.push(*v);
            }
        }
        if satisfied.is_empty() {
            break;
        }
        for v in satisfied {
            want.remove(&v);
        }
    }

    for (v, mut g) in grant {
        let q = queues.get_mut(&v).expect("granted vehicles have queues");
        let mut served = 0.0;
        while g > 0.0 {
            let Some(front) = q.front_mut() else { break };
            step.channels.insert(front.channel);
            let take = front.bytes.min(g);
            front.bytes -= take;
            g -= take;
            served += take;
            if front.bytes <= 0.0 {
                q.pop_front();
            }
        }
        step.admitted += served;
        step.admitted_per_vehicle.insert(v, served);
    }
    queues.retain(|_, q| !q.is_empty());
    step.deferred = queues
        .values()
        .flat_map(|q| q.iter().map(|c| c.bytes))
        .sum();
    step
}
