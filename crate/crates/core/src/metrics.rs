//! Run summary computed purely from trace records, so that a trace file
//! alone reproduces the report of the run that wrote it.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::cooperation::ResolutionBasis;
use crate::model::{MessageClass, NodeId};
use crate::radio::{LinkKind, Subband, ThroughputMeter};
use crate::trace::{Outcome, Record, RecordBody, TraceHeader, TraceSink};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl LatencyStats {
    pub fn of(values: &mut [f64]) -> Self {
        let mut weighted: Vec<(f64, u64)> = values.iter().map(|v| (*v, 1)).collect();
        Self::weighted(&mut weighted)
    }

    /// Same as [`LatencyStats::of`] over `(value, multiplicity)` pairs.
    pub fn weighted(values: &mut [(f64, u64)]) -> Self {
        let count: u64 = values.iter().map(|v| v.1).sum();
        if count == 0 {
            return Self::default();
        }
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let rank = |p: f64| {
            let r = ((p / 100.0) * count as f64).ceil().max(1.0) as u64;
            let mut seen = 0;
            for (v, n) in values.iter() {
                seen += n;
                if seen >= r {
                    return *v;
                }
            }
            values[values.len() - 1].0
        };
        Self {
            count,
            mean: values.iter().map(|(v, n)| v * *n as f64).sum::<f64>() / count as f64,
            p50: rank(50.0),
            p95: rank(95.0),
            p99: rank(99.0),
        }
    }
}

/// Nearest-rank percentile of sorted, non-empty `values`.
pub fn nearest_rank(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    values[rank.min(n) - 1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub delivered: u64,
    pub lost: u64,
    /// Delivered over delivered plus lost; zero when nothing was attempted.
    pub pdr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCounts {
    pub executed: u64,
    pub fell_back: u64,
    pub deferred: u64,
    pub by_basis: BTreeMap<ResolutionBasis, u64>,
    /// Resolutions decided by turn precedence at intersections.
    pub meeting_priority: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubbandStats {
    pub subband: u8,
    pub messages: u64,
    pub bytes: u64,
    pub attempts: u64,
    /// Failed contention rounds over all rounds (grant-free only).
    pub collision_ratio: f64,
    pub mean_access_latency: f64,
    pub throughput_bps: f64,
    pub peak_backlog_bits: f64,
    pub final_backlog_bits: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UplinkTotals {
    pub admitted: f64,
    pub dropped: f64,
    /// Bytes still queued after the last step.
    pub backlog: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub duration: f64,
    pub records: u64,
    pub latency: BTreeMap<MessageClass, LatencyStats>,
    pub links: BTreeMap<LinkKind, LinkStats>,
    pub conflicts: u64,
    pub resolutions: ResolutionCounts,
    pub near_misses: u64,
    pub collisions: u64,
    pub mean_speed: f64,
    /// Vehicles per hour passing a cross-section, all lanes together.
    pub flow: f64,
    pub max_zone_speed: f64,
    pub subbands: Vec<SubbandStats>,
    pub uplink: UplinkTotals,
    pub spawned: u64,
    pub despawned: u64,
    pub incidents: u64,
    pub cloud_warnings: u64,
}

/// Folds records into a [`MetricsReport`].
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    header: Option<TraceHeader>,
    records: u64,
    latencies: BTreeMap<MessageClass, Vec<(f64, u64)>>,
    links: BTreeMap<LinkKind, (u64, u64)>,
    conflicts: u64,
    resolutions: ResolutionCounts,
    near_misses: u64,
    collisions: u64,
    speed_sum: f64,
    speed_samples: u64,
    max_zone_speed: f64,
    sent: [(u64, u64, u64, u64, f64); 3],
    offered_bits: [BTreeMap<u64, f64>; 3],
    uplink: UplinkTotals,
    spawned: u64,
    despawned: u64,
    incidents: u64,
    cloud_warnings: u64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, r: &Record) {
        self.records += 1;
        match &r.body {
            RecordBody::StateUpdate(u) => {
                self.speed_sum += u.speed;
                self.speed_samples += 1;
                if u.in_zone {
                    self.max_zone_speed = self.max_zone_speed.max(u.speed);
                }
            }
            RecordBody::MsgSent(m) => {
                let Some(sb) = Subband::from_number(m.subband) else {
                    return;
                };
                let e = &mut self.sent[sb.index()];
                e.0 += 1;
                e.1 += u64::from(m.size_bytes);
                e.2 += u64::from(m.attempts);
                e.3 += u64::from(m.attempts.saturating_sub(1));
                e.4 += m.access_latency;
                let dt = self.dt();
                let step = (r.t / dt).round() as u64;
                *self.offered_bits[sb.index()].entry(step).or_default() +=
                    f64::from(m.size_bytes) * 8.0;
                if m.sender == NodeId::Cloud {
                    self.cloud_warnings += 1;
                }
            }
            RecordBody::MsgDelivered(d) => {
                let n = d.receivers.len() as u64;
                self.links.entry(d.link).or_default().0 += n;
                if n > 0 {
                    let lat = self.latencies.entry(d.class).or_default();
                    lat.push((r.t - d.sent_at, n));
                }
            }
            RecordBody::MsgLost(d) => {
                self.links.entry(d.link).or_default().1 += d.receivers.len() as u64;
            }
            RecordBody::ConflictDetected(_) => self.conflicts += 1,
            RecordBody::ActionResolved(a) => {
                let res = &mut self.resolutions;
                match a.outcome {
                    Outcome::Executed => res.executed += 1,
                    Outcome::FellBack => res.fell_back += 1,
                    Outcome::Deferred => res.deferred += 1,
                }
                *res.by_basis.entry(a.basis).or_default() += 1;
                if a.basis == ResolutionBasis::MeetingPriority {
                    res.meeting_priority += 1;
                }
            }
            RecordBody::NearMiss(_) => self.near_misses += 1,
            RecordBody::Collision(_) => self.collisions += 1,
            RecordBody::Spawn(_) => self.spawned += 1,
            RecordBody::Despawn(_) => self.despawned += 1,
            RecordBody::Uplink(u) => {
                self.uplink.admitted += u.admitted;
                self.uplink.dropped += u.dropped;
                self.uplink.backlog = u.deferred;
            }
            RecordBody::Incident(_) => self.incidents += 1,
        }
    }

    fn dt(&self) -> f64 {
        self.header.as_ref().map_or(0.1, |h| h.config.dt)
    }

    pub fn report(&self) -> MetricsReport {
        let Some(h) = &self.header else {
            return MetricsReport::default();
        };
        let cfg = &h.config;
        let steps = cfg.steps();
        let duration = steps as f64 * cfg.dt;

        let latency = self
            .latencies
            .iter()
            .map(|(c, v)| (*c, LatencyStats::weighted(&mut v.clone())))
            .collect();
        let links = self
            .links
            .iter()
            .map(|(k, &(delivered, lost))| {
                let total = delivered + lost;
                let pdr = if total == 0 { 0.0 } else { delivered as f64 / total as f64 };
                (*k, LinkStats { delivered, lost, pdr })
            })
            .collect();

        let subbands = Subband::ALL
            .iter()
            .map(|sb| {
                let (messages, bytes, attempts, failed, lat_sum) = self.sent[sb.index()];
                let mut meter = ThroughputMeter::new(h.subband_capacity_bps[sb.index()]);
                let mut peak = 0.0f64;
                if steps > 0 {
                    let offered = &self.offered_bits[sb.index()];
                    for k in 0..=steps {
                        meter.serve(offered.get(&k).copied().unwrap_or(0.0), cfg.dt);
                        peak = peak.max(meter.backlog_bits);
                    }
                }
                SubbandStats {
                    subband: sb.number(),
                    messages,
                    bytes,
                    attempts,
                    collision_ratio: if attempts == 0 { 0.0 } else { failed as f64 / attempts as f64 },
                    mean_access_latency: if messages == 0 { 0.0 } else { lat_sum / messages as f64 },
                    throughput_bps: if duration > 0.0 { meter.served_bits / duration } else { 0.0 },
                    peak_backlog_bits: peak,
                    final_backlog_bits: meter.backlog_bits,
                }
            })
            .collect();

        let mean_speed = if self.speed_samples == 0 {
            0.0
        } else {
            self.speed_sum / self.speed_samples as f64
        };
        let flow = if steps == 0 || h.road_length <= 0.0 {
            0.0
        } else {
            self.speed_sum / steps as f64 / h.road_length * 3600.0
        };

        MetricsReport {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            duration,
            records: self.records,
            latency,
            links,
            conflicts: self.conflicts,
            resolutions: self.resolutions.clone(),
            near_misses: self.near_misses,
            collisions: self.collisions,
            mean_speed,
            flow,
            max_zone_speed: self.max_zone_speed,
            subbands,
            uplink: self.uplink.clone(),
            spawned: self.spawned,
            despawned: self.despawned,
            incidents: self.incidents,
            cloud_warnings: self.cloud_warnings,
        }
    }
}

impl TraceSink for MetricsAccumulator {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        self.header = Some(header.clone());
        Ok(())
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        self.add(record);
        Ok(())
    }
}

/// Recomputes the report of a JSONL trace.
pub fn report_from_trace<R: io::BufRead>(
    input: R,
) -> Result<MetricsReport, crate::trace::TraceReadError> {
    let mut acc = MetricsAccumulator::new();
    let mut seen_header = false;
    crate::trace::read_trace(input, |h, r| {
        if !seen_header {
            acc.header = Some(h.clone());
            seen_header = true;
        }
        acc.add(&r);
    })
    .map(|h| {
        acc.header = Some(h);
        acc.report()
    })
}
