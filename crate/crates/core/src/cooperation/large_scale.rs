use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AtmAction, JunctionId, Message, NodeId, Payload, RoadNetwork, SegmentId, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudParams {
    /// Prediction horizon, s.
    pub horizon: f64,
    /// Warning radius in segment hops.
    pub aea_hops: u32,
    /// Speed floor for travel-time weights, m/s.
    pub v_floor: f64,
    /// Density samples retained per segment.
    pub history_len: usize,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            aea_hops: 2,
            v_floor: 1.0,
            history_len: 10,
        }
    }
}

impl CloudParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if !(self.horizon >= 0.0) {
            errs.push("cloud.horizon must be non-negative".into());
        }
        if !(self.v_floor > 0.0) {
            errs.push("cloud.v_floor must be positive".into());
        }
        if self.history_len == 0 {
            errs.push("cloud.history_len must be at least 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    Malfunction,
    Accident,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub vehicle: VehicleId,
    pub kind: IncidentKind,
    pub segment: SegmentId,
    pub lane: u8,
    pub s: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub count: usize,
    /// Vehicles per km.
    pub density: f64,
    /// `None` when no vehicle reported on the segment.
    pub mean_speed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Report {
    seq: u64,
    received: f64,
    segment: SegmentId,
    speed: f64,
}

/// Centralized picture of the road built from V2B reports.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudState {
    reports: BTreeMap<VehicleId, Report>,
    stats: BTreeMap<SegmentId, SegmentStats>,
    history: BTreeMap<SegmentId, VecDeque<(f64, f64)>>,
    history_len: usize,
    incidents: Vec<Incident>,
    open_incidents: BTreeSet<(VehicleId, u8)>,
    /// Reports whose position did not resolve onto the network.
    pub dropped: u64,
}

impl CloudState {
    pub fn new(network: &RoadNetwork, history_len: usize) -> Self {
        let stats = network
            .segments()
            .iter()
            .map(|s| {
                (
                    s.id,
                    SegmentStats {
                        count: 0,
                        density: 0.0,
                        mean_speed: None,
                    },
                )
            })
            .collect();
        Self {
            reports: BTreeMap::new(),
            stats,
            history: BTreeMap::new(),
            history_len: history_len.max(1),
            incidents: vec![],
            open_incidents: BTreeSet::new(),
            dropped: 0,
        }
    }

    pub fn stats(&self, segment: SegmentId) -> Option<&SegmentStats> {
        self.stats.get(&segment)
    }

    pub fn all_stats(&self) -> &BTreeMap<SegmentId, SegmentStats> {
        &self.stats
    }

    pub fn incidents(&self) -> &[Incident] {
        &self.incidents
    }

    pub fn history(&self, segment: SegmentId) -> Option<&VecDeque<(f64, f64)>> {
        self.history.get(&segment)
    }

    /// Appends a density sample directly, bypassing ingestion.
    pub fn push_history(&mut self, segment: SegmentId, t: f64, density: f64) {
        let h = self.history.entry(segment).or_default();
        h.push_back((t, density));
        while h.len() > self.history_len {
            h.pop_front();
        }
    }

    /// Overrides a segment's mean speed.
    pub fn set_mean_speed(&mut self, segment: SegmentId, speed: Option<f64>) {
        if let Some(s) = self.stats.get_mut(&segment) {
            s.mean_speed = speed;
        }
    }
}

/// Folds V2B reports received since the last call into the cloud state and
/// recomputes per-segment statistics at time `t`. Reports older than
/// `max_age` are forgotten. Returns incidents first seen in this batch.
pub fn cloud_ingest(
    state: &mut CloudState,
    network: &RoadNetwork,
    received: &[(f64, Message)],
    t: f64,
    max_age: f64,
) -> Vec<Incident> {
    let mut new_incidents = vec![];
    for (at, msg) in received {
        let NodeId::Vehicle(id) = msg.header.sender else {
            continue;
        };
        let (position, speed, kind) = match &msg.payload {
            Payload::Psm(p) => (
                p.position,
                p.speed,
                p.malfunction.then_some(IncidentKind::Malfunction),
            ),
            Payload::Atm {
                action: AtmAction::Other,
                footprint,
            } => {
                let pos = crate::model::Position {
                    segment: footprint.segment(),
                    lane: footprint.lanes().0,
                    s: footprint.longitudinal().1,
                };
                (pos, 0.0, Some(IncidentKind::Accident))
            }
            _ => continue,
        };
        let resolvable = network.segment(position.segment).is_some_and(|seg| {
            position.lane >= 1
                && position.lane <= seg.lane_count
                && position.s >= 0.0
                && position.s <= seg.length
                && speed.is_finite()
        });
        if !resolvable {
            state.dropped += 1;
            continue;
        }
        if let Some(kind) = kind {
            let key = (id, kind as u8);
            if state.open_incidents.insert(key) {
                let inc = Incident {
                    vehicle: id,
                    kind,
                    segment: position.segment,
                    lane: position.lane,
                    s: position.s,
                    time: *at,
                };
                state.incidents.push(inc);
                new_incidents.push(inc);
            }
        } else if matches!(msg.payload, Payload::Psm(_)) {
            state.open_incidents.remove(&(id, IncidentKind::Malfunction as u8));
        }
        if let Payload::Psm(_) = msg.payload {
            let newer = state
                .reports
                .get(&id)
                .map_or(true, |r| msg.header.seq > r.seq);
            if newer {
                state.reports.insert(
                    id,
                    Report {
                        seq: msg.header.seq,
                        received: *at,
                        segment: position.segment,
                        speed,
                    },
                );
            }
        }
    }
    state.reports.retain(|_, r| t - r.received <= max_age + 1e-9);

    let mut sums: BTreeMap<SegmentId, (usize, f64)> = BTreeMap::new();
    for r in state.reports.values() {
        let e = sums.entry(r.segment).or_default();
        e.0 += 1;
        e.1 += r.speed;
    }
    for seg in network.segments() {
        let (count, speed_sum) = sums.get(&seg.id).copied().unwrap_or_default();
        let density = count as f64 / (seg.length / 1000.0);
        state.stats.insert(
            seg.id,
            SegmentStats {
                count,
                density,
                mean_speed: (count > 0).then(|| speed_sum / count as f64),
            },
        );
        state.push_history(seg.id, t, density);
    }
    new_incidents
}

/// Least-squares trend fitted to `(time, value)` samples and evaluated
/// `horizon` seconds after the last sample, clamped at zero. A constant
/// history predicts itself; a linear one extrapolates exactly.
pub fn trend_forecast(samples: &[(f64, f64)], horizon: f64) -> Option<f64> {
    let (last_t, _) = *samples.last()?;
    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_v = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_t).powi(2)).sum();
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.0 - mean_t) * (s.1 - mean_v))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Some((mean_v + slope * (last_t - mean_t + horizon)).max(0.0))
}

/// Predicted density per segment `horizon` seconds ahead. Segments without
/// history are omitted.
pub fn cloud_rtp(state: &CloudState, horizon: f64) -> BTreeMap<SegmentId, f64> {
    state
        .history
        .iter()
        .filter_map(|(seg, h)| {
            let samples: Vec<(f64, f64)> = h.iter().copied().collect();
            trend_forecast(&samples, horizon).map(|d| (*seg, d))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no path from junction {from} to junction {to}")]
pub struct NoPath {
    pub from: JunctionId,
    pub to: JunctionId,
}

/// Travel time of a segment under the current cloud picture.
pub fn travel_time(state: &CloudState, network: &RoadNetwork, segment: SegmentId, v_floor: f64) -> f64 {
    let seg = network.segment(segment).expect("segment from network");
    let speed = state
        .stats(segment)
        .and_then(|s| s.mean_speed)
        .unwrap_or(seg.speed_limit);
    seg.length / speed.max(v_floor)
}

/// Fastest route between two junctions as a segment list. Equal-time routes
/// are separated by the lexicographically smallest segment sequence.
pub fn cloud_opp(
    state: &CloudState,
    network: &RoadNetwork,
    src: JunctionId,
    dst: JunctionId,
    v_floor: f64,
) -> Result<Vec<SegmentId>, NoPath> {
    if src == dst {
        return Ok(vec![]);
    }
    let mut best: BTreeMap<JunctionId, (f64, Vec<SegmentId>)> = BTreeMap::new();
    let mut settled: BTreeSet<JunctionId> = BTreeSet::new();
    best.insert(src, (0.0, vec![]));
    loop {
        let next = best
            .iter()
            .filter(|(j, _)| !settled.contains(j))
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then_with(|| a.1 .1.cmp(&b.1 .1)))
            .map(|(j, l)| (*j, l.clone()));
        let Some((node, (cost, path))) = next else {
            return Err(NoPath { from: src, to: dst });
        };
        if node == dst {
            return Ok(path);
        }
        settled.insert(node);
        for seg in network.segments().iter().filter(|s| s.from == node) {
            if settled.contains(&seg.to) {
                continue;
            }
            let c = cost + travel_time(state, network, seg.id, v_floor);
            let mut p = path.clone();
            p.push(seg.id);
            let better = best.get(&seg.to).map_or(true, |(bc, bp)| {
                c.total_cmp(bc).then_with(|| p.cmp(bp)).is_lt()
            });
            if better {
                best.insert(seg.to, (c, p));
            }
        }
    }
}

/// Segments within `hops` of the incident segment, counting two segments
/// as adjacent when they share a junction.
pub fn cloud_aea(incident: SegmentId, network: &RoadNetwork, hops: u32) -> BTreeSet<SegmentId> {
    let mut seen = BTreeSet::from([incident]);
    let mut frontier = vec![incident];
    for _ in 0..hops {
        let mut next = vec![];
        for seg in frontier {
            for n in network.neighbors(seg) {
                if seen.insert(n) {
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Heading, Position, PsmPayload, Segment};
    use proptest::prelude::*;

    fn seg(id: u32, from: u32, to: u32, length: f64) -> Segment {
        Segment {
            id: SegmentId(id),
            from: JunctionId(from),
            to: JunctionId(to),
            length,
            lane_count: 1,
            speed_limit: 20.0,
        }
    }

    fn psm(id: u32, seq: u64, segment: u32, s: f64, speed: f64, malfunction: bool) -> Message {
        Message::new(
            NodeId::Vehicle(VehicleId(id)),
            0.0,
            seq,
            Payload::Psm(PsmPayload {
                position: Position {
                    segment: SegmentId(segment),
                    lane: 1,
                    s,
                },
                direction: Heading::LaneAligned,
                speed,
                malfunction,
            }),
        )
    }

    #[test]
    fn ten_vehicles_on_one_km_is_ten_per_km() {
        let net = RoadNetwork::new(vec![seg(0, 0, 1, 1000.0)], vec![]).unwrap();
        let mut st = CloudState::new(&net, 5);
        let msgs: Vec<_> = (0..10).map(|i| (0.0, psm(i, 0, 0, 50.0 * i as f64, 10.0 + i as f64, false))).collect();
        cloud_ingest(&mut st, &net, &msgs, 0.0, 0.3);
        let s = st.stats(SegmentId(0)).unwrap();
        assert_eq!(s.count, 10);
        assert!((s.density - 10.0).abs() < 1e-12);
        assert!((s.mean_speed.unwrap() - 14.5).abs() < 1e-12);
    }

    #[test]
    fn empty_window_flags_undefined_speed() {
        let net = RoadNetwork::new(vec![seg(0, 0, 1, 1000.0)], vec![]).unwrap();
        let mut st = CloudState::new(&net, 5);
        cloud_ingest(&mut st, &net, &[], 0.0, 0.3);
        let s = st.stats(SegmentId(0)).unwrap();
        assert_eq!(s.density, 0.0);
        assert_eq!(s.mean_speed, None);
    }

    #[test]
    fn malformed_positions_are_dropped_and_incidents_deduplicated() {
        let net = RoadNetwork::new(vec![seg(0, 0, 1, 1000.0)], vec![]).unwrap();
        let mut st = CloudState::new(&net, 5);
        let msgs = vec![
            (0.0, psm(1, 0, 7, 10.0, 10.0, false)),
            (0.0, psm(2, 0, 0, 2000.0, 10.0, false)),
            (0.0, psm(3, 0, 0, 10.0, 0.0, true)),
        ];
        let new = cloud_ingest(&mut st, &net, &msgs, 0.0, 0.3);
        assert_eq!(st.dropped, 2);
        assert_eq!(new.len(), 1);
        assert_eq!(new[0].kind, IncidentKind::Malfunction);
        let again = cloud_ingest(&mut st, &net, &[(0.1, psm(3, 1, 0, 10.0, 0.0, true))], 0.1, 0.3);
        assert!(again.is_empty());
        assert_eq!(st.incidents().len(), 1);
    }

    #[test]
    fn stale_reports_expire() {
        let net = RoadNetwork::new(vec![seg(0, 0, 1, 1000.0)], vec![]).unwrap();
        let mut st = CloudState::new(&net, 5);
        cloud_ingest(&mut st, &net, &[(0.0, psm(1, 0, 0, 10.0, 10.0, false))], 0.0, 0.3);
        cloud_ingest(&mut st, &net, &[], 0.2, 0.3);
        assert_eq!(st.stats(SegmentId(0)).unwrap().count, 1);
        cloud_ingest(&mut st, &net, &[], 0.5, 0.3);
        assert_eq!(st.stats(SegmentId(0)).unwrap().count, 0);
    }

    #[test]
    fn forecast_of_constant_and_linear_history() {
        let constant: Vec<_> = (0..8).map(|i| (i as f64, 12.0)).collect();
        assert_eq!(trend_forecast(&constant, 5.0), Some(12.0));

        let linear: Vec<_> = (0..8).map(|i| (i as f64 * 0.5, 3.0 + 2.0 * i as f64 * 0.5)).collect();
        let last = linear.last().unwrap().1;
        let d = trend_forecast(&linear, 4.0).unwrap();
        assert!((d - (last + 2.0 * 4.0)).abs() < 1e-9, "{d}");

        let falling: Vec<_> = (0..4).map(|i| (i as f64, 3.0 - i as f64)).collect();
        assert_eq!(trend_forecast(&falling, 10.0), Some(0.0));
        assert_eq!(trend_forecast(&[], 1.0), None);
    }

    proptest! {
        #[test]
        fn forecast_matches_normal_equations(
            values in prop::collection::vec(0.0f64..100.0, 2..12),
            h in 0.0f64..30.0,
        ) {
            // Fit d = a + b t by solving the 2x2 normal equations directly.
            let pts: Vec<(f64, f64)> = values.iter().enumerate().map(|(i, v)| (i as f64 * 0.1, *v)).collect();
            let n = pts.len() as f64;
            let st: f64 = pts.iter().map(|p| p.0).sum();
            let stt: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sv: f64 = pts.iter().map(|p| p.1).sum();
            let stv: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let det = n * stt - st * st;
            let b = (n * stv - st * sv) / det;
            let a = (sv - b * st) / n;
            let at = pts.last().unwrap().0 + h;
            let expected = (a + b * at).max(0.0);
            let got = trend_forecast(&pts, h).unwrap();
            prop_assert!((got - expected).abs() < 1e-6 * (1.0 + expected.abs()), "{} vs {}", got, expected);
        }
    }

    fn two_routes() -> RoadNetwork {
        RoadNetwork::new(
            vec![
                seg(1, 0, 1, 1000.0),
                seg(2, 1, 2, 1000.0),
                seg(3, 0, 3, 1500.0),
                seg(4, 3, 2, 1500.0),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn opp_trivial_cases() {
        let net = two_routes();
        let st = CloudState::new(&net, 1);
        assert_eq!(cloud_opp(&st, &net, JunctionId(0), JunctionId(0), 1.0), Ok(vec![]));
        assert_eq!(
            cloud_opp(&st, &net, JunctionId(2), JunctionId(0), 1.0),
            Err(NoPath {
                from: JunctionId(2),
                to: JunctionId(0)
            })
        );
        assert_eq!(
            cloud_opp(&st, &net, JunctionId(0), JunctionId(2), 1.0).unwrap(),
            vec![SegmentId(1), SegmentId(2)]
        );
    }

    #[test]
    fn congestion_flips_route_at_hand_computed_speed() {
        // Short route: 1000/v1 + 1000/20; detour: 1500/20 + 1500/20 = 150 s.
        // Equal at v1 = 10 m/s, where the lexicographic tie-break keeps [1, 2].
        let net = two_routes();
        let mut st = CloudState::new(&net, 1);
        for s in [2, 3, 4] {
            st.set_mean_speed(SegmentId(s), Some(20.0));
        }
        let route = |st: &CloudState| cloud_opp(st, &net, JunctionId(0), JunctionId(2), 1.0).unwrap();
        st.set_mean_speed(SegmentId(1), Some(20.0));
        assert_eq!(route(&st), vec![SegmentId(1), SegmentId(2)]);
        st.set_mean_speed(SegmentId(1), Some(10.0));
        assert_eq!(route(&st), vec![SegmentId(1), SegmentId(2)]);
        st.set_mean_speed(SegmentId(1), Some(9.99));
        assert_eq!(route(&st), vec![SegmentId(3), SegmentId(4)]);
        st.set_mean_speed(SegmentId(1), Some(2.0));
        assert_eq!(route(&st), vec![SegmentId(3), SegmentId(4)]);
    }

    #[test]
    fn aea_neighborhoods() {
        let isolated = RoadNetwork::new(vec![seg(0, 0, 1, 100.0), seg(1, 2, 3, 100.0)], vec![]).unwrap();
        assert_eq!(cloud_aea(SegmentId(0), &isolated, 0), BTreeSet::from([SegmentId(0)]));
        assert_eq!(cloud_aea(SegmentId(0), &isolated, 3), BTreeSet::from([SegmentId(0)]));

        let line = RoadNetwork::new((1..=5).map(|i| seg(i, i, i + 1, 100.0)).collect(), vec![]).unwrap();
        assert_eq!(
            cloud_aea(SegmentId(3), &line, 1),
            BTreeSet::from([SegmentId(2), SegmentId(3), SegmentId(4)])
        );
        assert_eq!(cloud_aea(SegmentId(1), &line, 2).len(), 3);
    }
}
