//! Trace records and sinks. A trace is a header line followed by one JSON
//! object per record, ordered by time, then vehicle id (records without a
//! vehicle last), then record kind.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::UplinkStep;
use crate::config::ScenarioConfig;
use crate::cooperation::{ActionKind, IncidentKind, ResolutionBasis};
use crate::model::{
    ActionFootprint, AtmAction, BehaviorMode, Heading, MessageClass, NodeId, PsmPayload, SegmentId,
    TurnDirection, VehicleId, VehicleKind,
};
use crate::radio::LinkKind;

pub const TRACE_SCHEMA: &str = "hetvnet-trace";
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// First line of every trace: what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub schema_version: u32,
    pub config: ScenarioConfig,
    /// Summed segment length, m.
    pub road_length: f64,
    pub subband_capacity_bps: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleId>,
    #[serde(flatten)]
    pub body: RecordBody,
}

impl Record {
    pub fn new(t: f64, vehicle: Option<VehicleId>, body: RecordBody) -> Self {
        Self { t, vehicle, body }
    }

    /// Total order of the trace, without the insertion tie-break.
    pub fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        let vk = |r: &Record| r.vehicle.map_or(u64::MAX, |v| u64::from(v.0));
        self.t
            .total_cmp(&other.t)
            .then(vk(self).cmp(&vk(other)))
            .then(self.body.ordinal().cmp(&other.body.ordinal()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum RecordBody {
    StateUpdate(StateUpdate),
    MsgSent(MsgSent),
    MsgDelivered(Delivery),
    MsgLost(Delivery),
    ConflictDetected(ConflictDetected),
    ActionResolved(ActionResolved),
    NearMiss(NearMiss),
    Collision(Collision),
    Spawn(Spawn),
    Despawn(Despawn),
    Uplink(UplinkRecord),
    Incident(IncidentRecord),
}

impl RecordBody {
    pub const KINDS: [&'static str; 12] = [
        "state_update",
        "msg_sent",
        "msg_delivered",
        "msg_lost",
        "conflict_detected",
        "action_resolved",
        "near_miss",
        "collision",
        "spawn",
        "despawn",
        "uplink",
        "incident",
    ];

    pub fn ordinal(&self) -> u8 {
        match self {
            RecordBody::StateUpdate(_) => 0,
            RecordBody::MsgSent(_) => 1,
            RecordBody::MsgDelivered(_) => 2,
            RecordBody::MsgLost(_) => 3,
            RecordBody::ConflictDetected(_) => 4,
            RecordBody::ActionResolved(_) => 5,
            RecordBody::NearMiss(_) => 6,
            RecordBody::Collision(_) => 7,
            RecordBody::Spawn(_) => 8,
            RecordBody::Despawn(_) => 9,
            RecordBody::Uplink(_) => 10,
            RecordBody::Incident(_) => 11,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        Self::KINDS[self.ordinal() as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub segment: SegmentId,
    pub lane: u8,
    pub s: f64,
    pub speed: f64,
    pub accel: f64,
    pub behavior: BehaviorMode,
    pub heading: Heading,
    pub malfunction: bool,
    pub in_zone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsgSent {
    pub sender: NodeId,
    pub class: MessageClass,
    pub seq: u64,
    pub subband: u8,
    pub size_bytes: u32,
    /// Receivers within range on any link.
    pub recipients: u32,
    pub attempts: u32,
    pub access_latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atm: Option<AtmAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<ActionFootprint>,
    /// Beacon contents, for PSMs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psm: Option<PsmPayload>,
}

/// Outcome of one message on one link, batched over its receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub sender: NodeId,
    pub class: MessageClass,
    pub seq: u64,
    pub link: LinkKind,
    /// Generation time of the message.
    pub sent_at: f64,
    pub receivers: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictDetected {
    pub other: VehicleId,
    pub mine: ActionKind,
    pub theirs: ActionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Executed,
    FellBack,
    Deferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionResolved {
    pub action: ActionKind,
    pub outcome: Outcome,
    pub basis: ResolutionBasis,
    pub winner: VehicleId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearMiss {
    pub other: VehicleId,
    pub ttc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub other: VehicleId,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub kind: VehicleKind,
    pub segment: SegmentId,
    pub lane: u8,
    pub s: f64,
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<TurnDirection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Despawn {
    pub segment: SegmentId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UplinkRecord {
    pub offered: f64,
    pub admitted: f64,
    pub deferred: f64,
    pub dropped: f64,
}

impl From<&UplinkStep> for UplinkRecord {
    fn from(s: &UplinkStep) -> Self {
        Self {
            offered: s.offered,
            admitted: s.admitted,
            deferred: s.deferred,
            dropped: s.dropped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub kind: IncidentKind,
    pub segment: SegmentId,
    /// Segments whose vehicles were warned.
    pub warned: Vec<SegmentId>,
}

/// Consumer of a trace as it is produced.
pub trait TraceSink {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()>;
    fn record(&mut self, record: &Record) -> io::Result<()>;
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl<T: TraceSink + ?Sized> TraceSink for &mut T {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        (**self).header(header)
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        (**self).record(record)
    }
    fn finish(&mut self) -> io::Result<()> {
        (**self).finish()
    }
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        self.0.header(header)?;
        self.1.header(header)
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        self.0.record(record)?;
        self.1.record(record)
    }
    fn finish(&mut self) -> io::Result<()> {
        self.0.finish()?;
        self.1.finish()
    }
}

fn json_line<T: Serialize>(value: &T, buf: &mut Vec<u8>) {
    buf.clear();
    serde_json::to_writer(&mut *buf, value).expect("trace values serialize");
    buf.push(b'\n');
}

/// Keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct VecSink {
    pub header: Option<TraceHeader>,
    pub records: Vec<Record>,
}

impl TraceSink for VecSink {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        self.header = Some(header.clone());
        Ok(())
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Line-delimited JSON writer.
pub struct JsonlSink<W: Write> {
    out: W,
    buf: Vec<u8>,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out, buf: vec![] }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        json_line(header, &mut self.buf);
        self.out.write_all(&self.buf)
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        json_line(record, &mut self.buf);
        self.out.write_all(&self.buf)
    }
    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// SHA-256 of the exact bytes a [`JsonlSink`] would write.
#[derive(Default)]
pub struct DigestSink {
    hasher: Sha256,
    buf: Vec<u8>,
}

impl DigestSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hex_digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

impl TraceSink for DigestSink {
    fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        json_line(header, &mut self.buf);
        self.hasher.update(&self.buf);
        Ok(())
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        json_line(record, &mut self.buf);
        self.hasher.update(&self.buf);
        Ok(())
    }
}

/// Record counts per kind.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct CountingSink {
    pub counts: BTreeMap<&'static str, u64>,
}

impl CountingSink {
    pub fn count(&self, kind: &str) -> u64 {
        self.counts.get(kind).copied().unwrap_or(0)
    }
}

impl TraceSink for CountingSink {
    fn header(&mut self, _: &TraceHeader) -> io::Result<()> {
        Ok(())
    }
    fn record(&mut self, record: &Record) -> io::Result<()> {
        *self.counts.entry(record.body.kind_name()).or_default() += 1;
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn header(&mut self, _: &TraceHeader) -> io::Result<()> {
        Ok(())
    }
    fn record(&mut self, _: &Record) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unsupported trace schema {0} v{1}")]
    Schema(String, u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Streams a JSONL trace back: the header, then each record in file order.
pub fn read_trace<R: BufRead>(
    input: R,
    mut on_record: impl FnMut(&TraceHeader, Record),
) -> Result<TraceHeader, TraceReadError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(TraceReadError::Empty)??;
    let header: TraceHeader =
        serde_json::from_str(&first).map_err(|source| TraceReadError::Json { line: 1, source })?;
    if header.schema != TRACE_SCHEMA || header.schema_version != TRACE_SCHEMA_VERSION {
        return Err(TraceReadError::Schema(header.schema, header.schema_version));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|source| TraceReadError::Json {
            line: i + 2,
            source,
        })?;
        on_record(&header, rec);
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OvertakePhase;

    fn sample() -> Vec<Record> {
        vec![
            Record::new(
                0.1,
                Some(VehicleId(2)),
                RecordBody::StateUpdate(StateUpdate {
                    segment: SegmentId(0),
                    lane: 1,
                    s: 12.5,
                    speed: 20.000000000000004,
                    accel: -0.1,
                    behavior: BehaviorMode::Overtaking(OvertakePhase::Two),
                    heading: Heading::Turning(TurnDirection::Left),
                    malfunction: false,
                    in_zone: false,
                }),
            ),
            Record::new(
                0.101,
                None,
                RecordBody::MsgDelivered(Delivery {
                    sender: NodeId::Cloud,
                    class: MessageClass::Atm,
                    seq: 3,
                    link: LinkKind::V2b,
                    sent_at: 0.1,
                    receivers: vec![NodeId::Vehicle(VehicleId(1))],
                }),
            ),
            Record::new(
                0.1,
                Some(VehicleId(2)),
                RecordBody::ActionResolved(ActionResolved {
                    action: ActionKind::LaneChanging { target_lane: 2 },
                    outcome: Outcome::FellBack,
                    basis: ResolutionBasis::IdTieBreak,
                    winner: VehicleId(1),
                }),
            ),
        ]
    }

    #[test]
    fn records_round_trip_through_json() {
        for r in sample() {
            let line = serde_json::to_string(&r).unwrap();
            let back: Record = serde_json::from_str(&line).unwrap();
            assert_eq!(back, r, "{line}");
        }
    }

    #[test]
    fn json_shape_is_flat() {
        let line = serde_json::to_string(&sample()[1]).unwrap();
        assert!(line.starts_with(r#"{"t":0.101,"kind":"msg_delivered","data":{"#), "{line}");
    }

    #[test]
    fn ordering_puts_vehicles_before_unattributed_and_kinds_in_order() {
        let mut recs = sample();
        recs.sort_by(|a, b| a.cmp_key(b));
        assert_eq!(recs[0].body.kind_name(), "state_update");
        assert_eq!(recs[1].body.kind_name(), "action_resolved");
        assert_eq!(recs[2].vehicle, None);
    }

    #[test]
    fn digest_matches_hash_of_written_bytes() {
        let cfg = ScenarioConfig::from_toml_str(
            "schema_version = 1\nname = \"d\"\nkind = \"freeflow\"\nduration = 0.0\n\
             [road]\nlayout = \"ring\"\nlength = 500.0\nlanes = 1\nspeed_limit = 20.0\n\
             [traffic]\nvehicles = 1\ndesired_speed = [10.0, 10.0]\n",
        )
        .unwrap();
        let header = TraceHeader {
            schema: TRACE_SCHEMA.into(),
            schema_version: TRACE_SCHEMA_VERSION,
            config: cfg,
            road_length: 500.0,
            subband_capacity_bps: [1.0, 2.0, 3.0],
        };
        let mut sinks = (JsonlSink::new(Vec::new()), DigestSink::new());
        sinks.header(&header).unwrap();
        for r in sample() {
            sinks.record(&r).unwrap();
        }
        let (jsonl, digest) = sinks;
        let bytes = jsonl.into_inner();
        assert_eq!(digest.hex_digest(), hex::encode(Sha256::digest(&bytes)));

        let mut back = vec![];
        let h = read_trace(&bytes[..], |_, r| back.push(r)).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, sample());
    }
}
