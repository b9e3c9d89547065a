use std::collections::BTreeMap;

use hetvnet_core::config::ScenarioConfig;
use hetvnet_core::engine::{run, Simulation};
use hetvnet_core::metrics::report_from_trace;
use hetvnet_core::model::{AtmAction, MessageClass, NodeId, SegmentId};
use hetvnet_core::scenario::bundled;
use hetvnet_core::trace::{DigestSink, JsonlSink, NullSink, Record, RecordBody, VecSink};

fn cfg(name: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml_str(bundled(name).unwrap()).unwrap()
}

fn trace(c: &ScenarioConfig) -> Vec<Record> {
    let mut sink = VecSink::default();
    run(c, &mut sink).unwrap();
    sink.records
}

fn digest(c: &ScenarioConfig) -> String {
    let mut d = DigestSink::new();
    run(c, &mut d).unwrap();
    d.hex_digest()
}

fn on_grid(t: f64, dt: f64) -> bool {
    ((t / dt).round() * dt - t).abs() < 1e-9
}

#[test]
fn same_seed_same_digest_other_seed_differs() {
    let mut c = cfg("freeflow-small");
    c.duration = 20.0;
    let a = digest(&c);
    assert_eq!(a, digest(&c));
    c.seed += 1;
    assert_ne!(a, digest(&c));
}

#[test]
fn records_are_time_ordered_and_stamped_on_the_grid() {
    let c = cfg("freeflow-small");
    let recs = trace(&c);
    for w in recs.windows(2) {
        assert!(w[0].t <= w[1].t, "{:?} before {:?}", w[0], w[1]);
    }
    for r in &recs {
        if !matches!(r.body, RecordBody::MsgDelivered(_)) {
            assert!(on_grid(r.t, c.dt), "{r:?}");
        }
    }
}

#[test]
fn every_outcome_follows_its_send_and_receivers_are_conserved() {
    let c = cfg("freeflow-small");
    let recs = trace(&c);
    let end = c.duration;
    // (sender, class, seq) -> (send time, recipients, accounted receivers)
    let mut sent: BTreeMap<(NodeId, MessageClass, u64), (f64, u32, u32)> = BTreeMap::new();
    for r in &recs {
        match &r.body {
            RecordBody::MsgSent(m) => {
                assert!(sent.insert((m.sender, m.class, m.seq), (r.t, m.recipients, 0)).is_none());
            }
            RecordBody::MsgDelivered(d) | RecordBody::MsgLost(d) => {
                let e = sent
                    .get_mut(&(d.sender, d.class, d.seq))
                    .unwrap_or_else(|| panic!("outcome without send: {r:?}"));
                assert!((d.sent_at - e.0).abs() < 1e-9);
                assert!(r.t >= e.0 - 1e-9, "delivered before sent: {r:?}");
                e.2 += d.receivers.len() as u32;
            }
            _ => {}
        }
    }
    assert!(!sent.is_empty());
    for (key, (t, recipients, accounted)) in &sent {
        assert!(accounted <= recipients, "{key:?}");
        // anything sent a second before the end has landed by then
        if *t < end - 1.0 {
            assert_eq!(accounted, recipients, "{key:?} at {t}");
        }
    }
}

#[test]
fn messages_ride_their_fixed_subband() {
    for name in ["freeflow-small", "intersection-reference"] {
        for r in trace(&cfg(name)) {
            if let RecordBody::MsgSent(m) = r.body {
                let want = match m.class {
                    MessageClass::Atm => 1,
                    MessageClass::Psm => 2,
                    MessageClass::Infotainment => 3,
                };
                assert_eq!(m.subband, want, "{name}: {m:?}");
            }
        }
    }
}

#[test]
fn beacons_carry_the_state_of_their_step() {
    let recs = trace(&cfg("freeflow-small"));
    let mut states = BTreeMap::new();
    for r in &recs {
        if let (RecordBody::StateUpdate(u), Some(v)) = (&r.body, r.vehicle) {
            states.insert((v, (r.t * 1e6).round() as i64), *u);
        }
    }
    let mut checked = 0;
    for r in &recs {
        let RecordBody::MsgSent(m) = &r.body else { continue };
        let (Some(p), NodeId::Vehicle(v)) = (m.psm, m.sender) else { continue };
        let u = states[&(v, (r.t * 1e6).round() as i64)];
        assert_eq!(p.position.segment, u.segment);
        assert_eq!(p.position.lane, u.lane);
        assert_eq!(p.position.s, u.s);
        assert_eq!(p.speed, u.speed);
        assert_eq!(p.malfunction, u.malfunction);
        checked += 1;
    }
    assert!(checked > 1000);
}

#[test]
fn decisions_precede_the_motion_they_cause() {
    // Resolutions are stamped at the start of their step, the resulting
    // states at its end.
    let c = cfg("intersection-meeting");
    let recs = trace(&c);
    let first_resolution = recs
        .iter()
        .find(|r| matches!(r.body, RecordBody::ActionResolved(_)))
        .unwrap();
    let v = first_resolution.vehicle.unwrap();
    let first_turning_state = recs
        .iter()
        .find(|r| {
            r.vehicle == Some(v)
                && matches!(&r.body, RecordBody::StateUpdate(u) if u.behavior != hetvnet_core::model::BehaviorMode::FreeDriving)
        })
        .unwrap();
    assert!(first_turning_state.t > first_resolution.t);
}

#[test]
fn emergency_vehicle_announces_its_corridor_every_beacon_slot() {
    let mut c = cfg("freeflow-small");
    c.duration = 5.0;
    let n = trace(&c)
        .iter()
        .filter(|r| {
            matches!(&r.body, RecordBody::MsgSent(m) if m.atm == Some(AtmAction::EmergencyVehicleAvoidance))
        })
        .count();
    // one per 0.1 s beacon slot over 5 s
    assert_eq!(n, 50);
}

#[test]
fn intersection_zone_speed_is_capped() {
    let recs = trace(&cfg("intersection-reference"));
    let cap = 40.0 / 3.6;
    let mut in_zone = 0;
    for r in &recs {
        if let RecordBody::StateUpdate(u) = r.body {
            if u.in_zone {
                in_zone += 1;
                assert!(u.speed <= cap + 1e-9, "{r:?}");
            }
        }
    }
    assert!(in_zone > 100);
    assert!(recs.iter().any(|r| matches!(r.body, RecordBody::Spawn(_))));
    assert!(recs.iter().any(|r| matches!(r.body, RecordBody::Despawn(_))));
}

#[test]
fn cloud_counts_every_reporting_vehicle() {
    let c = cfg("freeflow-small");
    let mut sim = Simulation::new(c).unwrap();
    let mut sink = NullSink;
    for _ in 0..20 {
        sim.step(&mut sink).unwrap();
    }
    let n = sim.vehicles().count();
    let stats = sim.cloud_state().stats(SegmentId(0)).unwrap();
    assert_eq!(stats.count, n);
    assert!((stats.density - n as f64 / 3.0).abs() < 1e-9);
    assert!(stats.mean_speed.unwrap() > 0.0);
}

#[test]
fn zero_duration_has_header_and_no_records() {
    let mut c = cfg("syncflow-reference");
    c.duration = 0.0;
    let mut sink = VecSink::default();
    let report = run(&c, &mut sink).unwrap();
    assert!(sink.header.is_some());
    assert!(sink.records.is_empty());
    assert_eq!(report.records, 0);
    assert_eq!(report.mean_speed, 0.0);
}

#[test]
fn report_is_recomputable_from_the_written_trace() {
    let mut c = cfg("freeflow-small");
    c.duration = 15.0;
    let mut out = JsonlSink::new(Vec::new());
    let report = run(&c, &mut out).unwrap();
    let bytes = out.into_inner();
    let again = report_from_trace(bytes.as_slice()).unwrap();
    assert_eq!(report, again);
}

#[test]
fn overtaking_scenario_is_collision_free() {
    for name in ["overtake", "freeflow-small", "intersection-reference"] {
        let report = run(&cfg(name), NullSink).unwrap();
        assert_eq!(report.collisions, 0, "{name}");
    }
}
