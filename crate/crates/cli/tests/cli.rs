use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hetvnet_core::scenario::{bundled, BUNDLED};

fn hetvnet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetvnet"))
        .args(args)
        .env("HETVNET_OUT", out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_with(edit: impl Fn(&str) -> String, dir: &Path) -> String {
    let text = edit(bundled("freeflow-small").unwrap());
    let path = dir.join("edited.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn bundled_configs_validate() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, _) in BUNDLED {
        let o = hetvnet(&["validate", &format!("bundled:{name}")], tmp.path());
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
    let file = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/freeflow-small.toml");
    assert!(hetvnet(&["validate", file], tmp.path()).status.success());
}

#[test]
fn subband_ordering_violation_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_with(|t| format!("{t}\n[radio.subbands]\nwidths = [200, 144, 600]\n"), tmp.path());
    let o = hetvnet(&["validate", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("M1 <= M2 <= M3"), "{}", stderr(&o));
}

#[test]
fn psm_period_must_be_a_multiple_of_dt() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_with(|t| t.replace("duration = 60.0", "duration = 60.0\npsm_period = 0.15"), tmp.path());
    let o = hetvnet(&["validate", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("psm_period"), "{}", stderr(&o));
}

#[test]
fn parse_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_with(|t| t.replace("duration = 60.0", "duration = sixty"), tmp.path());
    let o = hetvnet(&["validate", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hetvnet(&["validate", "/nonexistent/scenario.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn run_is_deterministic_and_report_is_recomputable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = hetvnet(&["run", "bundled:freeflow-small", "--seed", "11"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let trace = "freeflow-small-seed11.trace.jsonl";
    let ta = fs::read(a.path().join(trace)).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, fs::read(b.path().join(trace)).unwrap());

    let o = hetvnet(&["report", a.path().join(trace).to_str().unwrap()], a.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let recomputed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let written: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("freeflow-small-seed11.report.json")).unwrap()).unwrap();
    assert_eq!(recomputed, written);
    assert_eq!(written["seed"], 11);
}

#[test]
fn zero_duration_gives_header_only_trace_and_zero_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_with(|t| t.replace("duration = 60.0", "duration = 0.0"), tmp.path());
    let o = hetvnet(&["run", &cfg], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(tmp.path().join("freeflow-small-seed7.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1, "only the header line");
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("freeflow-small-seed7.report.json")).unwrap()).unwrap();
    assert_eq!(report["records"], 0);
    assert_eq!(report["collisions"], 0);
    assert_eq!(report["mean_speed"], 0.0);
}

#[test]
fn intersection_run_reports_meeting_priority() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hetvnet(&["run", "bundled:intersection-meeting"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let path = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".report.json"))
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    assert!(report["resolutions"]["meeting_priority"].as_u64().unwrap() > 0);
}

#[test]
fn sweep_rejects_bad_axes_and_empty_values() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hetvnet(&["sweep", "bundled:freeflow-small", "--axis", "radio.colour", "--values", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("sweepable fields") && err.contains("radio.v2v.per"), "{err}");

    let o = hetvnet(&["sweep", "bundled:freeflow-small", "--axis", "radio.v2v.per", "--values", ""], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no values"), "{}", stderr(&o));
}

#[test]
fn single_cell_sweep_equals_run_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hetvnet(
        &["sweep", "bundled:freeflow-small", "--axis", "radio.v2v.per", "--values", "0.1", "--seeds", "7"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table: serde_json::Value = serde_json::from_slice(
        &fs::read(tmp.path().join("freeflow-small-sweep-radio.v2v.per.json")).unwrap(),
    )
    .unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    let metrics: Vec<&str> = table["metrics"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
    let cell = |name: &str| rows[0]["cells"][metrics.iter().position(|m| *m == name).unwrap()]["mean"].as_f64().unwrap();

    assert!(hetvnet(&["run", "bundled:freeflow-small"], tmp.path()).status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("freeflow-small-seed7.report.json")).unwrap()).unwrap();
    assert_eq!(cell("mean_speed"), report["mean_speed"].as_f64().unwrap());
    assert_eq!(cell("conflicts"), report["conflicts"].as_f64().unwrap());
    assert_eq!(cell("v2v_pdr"), report["links"]["v2v"]["pdr"].as_f64().unwrap());
    assert_eq!(cell("atm_latency_ms"), report["latency"]["atm"]["mean"].as_f64().unwrap() * 1000.0);
}

#[test]
fn contention_sweep_tracks_the_collision_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hetvnet(
        &["sweep", "bundled:freeflow-small", "--axis", "radio.subbands.loads.1", "--values", "1..8"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table: serde_json::Value = serde_json::from_slice(
        &fs::read(tmp.path().join("freeflow-small-sweep-radio.subbands.loads.1.json")).unwrap(),
    )
    .unwrap();
    let i = table["metrics"].as_array().unwrap().iter().position(|m| m == "sb2_collision_ratio").unwrap();
    let col: Vec<f64> = table["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["cells"][i]["mean"].as_f64().unwrap())
        .collect();
    assert_eq!(col.len(), 8);
    assert_eq!(col[0], 0.0);
    for w in col.windows(2) {
        assert!(w[1] >= w[0], "{col:?}");
    }
    // Batches rarely fill their last slot, so the empirical ratio sits a
    // little under 1 - (1 - 1/C)^(K-1).
    for (k, got) in (1..=8).zip(&col) {
        let analytic = 1.0 - (1.0 - 1.0 / 8.0f64).powi(k - 1);
        assert!(*got <= analytic + 0.01 && *got >= analytic - 0.08, "K={k}: {got} vs {analytic}");
    }
}
