//! Parameter sweeps: one config field varied over a list of values, each
//! value run on a set of seeds, results reduced to mean and standard error.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::config::ScenarioConfig;
use crate::engine::{run, EngineError};
use crate::metrics::MetricsReport;
use crate::model::MessageClass;
use crate::radio::LinkKind;
use crate::trace::NullSink;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Int,
    Float,
    Bool,
}

/// Config fields a sweep may vary, as dotted paths into the config file.
/// Numeric path segments index arrays.
const AXES: &[(&str, ValueKind)] = &[
    ("radio.subbands.loads.0", ValueKind::Int),
    ("radio.subbands.loads.1", ValueKind::Int),
    ("radio.subbands.codebook_size", ValueKind::Int),
    ("radio.subbands.slot", ValueKind::Float),
    ("radio.subbands.grant_rtt", ValueKind::Float),
    ("radio.v2v.per", ValueKind::Float),
    ("radio.v2v.range", ValueKind::Float),
    ("traffic.density", ValueKind::Float),
    ("traffic.vehicles", ValueKind::Int),
    ("traffic.mdv_fraction", ValueKind::Float),
    ("events.disturbance_rate", ValueKind::Float),
    ("psm_period", ValueKind::Float),
    ("cooperation", ValueKind::Bool),
    ("duration", ValueKind::Float),
];

/// Names accepted by [`apply_axis`].
pub fn sweepable_axes() -> Vec<&'static str> {
    AXES.iter().map(|(n, _)| *n).collect()
}

/// Columns of a sweep table, in order.
pub const METRICS: &[&str] = &[
    "atm_latency_ms",
    "psm_latency_ms",
    "sb1_collision_ratio",
    "sb2_collision_ratio",
    "v2v_pdr",
    "conflicts",
    "near_misses",
    "collisions",
    "mean_speed",
    "flow",
    "uplink_dropped",
];

/// Scalar metrics of one run, aligned with [`METRICS`].
pub fn metric_values(r: &MetricsReport) -> Vec<f64> {
    let lat = |c: MessageClass| r.latency.get(&c).map_or(0.0, |s| s.mean * 1000.0);
    let coll = |i: usize| r.subbands.get(i).map_or(0.0, |s| s.collision_ratio);
    vec![
        lat(MessageClass::Atm),
        lat(MessageClass::Psm),
        coll(0),
        coll(1),
        r.links.get(&LinkKind::V2v).map_or(0.0, |l| l.pdr),
        r.conflicts as f64,
        r.near_misses as f64,
        r.collisions as f64,
        r.mean_speed,
        r.flow,
        r.uplink.dropped,
    ]
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown sweep axis `{axis}`; sweepable fields: {}", .available.join(", "))]
    UnknownAxis {
        axis: String,
        available: Vec<&'static str>,
    },
    #[error("no values given for axis `{0}`")]
    NoValues(String),
    #[error("no seeds given")]
    NoSeeds,
    #[error("value `{value}` for `{axis}`: {reason}")]
    BadValue {
        axis: String,
        value: String,
        reason: String,
    },
    #[error("invalid config for {axis} = {value}: {}", .issues.join("; "))]
    Config {
        axis: String,
        value: String,
        issues: Vec<String>,
    },
    #[error("run {axis} = {value}, seed {seed}: {source}")]
    Run {
        axis: String,
        value: String,
        seed: u64,
        source: EngineError,
    },
}

fn parse_value(kind: ValueKind, raw: &str) -> Result<Value, String> {
    let raw = raw.trim();
    match kind {
        ValueKind::Int => raw
            .parse::<u32>()
            .map(|v| Value::Integer(i64::from(v)))
            .map_err(|e| format!("expected a non-negative integer ({e})")),
        ValueKind::Float => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Float)
            .ok_or_else(|| "expected a finite number".to_string()),
        ValueKind::Bool => raw
            .parse::<bool>()
            .map(Value::Boolean)
            .map_err(|_| "expected true or false".to_string()),
    }
}

fn slot<'a>(root: &'a mut Value, path: &[&str]) -> Option<&'a mut Value> {
    let (last, parents) = path.split_last()?;
    let mut cur = root;
    for seg in parents {
        cur = match cur {
            Value::Table(t) => t
                .entry(seg.to_string())
                .or_insert_with(|| Value::Table(Default::default())),
            Value::Array(a) => a.get_mut(seg.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    match cur {
        Value::Table(t) => Some(t.entry(last.to_string()).or_insert(Value::Boolean(false))),
        Value::Array(a) => a.get_mut(last.parse::<usize>().ok()?),
        _ => None,
    }
}

/// Returns `cfg` with `axis` set to `raw`. The result is validated.
pub fn apply_axis(cfg: &ScenarioConfig, axis: &str, raw: &str) -> Result<ScenarioConfig, SweepError> {
    let kind = AXES
        .iter()
        .find(|(n, _)| *n == axis)
        .map(|(_, k)| *k)
        .ok_or_else(|| SweepError::UnknownAxis {
            axis: axis.to_string(),
            available: sweepable_axes(),
        })?;
    let bad = |reason: String| SweepError::BadValue {
        axis: axis.to_string(),
        value: raw.to_string(),
        reason,
    };
    let value = parse_value(kind, raw).map_err(bad)?;
    let mut tree = Value::try_from(cfg).map_err(|e| bad(e.to_string()))?;
    let path: Vec<&str> = axis.split('.').collect();
    // vehicle count and density are alternatives
    let other = match axis {
        "traffic.density" => Some("vehicles"),
        "traffic.vehicles" => Some("density"),
        _ => None,
    };
    if let (Some(other), Some(Value::Table(traffic))) = (other, tree.get_mut("traffic")) {
        traffic.remove(other);
    }
    *slot(&mut tree, &path).ok_or_else(|| bad("field not present in config".into()))? = value;
    let out: ScenarioConfig = tree.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
    let issues = out.validate();
    if !issues.is_empty() {
        return Err(SweepError::Config {
            axis: axis.to_string(),
            value: raw.to_string(),
            issues,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub stderr: f64,
}

impl Cell {
    /// Mean and standard error of the mean (sample standard deviation over
    /// `sqrt(n)`; zero for a single sample).
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self { mean: 0.0, stderr: 0.0 };
        }
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() < 2 {
            0.0
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub seeds: Vec<u64>,
    pub metrics: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Column of means for `metric`.
    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let i = self.metrics.iter().position(|m| m == metric)?;
        Some(self.rows.iter().map(|r| r.cells[i].mean).collect())
    }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.value.len()).chain([self.axis.len()]).max().unwrap_or(0);
        write!(f, "{:<width$}", self.axis)?;
        for m in &self.metrics {
            write!(f, "  {m:>24}")?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<width$}", row.value)?;
            for c in &row.cells {
                write!(f, "  {:>24}", format!("{:.4} ± {:.4}", c.mean, c.stderr))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Runs every (value, seed) pair and aggregates per value. Runs execute in
/// parallel; the table is assembled only after all of them finished, in
/// value order.
pub fn sweep(cfg: &ScenarioConfig, axis: &str, values: &[String], seeds: &[u64]) -> Result<SweepTable, SweepError> {
    if values.is_empty() {
        // still report a bad axis first
        apply_axis(cfg, axis, "0").map(|_| ()).or_else(|e| match e {
            SweepError::UnknownAxis { .. } => Err(e),
            _ => Ok(()),
        })?;
        return Err(SweepError::NoValues(axis.to_string()));
    }
    if seeds.is_empty() {
        return Err(SweepError::NoSeeds);
    }
    let configs = values
        .iter()
        .map(|v| apply_axis(cfg, axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Result<Vec<f64>, SweepError>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mut c = configs[i].clone();
            c.seed = seed;
            run(&c, NullSink)
                .map(|r| metric_values(&r))
                .map_err(|source| SweepError::Run {
                    axis: axis.to_string(),
                    value: values[i].clone(),
                    seed,
                    source,
                })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rows = values
        .iter()
        .enumerate()
        .map(|(i, value)| {
            let runs = &results[i * seeds.len()..(i + 1) * seeds.len()];
            let cells = (0..METRICS.len())
                .map(|m| Cell::of(&runs.iter().map(|r| r[m]).collect::<Vec<_>>()))
                .collect();
            SweepRow {
                value: value.clone(),
                cells,
            }
        })
        .collect();
    Ok(SweepTable {
        axis: axis.to_string(),
        seeds: seeds.to_vec(),
        metrics: METRICS.iter().map(|m| m.to_string()).collect(),
        rows,
    })
}
