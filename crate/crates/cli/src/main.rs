use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use hetvnet_core::config::{ConfigError, ScenarioConfig};
use hetvnet_core::engine::{run, EngineError};
use hetvnet_core::metrics::{report_from_trace, MetricsReport};
use hetvnet_core::scenario::{bundled, BUNDLED};
use hetvnet_core::sweep::{sweep, SweepError};
use hetvnet_core::trace::{DigestSink, JsonlSink};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "hetvnet", version, about = "Heterogeneous vehicular network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario config and its initial world.
    Validate {
        /// Config file, or `bundled:<name>` for a built-in scenario.
        config: String,
    },
    /// Run a scenario, writing a JSONL trace and a JSON report.
    Run {
        config: String,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "HETVNET_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Vary one config field and aggregate metrics over seeds.
    Sweep {
        config: String,
        /// Dotted config path, e.g. `radio.v2v.per`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; `a..b` expands to the integers a through b.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Comma-separated seeds; defaults to the config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, env = "HETVNET_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Recompute the report of a trace file.
    Report { trace: PathBuf },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn config(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            err: err.into(),
        }
    }
    fn io(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_IO,
            err: err.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::Config(_) | EngineError::Network(_) => EXIT_CONFIG,
            EngineError::Invariant { .. } => EXIT_RUNTIME,
            EngineError::Io(_) => EXIT_IO,
        };
        Self { code, err: e.into() }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Run { source, axis, value, seed } => {
                let inner = Failure::from(source);
                Self {
                    code: inner.code,
                    err: inner.err.context(format!("run {axis} = {value}, seed {seed}")),
                }
            }
            other => Failure::config(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run { config, seed, out } => run_cmd(&config, seed, &out),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => sweep_cmd(&config, &axis, &values, &seeds, &out),
        Command::Report { trace } => report_cmd(&trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn load(source: &str) -> Result<ScenarioConfig, Failure> {
    let text = match source.strip_prefix("bundled:") {
        Some(name) => bundled(name)
            .ok_or_else(|| {
                let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
                Failure::config(anyhow!("no bundled scenario `{name}`; available: {}", names.join(", ")))
            })?
            .to_string(),
        None => fs::read_to_string(source)
            .with_context(|| format!("reading {source}"))
            .map_err(Failure::io)?,
    };
    ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        ConfigError::Parse(_) | ConfigError::Invalid(_) => Failure::config(anyhow!(e).context(source.to_string())),
    })
}

fn validate(source: &str) -> Result<(), Failure> {
    let cfg = load(source)?;
    let sim = hetvnet_core::engine::Simulation::new(cfg).map_err(Failure::from)?;
    println!(
        "{source}: ok ({} vehicles, {} steps)",
        sim.vehicles().count(),
        sim.config().steps()
    );
    Ok(())
}

fn print_summary(r: &MetricsReport) {
    println!("scenario      {} (seed {})", r.scenario, r.seed);
    println!("duration      {:.1} s, {} records", r.duration, r.records);
    for (class, l) in &r.latency {
        println!(
            "latency {:<13} n={} mean={:.3} ms p50={:.3} p95={:.3} p99={:.3}",
            format!("{class:?}"),
            l.count,
            l.mean * 1e3,
            l.p50 * 1e3,
            l.p95 * 1e3,
            l.p99 * 1e3
        );
    }
    for (link, s) in &r.links {
        println!("pdr {:<17} {:.4} ({} delivered, {} lost)", format!("{link:?}"), s.pdr, s.delivered, s.lost);
    }
    println!(
        "conflicts     {} (executed {}, fell back {}, deferred {}, meeting priority {})",
        r.conflicts,
        r.resolutions.executed,
        r.resolutions.fell_back,
        r.resolutions.deferred,
        r.resolutions.meeting_priority
    );
    println!("safety        {} near misses, {} collisions", r.near_misses, r.collisions);
    println!("traffic       mean speed {:.2} m/s, flow {:.0} veh/h", r.mean_speed, r.flow);
    for s in &r.subbands {
        println!(
            "subband {}     {} msgs, collision ratio {:.4}, {:.0} bit/s, peak backlog {:.0} bit",
            s.subband, s.messages, s.collision_ratio, s.throughput_bps, s.peak_backlog_bits
        );
    }
    println!(
        "uplink        admitted {:.0} B, dropped {:.0} B, backlog {:.0} B",
        r.uplink.admitted, r.uplink.dropped, r.uplink.backlog + 0.0
    );
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run_cmd(source: &str, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load(source)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::io)?;
    let stem = format!("{}-seed{}", cfg.name, cfg.seed);
    let trace_path = out.join(format!("{stem}.trace.jsonl"));
    let report_path = out.join(format!("{stem}.report.json"));

    let result = (|| -> Result<(MetricsReport, String), Failure> {
        let file = File::create(&trace_path)
            .with_context(|| format!("creating {}", trace_path.display()))
            .map_err(Failure::io)?;
        let mut jsonl = JsonlSink::new(BufWriter::new(file));
        let mut digest = DigestSink::new();
        let report = run(&cfg, (&mut jsonl, &mut digest))?;
        jsonl.into_inner().flush().map_err(Failure::io)?;
        write_json(&report_path, &report).map_err(Failure::io)?;
        Ok((report, digest.hex_digest()))
    })();

    match result {
        Ok((report, digest)) => {
            print_summary(&report);
            println!("trace         {} (sha256 {digest})", trace_path.display());
            println!("report        {}", report_path.display());
            Ok(())
        }
        Err(f) => {
            // An invariant failure keeps its trace for inspection.
            if f.code != EXIT_RUNTIME {
                let _ = fs::remove_file(&trace_path);
            }
            let _ = fs::remove_file(&report_path);
            Err(f)
        }
    }
}

/// Splits `a..b` integer ranges into their members.
fn expand_values(values: &[String]) -> Result<Vec<String>, Failure> {
    let mut out = vec![];
    for v in values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()) {
        match v.split_once("..") {
            Some((a, b)) => {
                let parse = |x: &str| {
                    x.trim()
                        .parse::<i64>()
                        .map_err(|_| Failure::config(anyhow!("bad range `{v}`: bounds must be integers")))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(Failure::config(anyhow!("bad range `{v}`: empty")));
                }
                out.extend((a..=b).map(|i| i.to_string()));
            }
            None => out.push(v.to_string()),
        }
    }
    Ok(out)
}

fn sweep_cmd(source: &str, axis: &str, values: &[String], seeds: &[u64], out: &Path) -> Result<(), Failure> {
    let cfg = load(source)?;
    let values = expand_values(values)?;
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let table = sweep(&cfg, axis, &values, &seeds)?;
    print!("{table}");
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::io)?;
    let path = out.join(format!("{}-sweep-{axis}.json", cfg.name));
    write_json(&path, &table).map_err(Failure::io)?;
    println!("table         {}", path.display());
    Ok(())
}

fn report_cmd(trace: &Path) -> Result<(), Failure> {
    let file = File::open(trace)
        .with_context(|| format!("opening {}", trace.display()))
        .map_err(Failure::io)?;
    let report = report_from_trace(BufReader::new(file)).map_err(|e| match e {
        hetvnet_core::trace::TraceReadError::Io(e) => Failure::io(e),
        other => Failure::config(anyhow!(other).context(trace.display().to_string())),
    })?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, &report).map_err(Failure::io)?;
    writeln!(lock).map_err(Failure::io)?;
    Ok(())
}
