//! Subcommand implementations behind the `iabsim` binary.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::engine::{self, EngineError, RunOptions};
use crate::scenario_file::{self, ParseError};
use crate::topology::{Scenario, ValidationReport};
use crate::trace::{self, AssertionOutcome, CompareReport, Summary, Trace, TraceError, TraceLevel};
use crate::tunnel::PathMode;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Json(PathBuf, serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Width of the goodput bins in `throughput.csv`, seconds.
pub const THROUGHPUT_BIN: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Built-in scenario name or path to a TOML file.
    pub scenario: String,
    pub mode: PathMode,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub trace_level: TraceLevel,
}

pub struct RunOutput {
    pub trace: Trace,
    pub digest: String,
    pub assertions: Vec<AssertionOutcome>,
}

impl RunOutput {
    pub fn all_assertions_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

pub fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    if scenario_file::BUILTIN.contains(&arg) && !Path::new(arg).exists() {
        return Ok(scenario_file::builtin(arg)?);
    }
    Ok(scenario_file::load(Path::new(arg))?)
}

pub fn cmd_validate(scenario: &str) -> Result<ValidationReport, CliError> {
    Ok(load_scenario(scenario)?.validate_topology())
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let scenario = load_scenario(&cfg.scenario)?;
    let trace = engine::run(
        &scenario,
        RunOptions {
            mode: cfg.mode,
            trace_level: cfg.trace_level,
            seed: cfg.seed,
        },
    )?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| CliError::Io(p, e)
    };
    fs::create_dir_all(&cfg.out).map_err(io(&cfg.out))?;

    let trace_path = cfg.out.join("trace.jsonl");
    let f = fs::File::create(&trace_path).map_err(io(&trace_path))?;
    trace.write_jsonl(BufWriter::new(f)).map_err(io(&trace_path))?;

    let summary_path = cfg.out.join("summary.json");
    fs::write(&summary_path, trace.summary.to_json()).map_err(io(&summary_path))?;

    write_throughput_csv(&trace, &cfg.out.join("throughput.csv"))?;

    let assertions = scenario.assertions.iter().map(|a| a.evaluate(&trace)).collect();
    Ok(RunOutput {
        digest: trace.digest(),
        trace,
        assertions,
    })
}

#[derive(Serialize)]
struct ThroughputRow<'a> {
    flow_id: &'a str,
    t_start: f64,
    t_end: f64,
    goodput_bps: f64,
}

/// Goodput per flow in consecutive bins of [`THROUGHPUT_BIN`] seconds.
pub fn write_throughput_csv(trace: &Trace, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let bins = (trace.header.duration / THROUGHPUT_BIN).ceil() as usize;
    for d in &trace.deliveries {
        for k in 0..bins {
            let t0 = k as f64 * THROUGHPUT_BIN;
            let t1 = (t0 + THROUGHPUT_BIN).min(trace.header.duration);
            w.serialize(ThroughputRow {
                flow_id: &d.flow_id,
                t_start: t0,
                t_end: t1,
                goodput_bps: trace.measure_throughput(&d.flow_id, (t0, t1))?,
            })?;
        }
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    Ok(())
}

/// Reads a summary document; a directory means its `summary.json`.
pub fn read_summary(path: &Path) -> Result<Summary, CliError> {
    let file = if path.is_dir() {
        path.join("summary.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| CliError::Io(file.clone(), e))?;
    Summary::from_json(&text).map_err(|e| CliError::Json(file, e))
}

pub fn cmd_compare(a: &Path, b: &Path) -> Result<CompareReport, CliError> {
    Ok(trace::compare(&read_summary(a)?, &read_summary(b)?)?)
}
