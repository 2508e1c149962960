use std::fs;
use std::path::Path;
use std::process::Command;

use iab_sim::cli::{self, CliError, RunConfig};
use iab_sim::topology::Violation;
use iab_sim::trace::{Assertion, Metric, TraceError};
use iab_sim::{PathMode, Summary, TraceLevel};

const BROKEN: &str = r#"
name = "broken"
duration = 0.0

[[node]]
name = "cu-a"
role = "cu"
position = [0.0, 0.0]

[[node]]
name = "cu-b"
role = "cu"
position = [0.0, 5.0]

[[node]]
name = "du"
role = "donor_du"
position = [0.0, 10.0]

[[link]]
endpoints = ["cu-a", "cu-b"]
medium = "radio"
carrier = { band_label = "n41", center_frequency = 2.5e9, bandwidth = 20e6, scs = 30e3 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iabsim"))
}

fn config(out: &Path, mode: PathMode) -> RunConfig {
    RunConfig {
        scenario: "bap-compare".into(),
        mode,
        seed: None,
        out: out.to_path_buf(),
        trace_level: TraceLevel::Summary,
    }
}

#[test]
fn validate_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(&path, BROKEN).unwrap();
    let report = cli::cmd_validate(path.to_str().unwrap()).unwrap();
    let v = &report.violations;
    assert!(v.contains(&Violation::MultipleCu(2)), "{v:?}");
    assert!(v.contains(&Violation::NoUpf));
    assert!(v.contains(&Violation::NonPositiveDuration(0.0)));
    assert!(v.iter().any(|x| matches!(x, Violation::IllegalMedium { .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::MissingTxPower(n) if n == "du")));
    assert!(v.iter().any(|x| matches!(x, Violation::MissingCell(n) if n == "du")));
}

#[test]
fn builtins_validate() {
    for name in iab_sim::scenario_file::BUILTIN {
        assert!(cli::cmd_validate(name).unwrap().is_valid());
    }
    assert!(matches!(cli::cmd_validate("no-such-thing"), Err(CliError::Parse(_))));
}

#[test]
fn run_writes_outputs_and_compare_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let (ra, rb) = (dir.path().join("a"), dir.path().join("b"));
    let a = cli::cmd_run(&config(&ra, PathMode::UpfReroute)).unwrap();
    let b = cli::cmd_run(&config(&rb, PathMode::BapBypass)).unwrap();
    for d in [&ra, &rb] {
        for f in ["trace.jsonl", "summary.json", "throughput.csv"] {
            assert!(d.join(f).is_file(), "{f}");
        }
    }
    assert_eq!(a.digest.len(), 64);
    let summary = Summary::from_json(&fs::read_to_string(ra.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, a.trace.summary);

    let csv = fs::read_to_string(ra.join("throughput.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "flow_id,t_start,t_end,goodput_bps");
    // three flows, 10 s in 0.5 s bins
    assert_eq!(csv.lines().count(), 1 + 3 * 20);
    let busy = csv
        .lines()
        .filter(|l| l.starts_with("ue2-dl,4.0,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .next()
        .unwrap();
    assert!((busy - 20e6).abs() < 0.5e6, "{busy}");

    let report = cli::cmd_compare(&ra, &rb.join("summary.json")).unwrap();
    assert!(report.unmatched.is_empty());
    assert!(report.total_hops_traversed < 0);
    assert!(report.total_backhaul_overhead_bytes < 0);
    let dl = report.flows.iter().find(|f| f.flow_id == "ue2-dl").unwrap();
    assert_eq!(dl.goodput_bps, 0.0);
    assert!(dl.mean_latency_s < 0.0);
    assert!(cli::cmd_compare(&ra, &ra).unwrap().is_identical());
    assert_eq!(b.trace.summary.flows.len(), 3);
}

#[test]
fn trace_file_is_jsonl_with_header_first() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), PathMode::BapBypass);
    cfg.trace_level = TraceLevel::Full;
    cli::cmd_run(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["schema_version"], 1);
    let mut last = 0u64;
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let t = v["t_ns"].as_u64().unwrap();
        assert!(t >= last);
        last = t;
    }
}

#[test]
fn compare_rejects_other_schema() {
    let dir = tempfile::tempdir().unwrap();
    cli::cmd_run(&config(dir.path(), PathMode::UpfReroute)).unwrap();
    let path = dir.path().join("summary.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["schema_version"] = 99.into();
    let other = dir.path().join("other.json");
    fs::write(&other, v.to_string()).unwrap();
    assert!(matches!(
        cli::cmd_compare(&path, &other),
        Err(CliError::Trace(TraceError::SchemaMismatch { a: 1, b: 99 }))
    ));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    fs::write(&broken, BROKEN).unwrap();

    let ok = bin().args(["validate", "paper-reference"]).output().unwrap();
    assert!(ok.status.success());

    let bad = bin().arg("validate").arg(&broken).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.lines().count() >= 6, "{stdout}");

    let out = dir.path().join("run");
    let run = bin()
        .args(["run", "bap-compare", "--mode", "bap", "--trace-level", "summary", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("trace digest"));

    let cmp = bin().arg("compare").arg(&out).arg(&out).output().unwrap();
    assert!(cmp.status.success());

    let missing = bin().args(["run", "/nonexistent.toml"]).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn failing_assertion_gives_exit_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = iab_sim::scenario_file::builtin("bap-compare").unwrap();
    s.assertions.push(Assertion {
        flow: "ue2-dl".into(),
        metric: Metric::GoodputBps,
        window: Some([2.0, 9.0]),
        min: Some(1e9),
        max: None,
    });
    let text = iab_sim::scenario_file::to_toml(&s).unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, text).unwrap();
    let out = bin()
        .arg("run")
        .arg(&path)
        .args(["--trace-level", "summary", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
