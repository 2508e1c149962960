//! Runs the bundled reference scenario and checks its goodput assertion.

use iab_sim::{scenario_file, PathMode, RunOptions};

fn main() -> anyhow::Result<()> {
    let s = scenario_file::builtin("paper-reference")?;
    let started = std::time::Instant::now();
    let trace = iab_sim::run(&s, RunOptions::mode(PathMode::UpfReroute))?;
    println!("simulated {} s in {:.2?}", s.duration, started.elapsed());
    print!("{}", trace.summary);
    for a in &s.assertions {
        let outcome = a.evaluate(&trace);
        println!("[{}] {}", if outcome.passed { "pass" } else { "FAIL" }, outcome.note);
    }
    for w in [(1.0, 2.0), (2.0, 5.0), (5.0, 12.0)] {
        let g = trace.measure_throughput("ue2-dl", w)?;
        println!("ue2-dl goodput over ({}, {}] s: {:.3} Mbit/s", w.0, w.1, g / 1e6);
    }
    Ok(())
}
