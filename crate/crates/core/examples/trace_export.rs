//! Writes the JSONL trace of a short run and shows how to read it back.

use std::io::{BufRead, BufReader};

use iab_sim::{scenario_file, RunOptions, TraceLevel};

fn main() -> anyhow::Result<()> {
    let mut s = scenario_file::builtin("bap-compare")?;
    s.duration = 2.5;
    for f in &mut s.flows {
        f.stop = f.stop.min(s.duration);
    }
    let opts = RunOptions {
        trace_level: TraceLevel::Full,
        ..Default::default()
    };
    let trace = iab_sim::run(&s, opts)?;
    let path = std::env::temp_dir().join("iabsim-example-trace.jsonl");
    let file = std::fs::File::create(&path)?;
    trace.write_jsonl(std::io::BufWriter::new(file))?;
    println!("wrote {} ({} events), digest {}", path.display(), trace.events.len(), trace.digest());

    let mut kinds = std::collections::BTreeMap::<String, usize>::new();
    for line in BufReader::new(std::fs::File::open(&path)?).lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(&line?)?;
        *kinds.entry(v["event"].as_str().unwrap_or("?").to_string()).or_default() += 1;
    }
    for (k, n) in kinds {
        println!("{k:>18} {n}");
    }
    println!("{}", trace.summary.to_json());
    Ok(())
}
