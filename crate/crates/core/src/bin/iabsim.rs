use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use iab_sim::cli::{self, RunConfig};
use iab_sim::{PathMode, TraceLevel};

#[derive(Parser)]
#[command(name = "iabsim", version, about = "IAB / aerial DU network simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    UpfReroute,
    Bap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Summary,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and list every problem found.
    Validate {
        /// Scenario file or built-in name (paper-reference, bap-compare).
        scenario: String,
    },
    /// Run a scenario and write trace.jsonl, summary.json and throughput.csv.
    Run {
        scenario: String,
        #[arg(long, value_enum, default_value = "upf-reroute")]
        mode: Mode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        trace_level: Level,
    },
    /// Per-flow differences between two runs (summary files or run directories).
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> anyhow::Result<ExitCode> {
    match Args::parse().command {
        Command::Validate { scenario } => {
            let report = cli::cmd_validate(&scenario)?;
            if report.is_valid() {
                println!("{scenario}: ok");
                return Ok(ExitCode::SUCCESS);
            }
            for m in report.messages() {
                println!("{m}");
            }
            Ok(ExitCode::from(2))
        }
        Command::Run {
            scenario,
            mode,
            seed,
            out,
            trace_level,
        } => {
            let cfg = RunConfig {
                scenario,
                mode: match mode {
                    Mode::UpfReroute => PathMode::UpfReroute,
                    Mode::Bap => PathMode::BapBypass,
                },
                seed,
                out,
                trace_level: match trace_level {
                    Level::Summary => TraceLevel::Summary,
                    Level::Full => TraceLevel::Full,
                },
            };
            let output = cli::cmd_run(&cfg)?;
            print!("{}", output.trace.summary);
            println!("trace digest {}", output.digest);
            for a in &output.assertions {
                println!("[{}] {}", if a.passed { "pass" } else { "FAIL" }, a.note);
            }
            println!("wrote {}", cfg.out.display());
            Ok(if output.all_assertions_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Compare { a, b } => {
            print!("{}", cli::cmd_compare(&a, &b)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
