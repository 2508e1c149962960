//! Discrete-event simulator of 5G integrated access and backhaul (IAB) with
//! an aerial DU node.
//!
//! A scenario places a CU, a UPF, donor DUs, UEs and optionally IAB nodes
//! (an IAB-MT plus a DU node flying together). The engine runs F1 setup, UE
//! attach and the IAB-MT PDU session as message exchanges over the
//! simulated links, then carries user traffic through explicit GTP/BAP
//! header stacks. F1 traffic of an IAB node reaches the CU either by
//! detouring through the UPF ([`PathMode::UpfReroute`]) or by BAP routing at
//! the donor DU ([`PathMode::BapBypass`]).
//!
//! ```no_run
//! use iab_sim::{scenario_file, RunOptions, PathMode};
//!
//! let scenario = scenario_file::builtin("paper-reference").unwrap();
//! let trace = iab_sim::run(&scenario, RunOptions::mode(PathMode::UpfReroute)).unwrap();
//! println!("{}", trace.summary);
//! ```

pub mod audit;
pub mod cli;
pub mod engine;
pub mod f1ap;
pub mod radio;
pub mod scenario_file;
pub mod time;
pub mod topology;
pub mod trace;
pub mod tunnel;

pub use engine::{measure_throughput, run, EngineConfig, EngineError, RunOptions, Simulation};
pub use time::SimTime;
pub use topology::{Carrier, LinkSpec, NodeId, NodeSpec, Position, Role, Scenario};
pub use trace::{Summary, Trace, TraceLevel};
pub use tunnel::PathMode;
