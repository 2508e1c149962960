//! Brings the aerial node up mid-run and watches UE2 go from no service to
//! full rate, stepping the engine by hand.

use iab_sim::engine::{transitions_of, Simulation};
use iab_sim::f1ap::Entity;
use iab_sim::{scenario_file, RunOptions, SimTime};

fn main() -> anyhow::Result<()> {
    let mut s = scenario_file::builtin("paper-reference")?;
    s.schedule[0].at = 6.0;
    let mut sim = Simulation::new(&s, RunOptions::default())?;
    for t in [1.0, 5.9, 6.1, 8.0] {
        sim.run_until(SimTime::from_secs_f64(t));
        let nodes = sim.network().topology.nodes.len();
        let ue2 = sim.network().topology.node_by_name("ue2").map(|n| n.id).expect("ue2");
        println!("t={t:>4}: {nodes} nodes, ue2 connected {}", sim.network().control.is_connected(ue2));
    }
    sim.run_to_end();
    let trace = sim.into_trace();
    let ue2 = trace.node_id("ue2").expect("ue2");
    for (t, state) in transitions_of(&trace, Entity::UeContext(ue2)) {
        println!("{t} ue2 {state}");
    }
    for w in [(1.0, 6.0), (7.0, 12.0)] {
        println!("ue2-dl over ({}, {}]: {:.3} Mbit/s", w.0, w.1, trace.measure_throughput("ue2-dl", w)? / 1e6);
    }
    Ok(())
}
