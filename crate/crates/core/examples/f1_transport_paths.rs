//! F1 transport paths installed for the aerial DU in both modes, and the
//! state transitions of its F1 association.

use iab_sim::engine::transitions_of;
use iab_sim::f1ap::Entity;
use iab_sim::trace::TraceEvent;
use iab_sim::{scenario_file, PathMode, RunOptions};

fn main() -> anyhow::Result<()> {
    let mut s = scenario_file::builtin("bap-compare")?;
    s.flows.clear();
    s.duration = 1.2;
    for mode in [PathMode::UpfReroute, PathMode::BapBypass] {
        let trace = iab_sim::run(&s, RunOptions::mode(mode))?;
        let name = |id| trace.nodes.iter().find(|n| n.id == id).map_or("?".to_string(), |n| n.name.clone());
        println!("{mode:?}");
        for e in &trace.events {
            if let TraceEvent::PathInstalled { du, hops, routes, .. } = e {
                let hops: Vec<String> = hops.iter().map(|h| name(*h)).collect();
                println!("  {}: {} ({routes} routes)", name(*du), hops.join(" -> "));
            }
        }
        let du = trace.node_id("uav1-du").expect("aerial DU exists");
        for (t, state) in transitions_of(&trace, Entity::Association(du)) {
            println!("  {t} association {state}");
        }
    }
    Ok(())
}
