//! Same traffic under both transport modes, compared per flow.

use iab_sim::{audit, scenario_file, trace, PathMode, RunOptions};

fn main() -> anyhow::Result<()> {
    let s = scenario_file::builtin("bap-compare")?;
    let a = iab_sim::run(&s, RunOptions::mode(PathMode::UpfReroute))?;
    let b = iab_sim::run(&s, RunOptions::mode(PathMode::BapBypass))?;
    print!("{}", trace::compare(&a.summary, &b.summary)?);
    println!(
        "same deliveries: {}",
        audit::delivered_multiset(&a) == audit::delivered_multiset(&b)
    );
    println!("backhaul header profile, reroute: {:?}", audit::backhaul_header_profile(&a));
    println!("backhaul header profile, bap:     {:?}", audit::backhaul_header_profile(&b));
    Ok(())
}
