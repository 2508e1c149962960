//! Builds a small deployment by hand and prints the validator's findings.

use iab_sim::topology::IabNodeSpec;
use iab_sim::{Carrier, LinkSpec, NodeSpec, Position, Role, Scenario};

fn main() -> anyhow::Result<()> {
    let n41 = Carrier::new("n41", 2.585e9, 20e6, 30e3)?;
    let mut s = Scenario::new("hand-built", 5.0);
    let cu = s.add_node(NodeSpec::new(Role::Cu, Position::new(0.0, -20.0)).named("cu"))?;
    let upf = s.add_node(NodeSpec::new(Role::Upf, Position::new(0.0, -40.0)).named("upf"))?;
    let donor = s.add_node(
        NodeSpec::new(Role::DonorDu, Position::new(0.0, 0.0))
            .tx_power(10.0)
            .cell(n41)
            .named("donor-du"),
    )?;
    s.add_link(cu, donor, LinkSpec::wired(1e9))?;
    s.add_link(cu, upf, LinkSpec::wired(1e9))?;
    s.add_node(NodeSpec::new(Role::Ue, Position::new(120.0, 40.0)).tx_power(23.0).named("ue1"))?;

    let report = s.validate_topology();
    println!("valid: {}", report.is_valid());

    // an aerial node only comes up where a donor DU can reach it
    let spec = |x| IabNodeSpec {
        group: "uav1".into(),
        position: Position::new(x, 0.0),
        access_carrier: Carrier::new("n78", 3.47e9, 30e6, 30e3).unwrap(),
        mt_tx_power: 23.0,
        du_tx_power: 30.0,
    };
    match s.instantiate_iab_node(spec(10_000.0), 1.0) {
        Ok(_) => println!("queued far node"),
        Err(e) => println!("far node rejected: {e}"),
    }
    let d = s.instantiate_iab_node(spec(220.0), 1.0)?;
    println!("queued: {d:?}");

    // the builder refuses a second CU and a radio link between core nodes
    match s.add_node(NodeSpec::new(Role::Cu, Position::new(5.0, -20.0)).named("cu2")) {
        Ok(_) => println!("second CU added"),
        Err(e) => println!("second CU rejected: {e}"),
    }
    if let Err(e) = s.add_link(cu, upf, LinkSpec::radio(None)) {
        println!("radio core link rejected: {e}");
    }
    println!("still valid: {}", s.validate_topology().is_valid());
    Ok(())
}
