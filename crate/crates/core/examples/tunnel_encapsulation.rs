//! The header stacks a UE2 downlink packet carries on the backhaul in each
//! transport mode.

use iab_sim::tunnel::{self, BapRouteId, HeaderSizes, Packet, TeidAllocator};
use iab_sim::{NodeId, SimTime};

fn main() -> anyhow::Result<()> {
    let sizes = HeaderSizes::default();
    let (upf, ue2, iab_du, iab_mt) = (NodeId(2), NodeId(5), NodeId(7), NodeId(6));
    let mut teids = TeidAllocator::new(7);
    let f1u = teids.allocate_tunnel(iab_du)?;
    let session = teids.allocate_tunnel(iab_mt)?;

    let pkt = Packet::user(1, 0, 0, upf, ue2, 1400, SimTime::ZERO);
    let inner = tunnel::encapsulate(pkt, &f1u, &sizes)?;

    let reroute = tunnel::encapsulate(inner.clone(), &session, &sizes)?;
    println!("upf reroute: depth {} wire {} B teids {:?}", reroute.depth(), reroute.wire_size(), reroute.teids());

    let bap = tunnel::push_bap(inner, BapRouteId(1), &sizes)?;
    println!("bap bypass:  depth {} wire {} B outer {:?}", bap.depth(), bap.wire_size(), bap.outer());

    // a third header is refused
    match tunnel::encapsulate(reroute.clone(), &f1u, &sizes) {
        Ok(_) => println!("unexpected third header"),
        Err(e) => println!("third header: {e}"),
    }
    // the IAB-MT pops only its own TEID
    let wrong = tunnel::decapsulate(reroute.clone(), f1u.teid);
    println!("pop with wrong teid: {}", wrong.unwrap_err());
    let back = tunnel::decapsulate(tunnel::decapsulate(reroute, session.teid)?, f1u.teid)?;
    println!("fully decapsulated: depth {} wire {} B", back.depth(), back.wire_size());
    Ok(())
}
