#![allow(dead_code)]

use iab_sim::topology::{Directive, DirectiveAction, FlowSpec};
use iab_sim::{Carrier, LinkSpec, NodeId, NodeSpec, PathMode, Position, Role, Scenario};
use proptest::prelude::*;

pub fn n41() -> Carrier {
    Carrier::new("n41", 2.585e9, 20e6, 30e3).unwrap()
}

pub fn n78() -> Carrier {
    Carrier::new("n78", 3.47e9, 30e6, 30e3).unwrap()
}

/// Core network plus one donor DU at the origin: (scenario, cu, upf, donor).
pub fn core_network(duration: f64) -> (Scenario, NodeId, NodeId, NodeId) {
    let mut s = Scenario::new("test", duration);
    let cu = s.add_node(NodeSpec::new(Role::Cu, Position::new(0.0, -20.0)).named("cu")).unwrap();
    let upf = s.add_node(NodeSpec::new(Role::Upf, Position::new(0.0, -40.0)).named("upf")).unwrap();
    let donor = s
        .add_node(
            NodeSpec::new(Role::DonorDu, Position::new(0.0, 0.0))
                .tx_power(10.0)
                .cell(n41())
                .named("donor-du"),
        )
        .unwrap();
    s.add_link(cu, donor, LinkSpec::wired(1e9)).unwrap();
    s.add_link(cu, upf, LinkSpec::wired(1e9)).unwrap();
    (s, cu, upf, donor)
}

pub fn ue(s: &mut Scenario, name: &str, x: f64, y: f64) -> NodeId {
    s.add_node(NodeSpec::new(Role::Ue, Position::new(x, y)).tx_power(23.0).named(name))
        .unwrap()
}

pub fn flow(id: &str, src: NodeId, dst: NodeId, rate: f64, size: u32, start: f64, stop: f64) -> FlowSpec {
    FlowSpec {
        id: id.into(),
        src,
        dst,
        rate,
        packet_size: size,
        start,
        stop,
    }
}

pub fn uav(at: f64, x: f64, y: f64) -> Directive {
    Directive {
        at,
        action: DirectiveAction::InstantiateIabNode {
            group: "uav1".into(),
            position: Position::new(x, y),
            access_carrier: n78(),
            mt_tx_power: 23.0,
            du_tx_power: 30.0,
        },
    }
}

/// Knobs of a randomly generated two-UE deployment.
#[derive(Debug, Clone)]
pub struct Params {
    pub uav_x: f64,
    pub uav_y: f64,
    pub ue1: (f64, f64),
    pub ue2: (f64, f64),
    pub ue2_dl: f64,
    pub ue2_ul: f64,
    pub ue1_dl: f64,
    pub size: u32,
    pub mode: PathMode,
    pub seed: u64,
}

pub const SMALL_DURATION: f64 = 0.6;
pub const FLOW_START: f64 = 0.1;

/// UE2 is always outside donor coverage (donor radius is about 1418 m), so
/// it can only attach through the aerial DU.
pub fn small_scenario(p: &Params) -> Scenario {
    let (mut s, _, upf, _) = core_network(SMALL_DURATION);
    s.seed = p.seed;
    let u1 = ue(&mut s, "ue1", p.ue1.0, p.ue1.1);
    let u2 = ue(&mut s, "ue2", p.ue2.0, p.ue2.1);
    s.schedule.push(uav(0.02, p.uav_x, p.uav_y));
    s.add_flow(flow("ue2-dl", upf, u2, p.ue2_dl, p.size, FLOW_START, SMALL_DURATION));
    s.add_flow(flow("ue2-ul", u2, upf, p.ue2_ul, p.size, FLOW_START, SMALL_DURATION));
    s.add_flow(flow("ue1-dl", upf, u1, p.ue1_dl, p.size, FLOW_START, SMALL_DURATION));
    s
}

pub fn params() -> impl Strategy<Value = Params> {
    (
        (150.0..400.0f64, -50.0..50.0f64),
        (50.0..600.0f64, -300.0..300.0f64),
        (1450.0..1650.0f64, -150.0..150.0f64),
        (1e6..50e6f64, 0.2e6..4e6f64, 1e6..20e6f64),
        200u32..=1400,
        prop_oneof![Just(PathMode::UpfReroute), Just(PathMode::BapBypass)],
        any::<u64>(),
    )
        .prop_map(|((uav_x, uav_y), ue1, ue2, (ue2_dl, ue2_ul, ue1_dl), size, mode, seed)| Params {
            uav_x,
            uav_y,
            ue1,
            ue2,
            ue2_dl,
            ue2_ul,
            ue1_dl,
            size,
            mode,
            seed,
        })
}
