//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line per
//! criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use iab_sim::audit;
use iab_sim::engine::{run, RunOptions};
use iab_sim::scenario_file::builtin;
use iab_sim::trace::{Trace, TraceEvent};
use iab_sim::tunnel::{decapsulate, encapsulate, HeaderSizes, Packet, Teid, TunnelRef};
use iab_sim::{radio, NodeId, PathMode, Role, SimTime};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const PROPERTY_CASES: u32 = 256;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: Vec<(bool, String)>) -> Outcome {
        let pass = checks.iter().all(|(ok, _)| *ok);
        let detail = checks
            .into_iter()
            .filter(|(ok, _)| !pass || *ok)
            .filter(|(ok, _)| pass || !*ok)
            .map(|(_, d)| d)
            .collect::<Vec<_>>()
            .join("; ");
        Outcome { pass, detail }
    }
}

fn timed(scenario: &str, mode: PathMode) -> (Trace, Duration) {
    let s = builtin(scenario).expect("bundled scenario");
    let t0 = Instant::now();
    let trace = run(&s, RunOptions::mode(mode)).expect("run");
    (trace, t0.elapsed())
}

fn roles(trace: &Trace, hops: &[NodeId]) -> Vec<Role> {
    hops.iter()
        .map(|n| trace.nodes.iter().find(|x| x.id == *n).expect("known node").role)
        .collect()
}

fn iab_du(trace: &Trace) -> NodeId {
    trace.nodes.iter().find(|n| n.role == Role::IabDu).expect("IAB DU instantiated").id
}

fn installed_path(trace: &Trace, du: NodeId) -> Option<Vec<NodeId>> {
    trace.events.iter().rev().find_map(|e| match e {
        TraceEvent::PathInstalled { du: d, hops, .. } if *d == du => Some(hops.clone()),
        _ => None,
    })
}

/// Checks every F1 message of `du` and every delivered packet of the UE2
/// flows against `expected` (uplink roles; downlink is the reverse).
fn path_checks(trace: &Trace, expected: &[Role]) -> Vec<(bool, String)> {
    let du = iab_du(trace);
    let mut checks = Vec::new();
    let path = installed_path(trace, du).unwrap_or_default();
    let got = roles(trace, &path);
    checks.push((got == expected, format!("installed path {got:?}")));
    let reversed: Vec<Role> = expected.iter().rev().copied().collect();
    let ue2_flows: Vec<u32> = trace
        .flows
        .iter()
        .filter(|f| trace.node_name(f.src) == Some("ue2") || trace.node_name(f.dst) == Some("ue2"))
        .map(|f| f.index)
        .collect();
    let (mut f1, mut user, mut bad) = (0u64, 0u64, 0u64);
    for e in &trace.events {
        if let TraceEvent::Deliver {
            flow,
            kind,
            association,
            hop_log,
            ..
        } = e
        {
            let hop_roles = roles(trace, hop_log);
            match (flow, kind, association) {
                (None, Some(k), Some(a)) if *a == du => {
                    f1 += 1;
                    let want = if k.is_uplink() { expected } else { &reversed[..] };
                    bad += u64::from(hop_roles != want);
                }
                (Some(f), _, _) if ue2_flows.contains(f) => {
                    user += 1;
                    let dl = trace.node_name(trace.flows[*f as usize].src) == Some("upf");
                    let want = if dl { &reversed[..] } else { expected };
                    bad += u64::from(hop_roles != want);
                }
                _ => {}
            }
        }
    }
    checks.push((f1 > 0 && user > 0, format!("{f1} F1 messages and {user} UE2 packets checked")));
    checks.push((bad == 0, format!("{bad} deviating hop logs")));
    let conformance = audit::hop_log_conformance(trace);
    checks.push((conformance.is_empty(), format!("{} hop-log audit findings", conformance.len())));
    checks
}

fn criterion_1(runs: &mut Vec<(String, Trace)>) -> Outcome {
    let (trace, elapsed) = timed("paper-reference", PathMode::UpfReroute);
    let mut checks = path_checks(
        &trace,
        &[Role::IabDu, Role::IabMt, Role::DonorDu, Role::Cu, Role::Upf, Role::Cu],
    );
    checks.push((elapsed.as_secs_f64() < 10.0, format!("runtime {:.2} s", elapsed.as_secs_f64())));
    runs.push(("paper-reference/upf_reroute".into(), trace));
    Outcome::new(checks)
}

fn criterion_2(runs: &mut Vec<(String, Trace)>) -> Outcome {
    let (reroute, t_a) = timed("bap-compare", PathMode::UpfReroute);
    let (bap, t_b) = timed("bap-compare", PathMode::BapBypass);
    let mut checks = path_checks(&bap, &[Role::IabDu, Role::IabMt, Role::DonorDu, Role::Cu]);
    let (ma, mb) = (audit::delivered_multiset(&reroute), audit::delivered_multiset(&bap));
    let delivered: usize = mb.values().map(Vec::len).sum();
    checks.push((ma == mb && delivered > 0, format!("delivered multisets equal ({delivered} packets)")));
    let (oa, ob) = (
        reroute.summary.totals.backhaul_overhead_bytes,
        bap.summary.totals.backhaul_overhead_bytes,
    );
    checks.push((ob < oa, format!("backhaul overhead {ob} B < {oa} B")));
    for id in ["ue2-dl", "ue2-ul"] {
        let (la, lb) = (
            reroute.summary.flow(id).unwrap().mean_latency_s,
            bap.summary.flow(id).unwrap().mean_latency_s,
        );
        checks.push((lb < la, format!("{id} latency {:.3} ms < {:.3} ms", lb * 1e3, la * 1e3)));
    }
    let worst = t_a.max(t_b).as_secs_f64();
    checks.push((worst < 10.0, format!("runtime {worst:.2} s per run")));
    runs.push(("bap-compare/upf_reroute".into(), reroute));
    runs.push(("bap-compare/bap_bypass".into(), bap));
    Outcome::new(checks)
}

/// Received power of the donor cell at UE2, evaluated from the pathloss
/// formula directly.
fn donor_rsrp_at_ue2() -> f64 {
    let s = builtin("paper-reference").unwrap();
    let donor = s.nodes.iter().find(|n| n.role == Role::DonorDu).unwrap();
    let ue2 = s.node_by_name("ue2").unwrap();
    let d = ((donor.position.x - ue2.position.x).powi(2) + (donor.position.y - ue2.position.y).powi(2)).sqrt();
    let f = donor.cell.as_ref().unwrap().center_frequency;
    let fspl_1m = 20.0 * (4.0 * std::f64::consts::PI * f / 299_792_458.0).log10();
    donor.tx_power.unwrap() - (fspl_1m + 22.0 * d.log10())
}

fn criterion_3(runs: &mut Vec<(String, Trace)>) -> Outcome {
    let mut checks = Vec::new();
    let rsrp = donor_rsrp_at_ue2();
    checks.push((rsrp < -100.0, format!("donor RSRP at UE2 {rsrp:.1} dBm")));
    let s = builtin("paper-reference").unwrap();
    let donor = s.nodes.iter().find(|n| n.role == Role::DonorDu).unwrap();
    let ue2 = s.node_by_name("ue2").unwrap();
    checks.push((
        !s.du_covers(donor, ue2.position) && s.best_donor_du(ue2.position).is_none(),
        "model agrees UE2 is outside donor coverage".into(),
    ));

    let mut without = s.clone();
    without.schedule.clear();
    let bare = run(&without, RunOptions::default()).unwrap();
    let f = bare.summary.flow("ue2-dl").unwrap();
    checks.push((
        f.delivered == 0 && f.goodput_bps == 0.0,
        format!("without aerial DU: {} delivered", f.delivered),
    ));

    let at = s.schedule[0].at;
    let with = run(&s, RunOptions::default()).unwrap();
    let before = with.measure_throughput("ue2-dl", (0.0, at)).unwrap();
    let after = with.measure_throughput("ue2-dl", (at, s.duration)).unwrap();
    checks.push((
        before == 0.0 && after > 0.0,
        format!("goodput before directive {before} bit/s, after {:.2} Mbit/s", after / 1e6),
    ));
    runs.push(("paper-reference/no-aerial".into(), bare));
    Outcome::new(checks)
}

fn criterion_4(runs: &mut Vec<(String, Trace)>) -> Outcome {
    let s = builtin("paper-reference").unwrap();
    let t0 = Instant::now();
    let trace = run(&s, RunOptions::default()).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let g = trace.measure_throughput("ue2-dl", (5.0, 12.0)).unwrap();

    // Donor -> MT downlink capacity from the formulas, times payload share
    // of a doubly tunnelled packet.
    let donor = s.nodes.iter().find(|n| n.role == Role::DonorDu).unwrap();
    let mt = match &s.schedule[0].action {
        iab_sim::topology::DirectiveAction::InstantiateIabNode { position, .. } => *position,
        _ => unreachable!(),
    };
    let d = ((donor.position.x - mt.x).powi(2) + (donor.position.y - mt.y).powi(2)).sqrt();
    let f = 2.585e9;
    let pl = 20.0 * (4.0 * std::f64::consts::PI * f / 299_792_458.0).log10() + 22.0 * d.log10();
    let snr_db = 10.0 - pl - (-174.0 + 10.0 * 20e6f64.log10() + 7.0);
    let cap = 0.55 * 0.7 * 20e6 * (1.0 + 10f64.powf(snr_db / 10.0)).log2();
    let predicted = cap * 1400.0 / 1416.0;

    let checks = vec![
        (
            (g - 30e6).abs() <= 3e6,
            format!("UE2 DL goodput {:.3} Mbit/s (target 30 +-10%)", g / 1e6),
        ),
        (
            (g - predicted).abs() / predicted < 0.01,
            format!("bottleneck prediction {:.3} Mbit/s", predicted / 1e6),
        ),
        (elapsed < 30.0, format!("runtime {elapsed:.2} s")),
    ];
    runs.push(("paper-reference/throughput".into(), trace));
    Outcome::new(checks)
}

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn suite<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> (bool, String)
where
    S::Value: std::fmt::Debug,
{
    let count = std::cell::Cell::new(0u32);
    let r = runner().run(&strategy, |v| {
        count.set(count.get() + 1);
        test(v)
    });
    match r {
        Ok(()) => (count.get() >= 200, format!("{name}: {} cases", count.get())),
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn criterion_5() -> Outcome {
    let mut checks = Vec::new();

    checks.push(suite(
        "encapsulation round trip",
        (1u32..=u32::MAX, 1u32..=u32::MAX, 0u32..9000, any::<bool>()),
        |(t1, t2, payload, nested)| {
            let sizes = HeaderSizes::default();
            let p = Packet::user(1, 0, 0, NodeId(1), NodeId(2), payload, SimTime::ZERO);
            let a = TunnelRef {
                teid: Teid(t1),
                endpoint: NodeId(3),
            };
            let b = TunnelRef {
                teid: Teid(t2),
                endpoint: NodeId(4),
            };
            let mut q = encapsulate(p.clone(), &a, &sizes).unwrap();
            if nested {
                q = encapsulate(q, &b, &sizes).unwrap();
                prop_assert_eq!(q.wire_size(), payload + 16);
                q = decapsulate(q, b.teid).unwrap();
            }
            prop_assert_eq!(decapsulate(q, a.teid).unwrap(), p);
            Ok(())
        },
    ));

    checks.push(suite("nesting depth bound", common::params(), |p| {
        let trace = run(&common::small_scenario(&p), RunOptions::mode(p.mode)).unwrap();
        prop_assert!(audit::max_depth(&trace) <= 2);
        let profile = audit::backhaul_header_profile(&trace);
        // depth 2 on the backhaul: session GTP over F1-U, or BAP over F1-U
        let expected = match p.mode {
            PathMode::UpfReroute => (2, 2),
            PathMode::BapBypass => (2, 1),
        };
        prop_assert_eq!(profile.into_iter().collect::<Vec<_>>(), vec![expected]);
        Ok(())
    }));

    checks.push(suite("per-flow conservation", common::params(), |p| {
        let trace = run(&common::small_scenario(&p), RunOptions::mode(p.mode)).unwrap();
        let v = audit::conservation(&trace);
        prop_assert!(v.is_empty(), "{:?}", v);
        let v = audit::protocol_ordering(&trace);
        prop_assert!(v.is_empty(), "{:?}", v);
        Ok(())
    }));

    checks.push(suite("throughput within bottleneck", common::params(), |p| {
        let trace = run(&common::small_scenario(&p), RunOptions::mode(p.mode)).unwrap();
        for f in &trace.flows {
            let Some(cap) = audit::bottleneck_capacity(&trace, f.index) else { continue };
            let mut t0 = common::FLOW_START;
            while t0 + 0.25 <= common::SMALL_DURATION + 1e-9 {
                let g = trace.measure_throughput(&f.id, (t0, t0 + 0.25)).unwrap();
                prop_assert!(g <= cap * 1.01, "{} window {}: {} > {}", f.id, t0, g, cap);
                t0 += 0.05;
            }
        }
        Ok(())
    }));

    checks.push(suite(
        "capacity monotonicity",
        (
            prop_oneof![Just(common::n41()), Just(common::n78())],
            -10.0..40.0f64,
            1.0..5000.0f64,
            0.0..5000.0f64,
            0.0..20.0f64,
        ),
        |(carrier, tx, d, extra, boost)| {
            let p = radio::RadioParams::default();
            let cap = |tx: f64, d: f64| {
                let snr = radio::snr(&carrier, tx, d, &p);
                radio::shannon_capacity(carrier.bandwidth, snr, radio::Direction::Downlink, &p)
            };
            prop_assert!(cap(tx, d + extra) <= cap(tx, d));
            prop_assert!(cap(tx + boost, d) >= cap(tx, d));
            Ok(())
        },
    ));

    checks.push(suite("trace determinism", common::params(), |p| {
        let s = common::small_scenario(&p);
        let a = run(&s, RunOptions::mode(p.mode)).unwrap().digest();
        let b = run(&s, RunOptions::mode(p.mode)).unwrap().digest();
        prop_assert_eq!(a, b);
        Ok(())
    }));

    Outcome::new(checks)
}

fn criterion_6(runs: &[(String, Trace)]) -> Outcome {
    let mut checks = Vec::new();
    for (name, trace) in runs {
        let v = audit::protocol_ordering(trace);
        let early_user = count_user_before_connect(trace);
        checks.push((
            v.is_empty() && early_user == 0,
            format!("{name}: {} ordering violations", v.len()),
        ));
    }
    Outcome::new(checks)
}

/// Independent recount: user-plane forwarding events before the flow's UE
/// reached connected.
fn count_user_before_connect(trace: &Trace) -> usize {
    let mut connected_at: BTreeMap<NodeId, u64> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::StateTransition {
            t_ns,
            entity: iab_sim::f1ap::Entity::UeContext(ue),
            to,
            ..
        } = e
        {
            if to == "connected" {
                connected_at.entry(*ue).or_insert(*t_ns);
            }
        }
    }
    let ue_of = |f: u32| {
        let fl = &trace.flows[f as usize];
        if trace.node_name(fl.src) == Some("upf") {
            fl.dst
        } else {
            fl.src
        }
    };
    trace
        .events
        .iter()
        .filter(|e| match e {
            TraceEvent::Forward { t_ns, flow: Some(f), .. } | TraceEvent::Deliver { t_ns, flow: Some(f), .. } => {
                connected_at.get(&ue_of(*f)).is_none_or(|c| t_ns < c)
            }
            _ => false,
        })
        .count()
}

fn main() {
    let mut runs = Vec::new();
    let results = [
        ("1 F1 path via UPF reroute", criterion_1(&mut runs)),
        ("2 BAP bypass", criterion_2(&mut runs)),
        ("3 coverage extension", criterion_3(&mut runs)),
        ("4 UE2 downlink throughput", criterion_4(&mut runs)),
        ("5 property suites", criterion_5()),
        ("6 protocol ordering", criterion_6(&runs)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "criterion {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
