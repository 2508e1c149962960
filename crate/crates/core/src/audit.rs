//! Checks over a full-level trace. Each returns the list of violations
//! found; an empty list means the property holds for the run.

use std::collections::{BTreeMap, BTreeSet};

use crate::f1ap::Entity;
use crate::topology::{LinkId, NodeId, Role};
use crate::trace::{Trace, TraceEvent, TraceLevel};

fn require_full(trace: &Trace) -> Option<String> {
    (trace.header.trace_level != TraceLevel::Full).then(|| "trace has no per-packet events".to_string())
}

fn ue_of_flow(trace: &Trace, flow: u32) -> Option<NodeId> {
    let f = trace.flows.iter().find(|f| f.index == flow)?;
    let role = |n| trace.nodes.iter().find(|x| x.id == n).map(|x| x.role);
    Some(if role(f.src) == Some(Role::Upf) { f.dst } else { f.src })
}

fn is_downlink(trace: &Trace, flow: u32) -> bool {
    let Some(f) = trace.flows.iter().find(|f| f.index == flow) else { return false };
    trace.nodes.iter().any(|n| n.id == f.src && n.role == Role::Upf)
}

/// User packets move only while their UE is connected, and F1 messages are
/// only delivered on associations in setup or active state.
pub fn protocol_ordering(trace: &Trace) -> Vec<String> {
    if let Some(e) = require_full(trace) {
        return vec![e];
    }
    let mut ue_state: BTreeMap<NodeId, String> = BTreeMap::new();
    let mut assoc_state: BTreeMap<NodeId, String> = BTreeMap::new();
    let mut out = Vec::new();
    for ev in &trace.events {
        match ev {
            TraceEvent::StateTransition { entity, to, .. } => match entity {
                Entity::UeContext(n) => {
                    ue_state.insert(*n, to.clone());
                }
                Entity::Association(n) => {
                    assoc_state.insert(*n, to.clone());
                }
                Entity::PduSession(_) => {}
            },
            TraceEvent::Forward {
                t_ns, flow: Some(f), packet, ..
            }
            | TraceEvent::Deliver {
                t_ns, flow: Some(f), packet, ..
            } => {
                let ue = ue_of_flow(trace, *f);
                let connected = ue.is_some_and(|u| ue_state.get(&u).map(String::as_str) == Some("connected"));
                if !connected {
                    out.push(format!("t={t_ns}ns: packet {packet} of flow {f} moved before its UE connected"));
                }
            }
            TraceEvent::Deliver {
                t_ns,
                association: Some(du),
                packet,
                ..
            } => {
                let s = assoc_state.get(du).map(String::as_str);
                if !matches!(s, Some("setup_requested") | Some("active")) {
                    out.push(format!(
                        "t={t_ns}ns: F1 message {packet} delivered on association {du} in state {s:?}"
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

/// Every delivered user packet and F1 message carries a hop log equal to
/// the installed transport path of the DU involved: uplink as installed,
/// downlink reversed.
pub fn hop_log_conformance(trace: &Trace) -> Vec<String> {
    if let Some(e) = require_full(trace) {
        return vec![e];
    }
    let mut paths: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut serving: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut out = Vec::new();
    for ev in &trace.events {
        match ev {
            TraceEvent::PathInstalled { du, hops, .. } => {
                paths.insert(*du, hops.clone());
            }
            TraceEvent::StateTransition {
                entity: Entity::UeContext(ue),
                peer: Some(du),
                ..
            } => {
                serving.insert(*ue, *du);
            }
            TraceEvent::Deliver {
                t_ns,
                packet,
                flow,
                kind,
                association,
                hop_log,
                ..
            } => {
                let (du, uplink) = match (flow, kind, association) {
                    (Some(f), _, _) => match ue_of_flow(trace, *f).and_then(|u| serving.get(&u)) {
                        Some(du) => (*du, !is_downlink(trace, *f)),
                        None => {
                            out.push(format!("t={t_ns}ns: packet {packet} of unattached flow {f}"));
                            continue;
                        }
                    },
                    (None, Some(k), Some(du)) => (*du, k.is_uplink()),
                    _ => continue,
                };
                let Some(path) = paths.get(&du) else {
                    out.push(format!("t={t_ns}ns: packet {packet}: no path installed for {du}"));
                    continue;
                };
                let expected: Vec<NodeId> = if uplink {
                    path.clone()
                } else {
                    path.iter().rev().copied().collect()
                };
                if *hop_log != expected {
                    out.push(format!(
                        "t={t_ns}ns: packet {packet} hop log {hop_log:?}, expected {expected:?}"
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

/// Header stacks seen by user packets on donor-DU to IAB-MT radio links, as
/// (depth, GTP headers) pairs.
pub fn backhaul_header_profile(trace: &Trace) -> BTreeSet<(usize, usize)> {
    let backhaul: BTreeSet<LinkId> = trace
        .links
        .iter()
        .filter(|l| l.is_backhaul_radio(&trace.nodes))
        .map(|l| l.id)
        .collect();
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Forward {
                flow: Some(_),
                link,
                depth,
                teids,
                ..
            } if backhaul.contains(link) => Some((*depth, teids.len())),
            _ => None,
        })
        .collect()
}

/// Deepest header stack any packet carried on any link.
pub fn max_depth(trace: &Trace) -> usize {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Forward { depth, .. } | TraceEvent::Drop { depth, .. } => Some(*depth),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Per flow: injected = delivered + dropped + in flight, and the summary
/// counters agree with the packet events.
pub fn conservation(trace: &Trace) -> Vec<String> {
    let full = trace.header.trace_level == TraceLevel::Full;
    let mut counts: BTreeMap<u32, [u64; 3]> = BTreeMap::new();
    for e in &trace.events {
        match e {
            TraceEvent::Inject { flow, .. } => counts.entry(*flow).or_default()[0] += 1,
            TraceEvent::Deliver { flow: Some(f), .. } => counts.entry(*f).or_default()[1] += 1,
            TraceEvent::Drop { flow: Some(f), .. } => counts.entry(*f).or_default()[2] += 1,
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (i, fs) in trace.summary.flows.iter().enumerate() {
        if fs.injected != fs.delivered + fs.dropped + fs.in_flight {
            out.push(format!(
                "{}: injected {} != delivered {} + dropped {} + in flight {}",
                fs.flow_id, fs.injected, fs.delivered, fs.dropped, fs.in_flight
            ));
        }
        if full {
            let c = counts.get(&(i as u32)).copied().unwrap_or_default();
            if c != [fs.injected, fs.delivered, fs.dropped] {
                out.push(format!(
                    "{}: events count {:?}, summary {:?}",
                    fs.flow_id,
                    c,
                    [fs.injected, fs.delivered, fs.dropped]
                ));
            }
        }
        if let Some(d) = trace.deliveries.get(i) {
            if d.times.len() as u64 != fs.delivered {
                out.push(format!("{}: delivery log length mismatch", fs.flow_id));
            }
        }
    }
    out
}

/// Every node a flow's packets were forwarded from, in first-seen order
/// per packet; used to find the links a flow crosses.
pub fn links_used_by_flow(trace: &Trace, flow: u32) -> BTreeSet<(LinkId, NodeId)> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Forward {
                flow: Some(f),
                link,
                node,
                ..
            } if *f == flow => Some((*link, *node)),
            _ => None,
        })
        .collect()
}

/// Lowest sending-side capacity among the links a flow used, bit/s.
pub fn bottleneck_capacity(trace: &Trace, flow: u32) -> Option<f64> {
    links_used_by_flow(trace, flow)
        .into_iter()
        .filter_map(|(l, sender)| trace.link(l).and_then(|li| li.capacity_from(sender)))
        .min_by(|a, b| a.total_cmp(b))
}

/// Sequence numbers delivered per flow, sorted.
pub fn delivered_multiset(trace: &Trace) -> BTreeMap<String, Vec<(u64, u32)>> {
    trace
        .deliveries
        .iter()
        .map(|d| {
            let mut v: Vec<(u64, u32)> = d.seqs.iter().copied().zip(d.payloads.iter().copied()).collect();
            v.sort_unstable();
            (d.flow_id.clone(), v)
        })
        .collect()
}
