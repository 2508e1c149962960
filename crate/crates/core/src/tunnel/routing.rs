use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    decapsulate, encapsulate, pop_bap, push_bap, BapRouteId, HeaderKind, HeaderSizes, Packet,
    Path, PathMode, Teid, TunnelError, TunnelRef,
};
use crate::radio::Direction;
use crate::topology::{NodeId, Role, Scenario};

/// What a routing entry keys on. Lookup uses the outer header when there is
/// one, otherwise the packet's own addressing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMatch {
    /// Outer GTP header carries this TEID.
    Teid(Teid),
    /// Outer GTP endpoint, or the final destination of an unencapsulated
    /// packet.
    Destination(NodeId),
    /// Unencapsulated packet that originated at this UE.
    Origin(NodeId),
    /// Outer BAP header carries this route.
    Bap(BapRouteId),
}

impl fmt::Display for RouteMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteMatch::Teid(t) => write!(f, "teid {t}"),
            RouteMatch::Destination(n) => write!(f, "destination {n}"),
            RouteMatch::Origin(n) => write!(f, "origin {n}"),
            RouteMatch::Bap(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteAction {
    Forward,
    PushGtp(TunnelRef),
    PopGtp(Teid),
    PushBap(BapRouteId),
    PopBap(BapRouteId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub at_node: NodeId,
    #[serde(rename = "match")]
    pub matcher: RouteMatch,
    pub next_hop: NodeId,
    pub action: RouteAction,
}

/// Forwarding state of every node, at most one entry per (node, match).
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    entries: BTreeMap<(NodeId, RouteMatch), RouteEntry>,
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Re-inserting an identical entry is a no-op; a different entry under an
    /// existing key is a conflict.
    pub fn insert(&mut self, entry: RouteEntry) -> Result<(), TunnelError> {
        let key = (entry.at_node, entry.matcher);
        match self.entries.get(&key) {
            Some(existing) if *existing == entry => Ok(()),
            Some(_) => Err(TunnelError::ConflictingEntry {
                node: entry.at_node,
                matcher: entry.matcher,
            }),
            None => {
                self.entries.insert(key, entry);
                Ok(())
            }
        }
    }

    pub fn get(&self, node: NodeId, matcher: RouteMatch) -> Option<&RouteEntry> {
        self.entries.get(&(node, matcher))
    }

    pub fn entries_at(&self, node: NodeId) -> impl Iterator<Item = &RouteEntry> {
        self.entries
            .range((node, RouteMatch::Teid(Teid(0)))..)
            .take_while(move |((n, _), _)| *n == node)
            .map(|(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    /// Entry that applies to `packet` at `node`.
    pub fn lookup(&self, node: NodeId, packet: &Packet) -> Option<&RouteEntry> {
        match packet.outer().map(|h| h.kind) {
            Some(HeaderKind::Gtp { teid, endpoint, .. }) => self
                .get(node, RouteMatch::Teid(teid))
                .or_else(|| self.get(node, RouteMatch::Destination(endpoint))),
            Some(HeaderKind::Bap { route_id }) => self.get(node, RouteMatch::Bap(route_id)),
            None => self
                .get(node, RouteMatch::Origin(packet.src))
                .or_else(|| self.get(node, RouteMatch::Destination(packet.dst))),
        }
    }
}

/// Encapsulation an F1 transport path relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Donor DU wired straight to the CU.
    Direct,
    /// IAB-MT PDU session tunnels. Uplink terminates at the UPF, downlink at
    /// the IAB-MT.
    Session {
        uplink: TunnelRef,
        downlink: TunnelRef,
    },
    Bap {
        uplink: BapRouteId,
        downlink: BapRouteId,
    },
}

/// Installs the entries that carry F1 traffic along `path`, one per
/// non-terminal hop. Returns the entries for this path, including ones that
/// were already present.
pub fn install_routes(
    table: &mut RoutingTable,
    topology: &Scenario,
    path: &Path,
    transport: &Transport,
) -> Result<Vec<RouteEntry>, TunnelError> {
    path.check_links(topology)?;
    match (path.len(), path.mode, transport) {
        (2, _, Transport::Direct) => {}
        (n, PathMode::UpfReroute, Transport::Session { .. }) if n > 2 => {}
        (n, PathMode::BapBypass, Transport::Bap { .. }) if n > 2 => {}
        _ => return Err(TunnelError::TransportMismatch),
    }
    let role = |n: NodeId| topology.node(n).map(|n| n.role);
    let uplink = path.direction == Direction::Uplink;
    let terminus = path.terminus();

    // Outer transport header as the packet leaves each hop.
    #[derive(Clone, Copy)]
    enum Outer {
        None,
        Gtp(Teid),
        Bap(BapRouteId),
    }
    let mut outer = Outer::None;
    let mut installed = Vec::with_capacity(path.len() - 1);
    for (at, next) in path.legs() {
        let matcher = match outer {
            Outer::None => RouteMatch::Destination(terminus),
            Outer::Gtp(t) => RouteMatch::Teid(t),
            Outer::Bap(r) => RouteMatch::Bap(r),
        };
        let r = role(at);
        let action = match (transport, outer, r, uplink) {
            (Transport::Session { uplink: t, .. }, Outer::None, Some(Role::IabMt), true) => {
                outer = Outer::Gtp(t.teid);
                RouteAction::PushGtp(*t)
            }
            (Transport::Session { uplink: t, .. }, Outer::Gtp(_), Some(Role::Upf), true) => {
                outer = Outer::None;
                RouteAction::PopGtp(t.teid)
            }
            (Transport::Session { downlink: t, .. }, Outer::None, Some(Role::Upf), false) => {
                outer = Outer::Gtp(t.teid);
                RouteAction::PushGtp(*t)
            }
            (Transport::Session { downlink: t, .. }, Outer::Gtp(_), Some(Role::IabMt), false) => {
                outer = Outer::None;
                RouteAction::PopGtp(t.teid)
            }
            (Transport::Bap { uplink: b, .. }, Outer::None, Some(Role::IabMt), true) => {
                outer = Outer::Bap(*b);
                RouteAction::PushBap(*b)
            }
            (Transport::Bap { uplink: b, .. }, Outer::Bap(_), Some(Role::DonorDu), true) => {
                outer = Outer::None;
                RouteAction::PopBap(*b)
            }
            (Transport::Bap { downlink: b, .. }, Outer::None, Some(Role::DonorDu), false) => {
                outer = Outer::Bap(*b);
                RouteAction::PushBap(*b)
            }
            (Transport::Bap { downlink: b, .. }, Outer::Bap(_), Some(Role::IabMt), false) => {
                outer = Outer::None;
                RouteAction::PopBap(*b)
            }
            _ => RouteAction::Forward,
        };
        installed.push(RouteEntry {
            at_node: at,
            matcher,
            next_hop: next,
            action,
        });
    }
    for e in &installed {
        table.insert(*e)?;
    }
    Ok(installed)
}

/// Per-UE entries: the UPF hands downlink datagrams to the CU, the CU wraps
/// them in the UE's F1-U tunnel toward the serving DU, and the DU unwraps
/// and sends them over the access link. Uplink mirrors this.
#[allow(clippy::too_many_arguments)]
pub fn install_ue_routes(
    table: &mut RoutingTable,
    ue: NodeId,
    du: NodeId,
    cu: NodeId,
    upf: NodeId,
    uplink_path: &Path,
    drb_uplink: TunnelRef,
    drb_downlink: TunnelRef,
) -> Result<Vec<RouteEntry>, TunnelError> {
    let downlink_path = uplink_path.reversed();
    let entry = |at_node, matcher, next_hop, action| RouteEntry {
        at_node,
        matcher,
        next_hop,
        action,
    };
    let entries = [
        entry(upf, RouteMatch::Destination(ue), cu, RouteAction::Forward),
        entry(
            cu,
            RouteMatch::Destination(ue),
            downlink_path.hops[1],
            RouteAction::PushGtp(drb_downlink),
        ),
        entry(
            du,
            RouteMatch::Teid(drb_downlink.teid),
            ue,
            RouteAction::PopGtp(drb_downlink.teid),
        ),
        entry(ue, RouteMatch::Destination(upf), du, RouteAction::Forward),
        entry(
            du,
            RouteMatch::Origin(ue),
            uplink_path.hops[1],
            RouteAction::PushGtp(drb_uplink),
        ),
        entry(
            cu,
            RouteMatch::Teid(drb_uplink.teid),
            upf,
            RouteAction::PopGtp(drb_uplink.teid),
        ),
    ];
    for e in &entries {
        table.insert(*e)?;
    }
    Ok(entries.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forwarded {
    Next { next_hop: NodeId, packet: Packet },
    /// `node` is the packet's final destination.
    Consumed(Packet),
}

/// One forwarding step at `node`: apply the matching entry's header action
/// and pick the next hop. On error the packet is handed back for drop
/// accounting.
pub fn forward(
    table: &RoutingTable,
    node: NodeId,
    mut packet: Packet,
    sizes: &HeaderSizes,
) -> Result<Forwarded, (TunnelError, Packet)> {
    if packet.header_stack.is_empty() && packet.dst == node {
        if packet.is_control() {
            packet.hop_log.push(node);
        }
        return Ok(Forwarded::Consumed(packet));
    }
    let Some(entry) = table.lookup(node, &packet).copied() else {
        return Err((TunnelError::NoRoute { node }, packet));
    };
    if packet.ttl == 0 {
        return Err((TunnelError::TtlExpired { node }, packet));
    }
    let tunneled_before = !packet.header_stack.is_empty();
    let keep = packet.clone();
    let result = match entry.action {
        RouteAction::Forward => Ok(packet),
        RouteAction::PushGtp(t) => encapsulate(packet, &t, sizes),
        RouteAction::PopGtp(teid) => decapsulate(packet, teid),
        RouteAction::PushBap(r) => push_bap(packet, r, sizes),
        RouteAction::PopBap(r) => pop_bap(packet, r),
    };
    let mut packet = result.map_err(|e| (e, keep))?;
    if packet.is_control() || tunneled_before || !packet.header_stack.is_empty() {
        packet.hop_log.push(node);
    }
    packet.ttl -= 1;
    Ok(Forwarded::Next {
        next_hop: entry.next_hop,
        packet,
    })
}
