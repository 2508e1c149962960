//! User-plane tunneling: TEIDs, the explicit header stack carried by every
//! packet, F1 transport paths and per-node routing tables.

mod path;
mod routing;

pub use path::{build_f1_transport_path, Path, PathMode};
pub use routing::{
    forward, install_routes, install_ue_routes, Forwarded, RouteAction, RouteEntry, RouteMatch,
    RoutingTable, Transport,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::f1ap::F1Message;
use crate::time::SimTime;
use crate::topology::NodeId;

/// Deepest header stack the architecture can produce: a UE's F1-U header
/// inside the IAB-MT's session tunnel (or BAP header).
pub const MAX_HEADER_DEPTH: usize = 2;

pub const DEFAULT_TTL: u8 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TunnelError {
    #[error("TEID space exhausted at {0}")]
    Exhausted(NodeId),
    #[error("header stack already at depth {0}")]
    DepthExceeded(usize),
    #[error("outer TEID {found} does not match expected {expected}")]
    TeidMismatch { expected: Teid, found: Teid },
    #[error("header stack is empty")]
    EmptyStack,
    #[error("outer header is not GTP")]
    NotGtp,
    #[error("outer BAP route {found} does not match expected {expected}")]
    BapMismatch { expected: BapRouteId, found: BapRouteId },
    #[error("IAB-MT PDU session for {0} not established")]
    SessionNotEstablished(NodeId),
    #[error("F1 association of donor DU {0} not active")]
    AssociationNotActive(NodeId),
    #[error("{0} is not a DU that terminates an F1 transport path")]
    NotAnF1Endpoint(NodeId),
    #[error("conflicting route at {node} for {matcher}")]
    ConflictingEntry { node: NodeId, matcher: RouteMatch },
    #[error("no route at {node}")]
    NoRoute { node: NodeId },
    #[error("TTL expired at {node}")]
    TtlExpired { node: NodeId },
    #[error("path hop {0} -> {1} has no link")]
    MissingHop(NodeId, NodeId),
    #[error("transport does not match path mode")]
    TransportMismatch,
}

/// GTP tunnel endpoint identifier. Zero is reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Teid(pub u32);

impl fmt::Display for Teid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BapRouteId(pub u16);

impl fmt::Display for BapRouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bap{}", self.0)
    }
}

/// A unidirectional GTP association, named by the TEID its receiving
/// endpoint allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TunnelRef {
    pub teid: Teid,
    /// Receiving endpoint.
    pub endpoint: NodeId,
}

/// Issues TEIDs per receiving endpoint. Values are drawn from a stream
/// seeded by (scenario seed, endpoint), so the same call sequence yields the
/// same TEIDs and a different seed yields different ones.
#[derive(Debug, Clone)]
pub struct TeidAllocator {
    seed: u64,
    endpoints: BTreeMap<NodeId, (ChaCha8Rng, BTreeSet<u32>)>,
}

impl TeidAllocator {
    pub fn new(seed: u64) -> Self {
        TeidAllocator {
            seed,
            endpoints: BTreeMap::new(),
        }
    }

    pub fn allocate(&mut self, endpoint: NodeId) -> Result<Teid, TunnelError> {
        let seed = self.seed;
        let (rng, issued) = self.endpoints.entry(endpoint).or_insert_with(|| {
            let mix = seed ^ (endpoint.0 as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            (ChaCha8Rng::seed_from_u64(mix), BTreeSet::new())
        });
        if issued.len() as u64 >= u32::MAX as u64 {
            return Err(TunnelError::Exhausted(endpoint));
        }
        loop {
            let v: u32 = rng.gen();
            if v != 0 && issued.insert(v) {
                return Ok(Teid(v));
            }
        }
    }

    pub fn allocate_tunnel(&mut self, endpoint: NodeId) -> Result<TunnelRef, TunnelError> {
        Ok(TunnelRef {
            teid: self.allocate(endpoint)?,
            endpoint,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderKind {
    Gtp {
        teid: Teid,
        /// Receiving endpoint; stands in for the outer IP destination.
        endpoint: NodeId,
        /// Bytes of the enclosed packet.
        length: u32,
    },
    Bap {
        route_id: BapRouteId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub kind: HeaderKind,
    pub size: u32,
}

impl Header {
    pub fn teid(&self) -> Option<Teid> {
        match self.kind {
            HeaderKind::Gtp { teid, .. } => Some(teid),
            HeaderKind::Bap { .. } => None,
        }
    }

    pub fn is_bap(&self) -> bool {
        matches!(self.kind, HeaderKind::Bap { .. })
    }
}

/// Configured header sizes, bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderSizes {
    pub gtp: u32,
    pub bap: u32,
}

impl Default for HeaderSizes {
    fn default() -> Self {
        HeaderSizes { gtp: 8, bap: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    /// Datagram of a configured flow.
    User { flow: u32, seq: u64 },
    /// F1AP message between a CU and a DU.
    Control(F1Message),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub kind: PacketKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_size: u32,
    /// Outermost header last.
    pub header_stack: Vec<Header>,
    pub created_at: SimTime,
    /// Nodes that handled the packet inside an F1 transport: for user
    /// packets from the node that pushed the F1-U header to the node that
    /// popped it, for F1 messages from sender to receiver.
    pub hop_log: Vec<NodeId>,
    pub ttl: u8,
}

impl Packet {
    pub fn user(id: u64, flow: u32, seq: u64, src: NodeId, dst: NodeId, payload_size: u32, now: SimTime) -> Packet {
        Packet {
            id,
            kind: PacketKind::User { flow, seq },
            src,
            dst,
            payload_size,
            header_stack: Vec::new(),
            created_at: now,
            hop_log: Vec::new(),
            ttl: DEFAULT_TTL,
        }
    }

    pub fn control(id: u64, msg: F1Message, src: NodeId, dst: NodeId, payload_size: u32, now: SimTime) -> Packet {
        Packet {
            id,
            kind: PacketKind::Control(msg),
            src,
            dst,
            payload_size,
            header_stack: Vec::new(),
            created_at: now,
            hop_log: Vec::new(),
            ttl: DEFAULT_TTL,
        }
    }

    pub fn wire_size(&self) -> u32 {
        self.payload_size + self.header_stack.iter().map(|h| h.size).sum::<u32>()
    }

    pub fn depth(&self) -> usize {
        self.header_stack.len()
    }

    pub fn outer(&self) -> Option<&Header> {
        self.header_stack.last()
    }

    pub fn is_control(&self) -> bool {
        matches!(self.kind, PacketKind::Control(_))
    }

    pub fn flow(&self) -> Option<u32> {
        match self.kind {
            PacketKind::User { flow, .. } => Some(flow),
            PacketKind::Control(_) => None,
        }
    }

    /// TEIDs in stack order, innermost first.
    pub fn teids(&self) -> Vec<Teid> {
        self.header_stack.iter().filter_map(Header::teid).collect()
    }
}

/// Pushes a GTP header for `tunnel`.
pub fn encapsulate(mut packet: Packet, tunnel: &TunnelRef, sizes: &HeaderSizes) -> Result<Packet, TunnelError> {
    if packet.depth() >= MAX_HEADER_DEPTH {
        return Err(TunnelError::DepthExceeded(packet.depth()));
    }
    let length = packet.wire_size();
    packet.header_stack.push(Header {
        kind: HeaderKind::Gtp {
            teid: tunnel.teid,
            endpoint: tunnel.endpoint,
            length,
        },
        size: sizes.gtp,
    });
    Ok(packet)
}

/// Pops the outer GTP header if it carries `expected`.
pub fn decapsulate(mut packet: Packet, expected: Teid) -> Result<Packet, TunnelError> {
    match packet.outer() {
        None => Err(TunnelError::EmptyStack),
        Some(Header {
            kind: HeaderKind::Gtp { teid, .. },
            ..
        }) => {
            if *teid != expected {
                return Err(TunnelError::TeidMismatch {
                    expected,
                    found: *teid,
                });
            }
            packet.header_stack.pop();
            Ok(packet)
        }
        Some(_) => Err(TunnelError::NotGtp),
    }
}

pub fn push_bap(mut packet: Packet, route_id: BapRouteId, sizes: &HeaderSizes) -> Result<Packet, TunnelError> {
    if packet.depth() >= MAX_HEADER_DEPTH {
        return Err(TunnelError::DepthExceeded(packet.depth()));
    }
    packet.header_stack.push(Header {
        kind: HeaderKind::Bap { route_id },
        size: sizes.bap,
    });
    Ok(packet)
}

pub fn pop_bap(mut packet: Packet, expected: BapRouteId) -> Result<Packet, TunnelError> {
    match packet.outer().map(|h| h.kind) {
        None => Err(TunnelError::EmptyStack),
        Some(HeaderKind::Bap { route_id }) if route_id == expected => {
            packet.header_stack.pop();
            Ok(packet)
        }
        Some(HeaderKind::Bap { route_id }) => Err(TunnelError::BapMismatch {
            expected,
            found: route_id,
        }),
        Some(HeaderKind::Gtp { .. }) => Err(TunnelError::BapMismatch {
            expected,
            found: BapRouteId(0),
        }),
    }
}
