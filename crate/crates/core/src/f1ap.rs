//! F1 control plane: CU-DU association setup, UE context creation, the
//! IAB-MT PDU session and DU reconfiguration.
//!
//! Each state machine only moves along its allowed edges; every accepted
//! move yields a [`Transition`] for the trace. The procedures themselves
//! (message exchange, timers) are driven by the engine.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Carrier, NodeId};
use crate::tunnel::{Path, TunnelRef};

/// Fixed size of every F1AP message on the wire, bytes.
pub const CONTROL_MESSAGE_SIZE: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum F1Error {
    #[error("transport to {0} went down during the handshake")]
    TransportDown(NodeId),
    #[error("{ue} is not covered by {du}")]
    NotCovered { ue: NodeId, du: NodeId },
    #[error("F1 association of {0} is not active")]
    DuNotReady(NodeId),
    #[error("IAB-MT {0} is not attached")]
    MtDetached(NodeId),
    #[error("IAB-MT {0} already has a PDU session")]
    AlreadyEstablished(NodeId),
    #[error("F1 association of {0} is not active")]
    NotActive(NodeId),
    #[error("{entity}: no transition {from} -> {to}")]
    InvalidTransition {
        entity: Entity,
        from: &'static str,
        to: &'static str,
    },
    #[error("F1 transport path is empty")]
    EmptyTransport,
    #[error("session tunnels reuse TEID")]
    DuplicateTeid,
    #[error("no F1 association for {0}")]
    UnknownAssociation(NodeId),
    #[error("no UE context for {0}")]
    UnknownUe(NodeId),
}

/// Owner of a state machine, for trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "node", rename_all = "snake_case")]
pub enum Entity {
    Association(NodeId),
    UeContext(NodeId),
    PduSession(NodeId),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Association(n) => write!(f, "f1[{n}]"),
            Entity::UeContext(n) => write!(f, "ue_ctx[{n}]"),
            Entity::PduSession(n) => write!(f, "pdu[{n}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub entity: Entity,
    pub from: &'static str,
    pub to: &'static str,
    pub cause: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssocState {
    Idle,
    SetupRequested,
    Active,
    Released,
}

impl AssocState {
    pub fn label(self) -> &'static str {
        match self {
            AssocState::Idle => "idle",
            AssocState::SetupRequested => "setup_requested",
            AssocState::Active => "active",
            AssocState::Released => "released",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Association {
    pub cu: NodeId,
    pub du: NodeId,
    pub state: AssocState,
    /// Uplink transport path; set from `SetupRequested` onward.
    pub transport: Option<Path>,
}

impl F1Association {
    pub fn new(cu: NodeId, du: NodeId) -> Self {
        F1Association {
            cu,
            du,
            state: AssocState::Idle,
            transport: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.state == AssocState::Active
    }

    fn move_to(&mut self, to: AssocState, cause: &str) -> Result<Transition, F1Error> {
        use AssocState::*;
        let ok = matches!(
            (self.state, to),
            (Idle, SetupRequested) | (SetupRequested, Active) | (SetupRequested, Idle) | (Active, Released)
        );
        if !ok {
            return Err(F1Error::InvalidTransition {
                entity: Entity::Association(self.du),
                from: self.state.label(),
                to: to.label(),
            });
        }
        let from = self.state.label();
        self.state = to;
        Ok(Transition {
            entity: Entity::Association(self.du),
            from,
            to: to.label(),
            cause: cause.to_string(),
        })
    }

    pub fn request_setup(&mut self, path: Path) -> Result<Transition, F1Error> {
        if path.is_empty() {
            return Err(F1Error::EmptyTransport);
        }
        let t = self.move_to(AssocState::SetupRequested, "f1_setup_request")?;
        self.transport = Some(path);
        Ok(t)
    }

    pub fn complete_setup(&mut self) -> Result<Transition, F1Error> {
        self.move_to(AssocState::Active, "f1_setup_response")
    }

    /// Handshake failed (link lost or retries exhausted); back to idle.
    pub fn abort_setup(&mut self, cause: &str) -> Result<Transition, F1Error> {
        let t = self.move_to(AssocState::Idle, cause)?;
        self.transport = None;
        Ok(t)
    }

    pub fn release(&mut self, cause: &str) -> Result<Transition, F1Error> {
        self.move_to(AssocState::Released, cause)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeState {
    Detached,
    Attaching,
    Connected,
}

impl UeState {
    pub fn label(self) -> &'static str {
        match self {
            UeState::Detached => "detached",
            UeState::Attaching => "attaching",
            UeState::Connected => "connected",
        }
    }
}

/// The F1-U tunnel pair of a UE's data radio bearer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrbTunnels {
    /// Terminates at the CU.
    pub uplink: TunnelRef,
    /// Terminates at the serving DU.
    pub downlink: TunnelRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeContext {
    pub ue: NodeId,
    pub serving_du: NodeId,
    pub cu: NodeId,
    pub state: UeState,
    pub drb_tunnel: Option<DrbTunnels>,
}

impl UeContext {
    fn transition(&mut self, to: UeState, cause: &str) -> Transition {
        let from = self.state.label();
        self.state = to;
        Transition {
            entity: Entity::UeContext(self.ue),
            from,
            to: to.label(),
            cause: cause.to_string(),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.state == UeState::Connected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Requested,
    Established,
    Released,
}

impl SessionState {
    pub fn label(self) -> &'static str {
        match self {
            SessionState::Requested => "requested",
            SessionState::Established => "established",
            SessionState::Released => "released",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PduSession {
    pub mt: NodeId,
    pub upf: NodeId,
    /// IAB-MT to UPF.
    pub uplink_tunnel: TunnelRef,
    /// UPF to IAB-MT.
    pub downlink_tunnel: TunnelRef,
    pub state: SessionState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1MessageKind {
    SetupRequest,
    SetupResponse,
    UeContextSetupRequest,
    UeContextSetupResponse,
    DuConfigUpdate,
    DuConfigUpdateAck,
}

impl F1MessageKind {
    /// Message sent by the DU toward the CU.
    pub fn is_uplink(self) -> bool {
        matches!(
            self,
            F1MessageKind::SetupRequest
                | F1MessageKind::UeContextSetupResponse
                | F1MessageKind::DuConfigUpdate
        )
    }

    /// The answer that completes the procedure this message starts.
    pub fn response(self) -> Option<F1MessageKind> {
        match self {
            F1MessageKind::SetupRequest => Some(F1MessageKind::SetupResponse),
            F1MessageKind::UeContextSetupRequest => Some(F1MessageKind::UeContextSetupResponse),
            F1MessageKind::DuConfigUpdate => Some(F1MessageKind::DuConfigUpdateAck),
            _ => None,
        }
    }
}

/// Cell configuration carried in setup and update messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub band_label: String,
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub scs: f64,
}

impl From<&Carrier> for CellSummary {
    fn from(c: &Carrier) -> Self {
        CellSummary {
            band_label: c.band_label.clone(),
            center_frequency: c.center_frequency,
            bandwidth: c.bandwidth,
            scs: c.scs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Message {
    pub kind: F1MessageKind,
    /// Association key: the DU end.
    pub association: NodeId,
    /// Retransmission attempt, starting at 0.
    pub attempt: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

impl F1Message {
    pub fn new(kind: F1MessageKind, association: NodeId) -> Self {
        F1Message {
            kind,
            association,
            attempt: 0,
            cell: None,
            ue: None,
            cause: None,
        }
    }

    pub fn with_cell(mut self, c: &Carrier) -> Self {
        self.cell = Some(c.into());
        self
    }

    pub fn with_ue(mut self, ue: NodeId) -> Self {
        self.ue = Some(ue);
        self
    }
}

/// All control-plane state of a run, keyed by the owning node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlPlane {
    associations: BTreeMap<NodeId, F1Association>,
    ue_contexts: BTreeMap<NodeId, UeContext>,
    sessions: BTreeMap<NodeId, PduSession>,
}

impl ControlPlane {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn association(&self, du: NodeId) -> Option<&F1Association> {
        self.associations.get(&du)
    }

    pub fn association_mut(&mut self, du: NodeId) -> Option<&mut F1Association> {
        self.associations.get_mut(&du)
    }

    pub fn associations(&self) -> impl Iterator<Item = &F1Association> {
        self.associations.values()
    }

    pub fn ue_context(&self, ue: NodeId) -> Option<&UeContext> {
        self.ue_contexts.get(&ue)
    }

    pub fn ue_contexts(&self) -> impl Iterator<Item = &UeContext> {
        self.ue_contexts.values()
    }

    pub fn session(&self, mt: NodeId) -> Option<&PduSession> {
        self.sessions.get(&mt)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &PduSession> {
        self.sessions.values()
    }

    pub fn is_connected(&self, ue: NodeId) -> bool {
        self.ue_contexts.get(&ue).is_some_and(UeContext::is_connected)
    }

    /// Starts F1 setup of `du` over `transport_path` (uplink direction).
    /// Creates the association if needed.
    pub fn f1_setup(&mut self, cu: NodeId, du: NodeId, transport_path: Path) -> Result<Transition, F1Error> {
        self.associations
            .entry(du)
            .or_insert_with(|| F1Association::new(cu, du))
            .request_setup(transport_path)
    }

    pub fn f1_setup_complete(&mut self, du: NodeId) -> Result<Transition, F1Error> {
        self.associations
            .get_mut(&du)
            .ok_or(F1Error::UnknownAssociation(du))?
            .complete_setup()
    }

    pub fn f1_setup_failed(&mut self, du: NodeId, cause: &str) -> Result<Transition, F1Error> {
        self.associations
            .get_mut(&du)
            .ok_or(F1Error::UnknownAssociation(du))?
            .abort_setup(cause)
    }

    /// Begins attaching `ue` to `du`. `covered` is the radio model's verdict
    /// for the pair.
    pub fn ue_attach(&mut self, ue: NodeId, du: NodeId, cu: NodeId, covered: bool) -> Result<Transition, F1Error> {
        if !covered {
            return Err(F1Error::NotCovered { ue, du });
        }
        if !self.associations.get(&du).is_some_and(F1Association::is_active) {
            return Err(F1Error::DuNotReady(du));
        }
        let ctx = self.ue_contexts.entry(ue).or_insert(UeContext {
            ue,
            serving_du: du,
            cu,
            state: UeState::Detached,
            drb_tunnel: None,
        });
        if ctx.state != UeState::Detached {
            return Err(F1Error::InvalidTransition {
                entity: Entity::UeContext(ue),
                from: ctx.state.label(),
                to: UeState::Attaching.label(),
            });
        }
        ctx.serving_du = du;
        ctx.cu = cu;
        Ok(ctx.transition(UeState::Attaching, "ue_context_setup_request"))
    }

    /// Completes the attach with the UE's bearer tunnels.
    pub fn ue_connected(&mut self, ue: NodeId, drb: DrbTunnels) -> Result<Transition, F1Error> {
        let ctx = self.ue_contexts.get_mut(&ue).ok_or(F1Error::UnknownUe(ue))?;
        if ctx.state != UeState::Attaching {
            return Err(F1Error::InvalidTransition {
                entity: Entity::UeContext(ue),
                from: ctx.state.label(),
                to: UeState::Connected.label(),
            });
        }
        if !self
            .associations
            .get(&ctx.serving_du)
            .is_some_and(F1Association::is_active)
        {
            return Err(F1Error::DuNotReady(ctx.serving_du));
        }
        ctx.drb_tunnel = Some(drb);
        Ok(ctx.transition(UeState::Connected, "ue_context_setup_response"))
    }

    /// Attach gave up; the UE may try again later.
    pub fn ue_attach_failed(&mut self, ue: NodeId, cause: &str) -> Result<Transition, F1Error> {
        let ctx = self.ue_contexts.get_mut(&ue).ok_or(F1Error::UnknownUe(ue))?;
        if ctx.state != UeState::Attaching {
            return Err(F1Error::InvalidTransition {
                entity: Entity::UeContext(ue),
                from: ctx.state.label(),
                to: UeState::Detached.label(),
            });
        }
        ctx.drb_tunnel = None;
        Ok(ctx.transition(UeState::Detached, cause))
    }

    /// Requests the IAB-MT's PDU session with the given tunnels. The MT must
    /// be connected through `donor_du`.
    pub fn establish_pdu_session(
        &mut self,
        mt: NodeId,
        upf: NodeId,
        uplink_tunnel: TunnelRef,
        downlink_tunnel: TunnelRef,
    ) -> Result<Transition, F1Error> {
        if !self.is_connected(mt) {
            return Err(F1Error::MtDetached(mt));
        }
        if let Some(s) = self.sessions.get(&mt) {
            if s.state != SessionState::Released {
                return Err(F1Error::AlreadyEstablished(mt));
            }
        }
        if uplink_tunnel.teid == downlink_tunnel.teid {
            return Err(F1Error::DuplicateTeid);
        }
        self.sessions.insert(
            mt,
            PduSession {
                mt,
                upf,
                uplink_tunnel,
                downlink_tunnel,
                state: SessionState::Requested,
            },
        );
        Ok(Transition {
            entity: Entity::PduSession(mt),
            from: "none",
            to: SessionState::Requested.label(),
            cause: "pdu_session_request".into(),
        })
    }

    pub fn pdu_session_established(&mut self, mt: NodeId) -> Result<Transition, F1Error> {
        let s = self.sessions.get_mut(&mt).ok_or(F1Error::MtDetached(mt))?;
        if s.state != SessionState::Requested {
            return Err(F1Error::InvalidTransition {
                entity: Entity::PduSession(mt),
                from: s.state.label(),
                to: SessionState::Established.label(),
            });
        }
        s.state = SessionState::Established;
        Ok(Transition {
            entity: Entity::PduSession(mt),
            from: SessionState::Requested.label(),
            to: SessionState::Established.label(),
            cause: "pdu_session_accept".into(),
        })
    }

    /// Checks that `du` may start a configuration update.
    pub fn du_config_update(&self, du: NodeId) -> Result<(), F1Error> {
        match self.associations.get(&du) {
            Some(a) if a.is_active() => Ok(()),
            _ => Err(F1Error::NotActive(du)),
        }
    }

    pub fn release_association(&mut self, du: NodeId, cause: &str) -> Result<Transition, F1Error> {
        self.associations
            .get_mut(&du)
            .ok_or(F1Error::UnknownAssociation(du))?
            .release(cause)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::Direction;
    use crate::tunnel::{PathMode, Teid};

    fn path(h: &[u32]) -> Path {
        Path {
            hops: h.iter().map(|&n| NodeId(n)).collect(),
            mode: PathMode::UpfReroute,
            direction: Direction::Uplink,
        }
    }

    fn tun(t: u32, e: u32) -> TunnelRef {
        TunnelRef {
            teid: Teid(t),
            endpoint: NodeId(e),
        }
    }

    #[test]
    fn association_lifecycle() {
        let mut a = F1Association::new(NodeId(1), NodeId(2));
        assert!(a.complete_setup().is_err());
        let t = a.request_setup(path(&[2, 1])).unwrap();
        assert_eq!((t.from, t.to), ("idle", "setup_requested"));
        assert!(a.transport.is_some());
        a.complete_setup().unwrap();
        assert!(a.is_active());
        assert!(a.request_setup(path(&[2, 1])).is_err());
        a.release("test").unwrap();
        assert_eq!(a.state, AssocState::Released);
        assert!(a.complete_setup().is_err());
    }

    #[test]
    fn empty_transport_rejected() {
        let mut a = F1Association::new(NodeId(1), NodeId(2));
        assert_eq!(a.request_setup(path(&[])), Err(F1Error::EmptyTransport));
    }

    #[test]
    fn failed_setup_returns_to_idle() {
        let mut cp = ControlPlane::new();
        cp.f1_setup(NodeId(1), NodeId(2), path(&[2, 1])).unwrap();
        let t = cp.f1_setup_failed(NodeId(2), "transport_down").unwrap();
        assert_eq!(t.to, "idle");
        assert_eq!(cp.association(NodeId(2)).unwrap().transport, None);
        // and may be retried
        cp.f1_setup(NodeId(1), NodeId(2), path(&[2, 1])).unwrap();
    }

    fn active(cp: &mut ControlPlane, du: u32) {
        cp.f1_setup(NodeId(1), NodeId(du), path(&[du, 1])).unwrap();
        cp.f1_setup_complete(NodeId(du)).unwrap();
    }

    #[test]
    fn attach_preconditions() {
        let mut cp = ControlPlane::new();
        assert_eq!(
            cp.ue_attach(NodeId(9), NodeId(2), NodeId(1), true),
            Err(F1Error::DuNotReady(NodeId(2)))
        );
        active(&mut cp, 2);
        assert_eq!(
            cp.ue_attach(NodeId(9), NodeId(2), NodeId(1), false),
            Err(F1Error::NotCovered {
                ue: NodeId(9),
                du: NodeId(2)
            })
        );
        cp.ue_attach(NodeId(9), NodeId(2), NodeId(1), true).unwrap();
        assert!(!cp.is_connected(NodeId(9)));
        let drb = DrbTunnels {
            uplink: tun(1, 1),
            downlink: tun(2, 2),
        };
        cp.ue_connected(NodeId(9), drb).unwrap();
        let ctx = cp.ue_context(NodeId(9)).unwrap();
        assert_eq!(ctx.state, UeState::Connected);
        assert_eq!(ctx.drb_tunnel, Some(drb));
    }

    #[test]
    fn pdu_session_rules() {
        let mut cp = ControlPlane::new();
        assert_eq!(
            cp.establish_pdu_session(NodeId(5), NodeId(3), tun(1, 3), tun(2, 5)),
            Err(F1Error::MtDetached(NodeId(5)))
        );
        active(&mut cp, 2);
        cp.ue_attach(NodeId(5), NodeId(2), NodeId(1), true).unwrap();
        cp.ue_connected(
            NodeId(5),
            DrbTunnels {
                uplink: tun(7, 1),
                downlink: tun(8, 2),
            },
        )
        .unwrap();
        assert_eq!(
            cp.establish_pdu_session(NodeId(5), NodeId(3), tun(1, 3), tun(1, 5)),
            Err(F1Error::DuplicateTeid)
        );
        cp.establish_pdu_session(NodeId(5), NodeId(3), tun(1, 3), tun(2, 5))
            .unwrap();
        cp.pdu_session_established(NodeId(5)).unwrap();
        let s = cp.session(NodeId(5)).unwrap();
        assert_eq!(s.state, SessionState::Established);
        assert_ne!(s.uplink_tunnel.teid, s.downlink_tunnel.teid);
        assert_eq!(
            cp.establish_pdu_session(NodeId(5), NodeId(3), tun(3, 3), tun(4, 5)),
            Err(F1Error::AlreadyEstablished(NodeId(5)))
        );
    }

    #[test]
    fn config_update_needs_active_association() {
        let mut cp = ControlPlane::new();
        active(&mut cp, 2);
        assert!(cp.du_config_update(NodeId(2)).is_ok());
        cp.release_association(NodeId(2), "test").unwrap();
        assert_eq!(cp.du_config_update(NodeId(2)), Err(F1Error::NotActive(NodeId(2))));
        assert_eq!(cp.du_config_update(NodeId(4)), Err(F1Error::NotActive(NodeId(4))));
    }

    #[test]
    fn message_directions() {
        assert!(F1MessageKind::SetupRequest.is_uplink());
        assert!(!F1MessageKind::SetupResponse.is_uplink());
        assert!(!F1MessageKind::UeContextSetupRequest.is_uplink());
        assert_eq!(
            F1MessageKind::DuConfigUpdate.response(),
            Some(F1MessageKind::DuConfigUpdateAck)
        );
        assert_eq!(F1MessageKind::SetupResponse.response(), None);
    }
}
