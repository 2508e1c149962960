use std::fmt;

use serde::{Deserialize, Serialize};

use super::TunnelError;
use crate::f1ap::{ControlPlane, SessionState};
use crate::radio::Direction;
use crate::topology::{NodeId, Role, Scenario};

/// How F1 traffic of an IAB node reaches the CU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// Through the IAB-MT's PDU session: out to the UPF and rerouted back
    /// to the CU.
    #[default]
    UpfReroute,
    /// BAP routing between the IAB node and the donor DU; the UPF is not
    /// involved.
    BapBypass,
}

impl fmt::Display for PathMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathMode::UpfReroute => "upf_reroute",
            PathMode::BapBypass => "bap_bypass",
        })
    }
}

/// Ordered node hops of an F1 transport. Uplink paths start at the DU and
/// end at the CU; downlink paths are their reverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub hops: Vec<NodeId>,
    pub mode: PathMode,
    pub direction: Direction,
}

impl Path {
    pub fn reversed(&self) -> Path {
        Path {
            hops: self.hops.iter().rev().copied().collect(),
            mode: self.mode,
            direction: match self.direction {
                Direction::Uplink => Direction::Downlink,
                Direction::Downlink => Direction::Uplink,
            },
        }
    }

    pub fn source(&self) -> NodeId {
        self.hops[0]
    }

    pub fn terminus(&self) -> NodeId {
        *self.hops.last().expect("path is never empty")
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// Consecutive hop pairs.
    pub fn legs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.hops.windows(2).map(|w| (w[0], w[1]))
    }

    /// Every leg has a link in `topology`.
    pub fn check_links(&self, topology: &Scenario) -> Result<(), TunnelError> {
        for (a, b) in self.legs() {
            if topology.link_between(a, b).is_none() {
                return Err(TunnelError::MissingHop(a, b));
            }
        }
        Ok(())
    }
}

/// Uplink F1 transport path from `du` to the CU.
///
/// A donor DU reaches the CU directly. A DU node goes through its IAB-MT,
/// over the air to the donor DU and into the CU; in [`PathMode::UpfReroute`]
/// the packets continue to the UPF, which anchors the IAB-MT's session, and
/// are rerouted back to the CU.
pub fn build_f1_transport_path(
    topology: &Scenario,
    control: &ControlPlane,
    du: NodeId,
    mode: PathMode,
) -> Result<Path, TunnelError> {
    let node = topology.node(du).ok_or(TunnelError::NotAnF1Endpoint(du))?;
    let cu = topology
        .nodes_with_role(Role::Cu)
        .next()
        .ok_or(TunnelError::NotAnF1Endpoint(du))?
        .id;
    let hops = match node.role {
        Role::DonorDu => vec![du, cu],
        Role::IabDu => {
            let mt = node
                .owner_group
                .as_deref()
                .and_then(|g| {
                    topology
                        .nodes_with_role(Role::IabMt)
                        .find(|m| m.owner_group.as_deref() == Some(g))
                })
                .ok_or(TunnelError::NotAnF1Endpoint(du))?
                .id;
            let session = control
                .session(mt)
                .filter(|s| s.state == SessionState::Established)
                .ok_or(TunnelError::SessionNotEstablished(mt))?;
            let donor = control
                .ue_context(mt)
                .map(|c| c.serving_du)
                .ok_or(TunnelError::SessionNotEstablished(mt))?;
            if !control.association(donor).is_some_and(|a| a.is_active()) {
                return Err(TunnelError::AssociationNotActive(donor));
            }
            match mode {
                PathMode::UpfReroute => vec![du, mt, donor, cu, session.upf, cu],
                PathMode::BapBypass => vec![du, mt, donor, cu],
            }
        }
        _ => return Err(TunnelError::NotAnF1Endpoint(du)),
    };
    let path = Path {
        hops,
        mode,
        direction: Direction::Uplink,
    };
    path.check_links(topology)?;
    Ok(path)
}
