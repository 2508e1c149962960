//! Network object model: nodes, links, carriers and the scenario graph.
//!
//! A scenario is a flat graph. The two halves of an IAB node (the IAB-MT and
//! its DU) are separate nodes bound by a shared `owner_group` tag and an
//! internal wired link.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineConfig;
use crate::radio::{self, RadioOverrides, RadioParams, SPEED_OF_LIGHT};
use crate::trace::Assertion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cu,
    DonorDu,
    IabMt,
    IabDu,
    Ue,
    Upf,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Cu => "cu",
            Role::DonorDu => "donor_du",
            Role::IabMt => "iab_mt",
            Role::IabDu => "iab_du",
            Role::Ue => "ue",
            Role::Upf => "upf",
        }
    }

    pub fn is_du(self) -> bool {
        matches!(self, Role::DonorDu | Role::IabDu)
    }

    /// UE-like roles that attach to a DU over the air.
    pub fn is_terminal(self) -> bool {
        matches!(self, Role::Ue | Role::IabMt)
    }

    pub fn is_radio_capable(self) -> bool {
        self.is_du() || self.is_terminal()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Position {
    fn from(v: [f64; 2]) -> Self {
        Position::new(v[0], v[1])
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

pub const ALLOWED_SCS: [f64; 3] = [15e3, 30e3, 60e3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Carrier {
    pub band_label: String,
    /// Hz.
    pub center_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Subcarrier spacing, Hz.
    pub scs: f64,
}

impl Carrier {
    pub fn new(
        band_label: impl Into<String>,
        center_frequency: f64,
        bandwidth: f64,
        scs: f64,
    ) -> Result<Carrier, TopologyError> {
        let c = Carrier {
            band_label: band_label.into(),
            center_frequency,
            bandwidth,
            scs,
        };
        c.check().map_err(TopologyError::InvalidCarrier)?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(format!("{}: bandwidth must be positive", self.band_label));
        }
        if !ALLOWED_SCS.contains(&self.scs) {
            return Err(format!(
                "{}: subcarrier spacing {} Hz not in {{15, 30, 60}} kHz",
                self.band_label, self.scs
            ));
        }
        if !(self.center_frequency.is_finite() && self.center_frequency > self.bandwidth / 2.0) {
            return Err(format!(
                "{}: center frequency must exceed half the bandwidth",
                self.band_label
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub role: Role,
    pub position: Position,
    /// dBm; radio-capable roles only.
    pub tx_power: Option<f64>,
    pub owner_group: Option<String>,
    /// Cell carrier advertised by a DU.
    pub cell: Option<Carrier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "medium", rename_all = "snake_case")]
pub enum Medium {
    Wired {
        /// bit/s; `f64::INFINITY` for the internal IAB-node link.
        capacity: f64,
    },
    Radio {
        carrier: Carrier,
    },
}

impl Medium {
    pub fn is_radio(&self) -> bool {
        matches!(self, Medium::Radio { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub name: Option<String>,
    pub endpoints: (NodeId, NodeId),
    pub medium: Medium,
    /// Seconds.
    pub propagation_delay: f64,
    pub radio: RadioOverrides,
}

impl Link {
    pub fn connects(&self, a: NodeId, b: NodeId) -> bool {
        self.endpoints == (a, b) || self.endpoints == (b, a)
    }

    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if self.endpoints.0 == n {
            Some(self.endpoints.1)
        } else if self.endpoints.1 == n {
            Some(self.endpoints.0)
        } else {
            None
        }
    }

    pub fn carrier(&self) -> Option<&Carrier> {
        match &self.medium {
            Medium::Radio { carrier } => Some(carrier),
            Medium::Wired { .. } => None,
        }
    }
}

/// Constant-rate datagram stream between the UPF and a UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub src: NodeId,
    pub dst: NodeId,
    /// Offered load, bit/s.
    pub rate: f64,
    /// Payload bytes per packet.
    pub packet_size: u32,
    pub start: f64,
    pub stop: f64,
}

pub const DEFAULT_PACKET_SIZE: u32 = 1400;

/// A timed scenario change. Node references are by name because a
/// directive may target a node that only exists once an earlier directive
/// has fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub at: f64,
    #[serde(flatten)]
    pub action: DirectiveAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectiveAction {
    /// Bring up an IAB node (IAB-MT + DU node) at `position`.
    InstantiateIabNode {
        group: String,
        position: Position,
        access_carrier: Carrier,
        #[serde(default = "default_mt_tx_power")]
        mt_tx_power: f64,
        du_tx_power: f64,
    },
    /// Replace a DU's advertised carrier via an F1 configuration update.
    DuConfigUpdate { du: String, carrier: Carrier },
    /// Tear down the link between two nodes (failure injection).
    RemoveLink { endpoints: [String; 2] },
}

fn default_mt_tx_power() -> f64 {
    23.0
}

impl DirectiveAction {
    pub fn label(&self) -> &'static str {
        match self {
            DirectiveAction::InstantiateIabNode { .. } => "instantiate_iab_node",
            DirectiveAction::DuConfigUpdate { .. } => "du_config_update",
            DirectiveAction::RemoveLink { .. } => "remove_link",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("scenario already has a CU")]
    DuplicateCu,
    #[error("scenario already has a UPF")]
    DuplicateUpf,
    #[error("node name `{0}` already in use")]
    DuplicateName(String),
    #[error("position must be finite")]
    NonFinitePosition,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("illegal {medium} link between {a} and {b}: {reason}")]
    IllegalMedium {
        medium: &'static str,
        a: Role,
        b: Role,
        reason: String,
    },
    #[error("radio link needs a carrier and neither endpoint advertises one")]
    MissingCarrier,
    #[error("wired link needs a positive capacity")]
    MissingCapacity,
    #[error("a link between {0} and {1} already exists")]
    DuplicateLink(NodeId, NodeId),
    #[error("invalid carrier: {0}")]
    InvalidCarrier(String),
    #[error("no donor-side DU covers position ({x}, {y})", x = .0.x, y = .0.y)]
    NoDonorCoverage(Position),
    #[error("directive at t={at} s is not before the scenario duration {duration} s")]
    AfterDuration { at: f64, duration: f64 },
}

/// Which transmission medium a new link uses, with its medium-specific
/// parameter. A missing parameter is an error at [`Scenario::add_link`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub wired: bool,
    pub carrier: Option<Carrier>,
    pub wired_capacity: Option<f64>,
    pub propagation_delay: Option<f64>,
    pub radio: RadioOverrides,
    pub name: Option<String>,
}

impl LinkSpec {
    pub fn wired(capacity: f64) -> LinkSpec {
        LinkSpec {
            wired: true,
            carrier: None,
            wired_capacity: Some(capacity),
            propagation_delay: None,
            radio: RadioOverrides::default(),
            name: None,
        }
    }

    pub fn radio(carrier: Option<Carrier>) -> LinkSpec {
        LinkSpec {
            wired: false,
            carrier,
            wired_capacity: None,
            propagation_delay: None,
            radio: RadioOverrides::default(),
            name: None,
        }
    }

    pub fn delay(mut self, seconds: f64) -> LinkSpec {
        self.propagation_delay = Some(seconds);
        self
    }

    pub fn overrides(mut self, radio: RadioOverrides) -> LinkSpec {
        self.radio = radio;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> LinkSpec {
        self.name = Some(name.into());
        self
    }
}

/// Default one-way delay of a wired link when none is given, seconds.
pub const DEFAULT_WIRED_DELAY: f64 = 50e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub role: Role,
    pub position: Position,
    pub tx_power: Option<f64>,
    pub owner_group: Option<String>,
    pub cell: Option<Carrier>,
    pub name: Option<String>,
}

impl NodeSpec {
    pub fn new(role: Role, position: Position) -> NodeSpec {
        NodeSpec {
            role,
            position,
            tx_power: None,
            owner_group: None,
            cell: None,
            name: None,
        }
    }

    pub fn tx_power(mut self, dbm: f64) -> Self {
        self.tx_power = Some(dbm);
        self
    }

    pub fn group(mut self, group: impl Into<String>) -> Self {
        self.owner_group = Some(group.into());
        self
    }

    pub fn cell(mut self, carrier: Carrier) -> Self {
        self.cell = Some(carrier);
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

/// Parameters of an IAB node to bring up at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct IabNodeSpec {
    pub group: String,
    pub position: Position,
    pub access_carrier: Carrier,
    pub mt_tx_power: f64,
    pub du_tx_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub flows: Vec<FlowSpec>,
    pub schedule: Vec<Directive>,
    pub radio_defaults: RadioParams,
    pub engine: EngineConfig,
    pub assertions: Vec<Assertion>,
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::new("scenario", 10.0)
    }
}

impl Scenario {
    pub fn new(name: impl Into<String>, duration: f64) -> Scenario {
        Scenario {
            name: name.into(),
            nodes: Vec::new(),
            links: Vec::new(),
            flows: Vec::new(),
            schedule: Vec::new(),
            radio_defaults: RadioParams::default(),
            engine: EngineConfig::default(),
            assertions: Vec::new(),
            seed: 0,
            duration,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        // ids are 1-based insertion indices
        self.nodes
            .get((id.0 as usize).wrapping_sub(1))
            .filter(|n| n.id == id)
            .or_else(|| self.nodes.iter().find(|n| n.id == id))
    }

    pub fn node_by_name(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn nodes_with_role(&self, role: Role) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.links.iter().find(|l| l.connects(a, b))
    }

    pub fn next_node_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0).max().unwrap_or(0) + 1)
    }

    pub fn next_link_id(&self) -> LinkId {
        LinkId(self.links.iter().map(|l| l.id.0).max().unwrap_or(0) + 1)
    }

    /// Appends a node. The id is the next insertion index, starting at 1.
    pub fn add_node(&mut self, spec: NodeSpec) -> Result<NodeId, TopologyError> {
        if !spec.position.is_finite() {
            return Err(TopologyError::NonFinitePosition);
        }
        match spec.role {
            Role::Cu if self.nodes_with_role(Role::Cu).next().is_some() => {
                return Err(TopologyError::DuplicateCu)
            }
            Role::Upf if self.nodes_with_role(Role::Upf).next().is_some() => {
                return Err(TopologyError::DuplicateUpf)
            }
            _ => {}
        }
        if let Some(cell) = &spec.cell {
            cell.check().map_err(TopologyError::InvalidCarrier)?;
        }
        let id = self.next_node_id();
        let name = spec
            .name
            .unwrap_or_else(|| format!("{}{}", spec.role.label(), id.0));
        if self.node_by_name(&name).is_some() {
            return Err(TopologyError::DuplicateName(name));
        }
        self.nodes.push(Node {
            id,
            name,
            role: spec.role,
            position: spec.position,
            tx_power: spec.tx_power,
            owner_group: spec.owner_group,
            cell: spec.cell,
        });
        Ok(id)
    }

    /// Appends a link after checking that the medium suits both endpoint
    /// roles. Radio links without an explicit carrier take the DU endpoint's
    /// cell carrier.
    pub fn add_link(&mut self, a: NodeId, b: NodeId, spec: LinkSpec) -> Result<LinkId, TopologyError> {
        let na = self.node(a).ok_or(TopologyError::UnknownNode(a))?;
        let nb = self.node(b).ok_or(TopologyError::UnknownNode(b))?;
        check_medium(na, nb, spec.wired).map_err(|reason| TopologyError::IllegalMedium {
            medium: if spec.wired { "wired" } else { "radio" },
            a: na.role,
            b: nb.role,
            reason,
        })?;
        if self.link_between(a, b).is_some() {
            return Err(TopologyError::DuplicateLink(a, b));
        }
        let medium = if spec.wired {
            let capacity = spec.wired_capacity.ok_or(TopologyError::MissingCapacity)?;
            if !(capacity > 0.0) {
                return Err(TopologyError::MissingCapacity);
            }
            Medium::Wired { capacity }
        } else {
            let carrier = spec
                .carrier
                .or_else(|| du_side(na, nb).and_then(|du| du.cell.clone()))
                .ok_or(TopologyError::MissingCarrier)?;
            carrier.check().map_err(TopologyError::InvalidCarrier)?;
            Medium::Radio { carrier }
        };
        let propagation_delay = spec.propagation_delay.unwrap_or_else(|| match medium {
            Medium::Wired { .. } => DEFAULT_WIRED_DELAY,
            Medium::Radio { .. } => na.position.distance(&nb.position) / SPEED_OF_LIGHT,
        });
        let id = self.next_link_id();
        self.links.push(Link {
            id,
            name: spec.name,
            endpoints: (a, b),
            medium,
            propagation_delay,
            radio: spec.radio,
        });
        Ok(id)
    }

    /// Radio parameters in force between two nodes: the defaults with any
    /// overrides of the link joining them.
    pub fn radio_params_between(&self, a: NodeId, b: NodeId) -> RadioParams {
        match self.link_between(a, b) {
            Some(l) => self.radio_defaults.with_overrides(&l.radio),
            None => self.radio_defaults.clone(),
        }
    }

    /// Whether `du`'s advertised cell reaches `position`. Uses scenario
    /// radio defaults.
    pub fn du_covers(&self, du: &Node, position: Position) -> bool {
        match (&du.cell, du.tx_power) {
            (Some(cell), Some(tx)) => radio::is_covered(
                cell,
                tx,
                du.position.distance(&position),
                &self.radio_defaults,
            ),
            _ => false,
        }
    }

    /// Donor-side DU with the strongest received power at `position`, if
    /// any covers it.
    pub fn best_donor_du(&self, position: Position) -> Option<&Node> {
        self.nodes_with_role(Role::DonorDu)
            .filter(|du| self.du_covers(du, position))
            .map(|du| {
                let budget = radio::link_budget(
                    du.cell.as_ref().expect("covering DU has a cell"),
                    du.tx_power.expect("covering DU has tx power"),
                    du.position.distance(&position),
                    &self.radio_defaults,
                );
                (du, budget.rx_power)
            })
            .fold(None, |best: Option<(&Node, f64)>, (du, rx)| match best {
                Some((_, brx)) if brx >= rx => best,
                _ => Some((du, rx)),
            })
            .map(|(du, _)| du)
    }

    /// Queues a directive that brings up an IAB node at time `at`.
    pub fn instantiate_iab_node(
        &mut self,
        spec: IabNodeSpec,
        at: f64,
    ) -> Result<&Directive, TopologyError> {
        if !(at >= 0.0 && at < self.duration) {
            return Err(TopologyError::AfterDuration {
                at,
                duration: self.duration,
            });
        }
        if !spec.position.is_finite() {
            return Err(TopologyError::NonFinitePosition);
        }
        spec.access_carrier
            .check()
            .map_err(TopologyError::InvalidCarrier)?;
        if self.best_donor_du(spec.position).is_none() {
            return Err(TopologyError::NoDonorCoverage(spec.position));
        }
        self.schedule.push(Directive {
            at,
            action: DirectiveAction::InstantiateIabNode {
                group: spec.group,
                position: spec.position,
                access_carrier: spec.access_carrier,
                mt_tx_power: spec.mt_tx_power,
                du_tx_power: spec.du_tx_power,
            },
        });
        Ok(self.schedule.last().expect("just pushed"))
    }

    pub fn add_flow(&mut self, flow: FlowSpec) {
        self.flows.push(flow);
    }

    /// Checks every well-formedness rule and reports each violation. Never
    /// fails; an empty report means the scenario can be run.
    pub fn validate_topology(&self) -> ValidationReport {
        let mut v = Vec::new();

        if let Err(e) = self.radio_defaults.validate() {
            v.push(Violation::InvalidRadioParams(e.to_string()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            v.push(Violation::NonPositiveDuration(self.duration));
        }

        let cus: Vec<_> = self.nodes_with_role(Role::Cu).collect();
        match cus.len() {
            0 => v.push(Violation::NoCu),
            1 => {}
            n => v.push(Violation::MultipleCu(n)),
        }
        let upfs = self.nodes_with_role(Role::Upf).count();
        match upfs {
            0 => v.push(Violation::NoUpf),
            1 => {}
            n => v.push(Violation::MultipleUpf(n)),
        }

        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                v.push(Violation::DuplicateName(n.name.clone()));
            }
            if !n.position.is_finite() {
                v.push(Violation::NonFinitePosition(n.name.clone()));
            }
            if n.role.is_radio_capable() && !n.tx_power.is_some_and(f64::is_finite) {
                v.push(Violation::MissingTxPower(n.name.clone()));
            }
            if n.role.is_du() {
                match &n.cell {
                    None => v.push(Violation::MissingCell(n.name.clone())),
                    Some(c) => {
                        if let Err(e) = c.check() {
                            v.push(Violation::InvalidCarrier(e));
                        }
                    }
                }
            }
        }

        // CU wired to at least one donor DU
        if let [cu] = cus.as_slice() {
            let wired_to_donor = self.links.iter().any(|l| {
                !l.medium.is_radio()
                    && l.other(cu.id)
                        .and_then(|o| self.node(o))
                        .is_some_and(|o| o.role == Role::DonorDu)
            });
            if !wired_to_donor {
                v.push(Violation::CuWithoutDonorDu);
            }
        }

        // IAB node grouping
        let mut groups: BTreeMap<&str, (Vec<&Node>, Vec<&Node>)> = BTreeMap::new();
        for n in &self.nodes {
            match (n.role, n.owner_group.as_deref()) {
                (Role::IabDu, None) => v.push(Violation::UngroupedIabDu(n.name.clone())),
                (Role::IabMt, None) => v.push(Violation::UngroupedIabMt(n.name.clone())),
                (Role::IabDu, Some(g)) => groups.entry(g).or_default().1.push(n),
                (Role::IabMt, Some(g)) => groups.entry(g).or_default().0.push(n),
                _ => {}
            }
        }
        for (g, (mts, dus)) in &groups {
            if mts.len() != 1 || dus.len() != 1 {
                v.push(Violation::GroupMismatch {
                    group: g.to_string(),
                    mts: mts.len(),
                    dus: dus.len(),
                });
            }
        }

        let mut pairs = BTreeSet::new();
        for l in &self.links {
            let (a, b) = l.endpoints;
            let (Some(na), Some(nb)) = (self.node(a), self.node(b)) else {
                v.push(Violation::DanglingLink(l.id));
                continue;
            };
            let key = (a.min(b), a.max(b));
            if !pairs.insert(key) {
                v.push(Violation::DuplicateLink(na.name.clone(), nb.name.clone()));
            }
            if let Err(reason) = check_medium(na, nb, !l.medium.is_radio()) {
                v.push(Violation::IllegalMedium {
                    link: l.id,
                    a: na.name.clone(),
                    b: nb.name.clone(),
                    reason,
                });
            }
            match &l.medium {
                Medium::Wired { capacity } if !(*capacity > 0.0) => {
                    v.push(Violation::BadWiredCapacity(l.id))
                }
                Medium::Radio { carrier } => {
                    if let Err(e) = carrier.check() {
                        v.push(Violation::InvalidCarrier(e));
                    }
                    if let Err(e) = self.radio_defaults.with_overrides(&l.radio).validate() {
                        v.push(Violation::InvalidRadioParams(format!("{}: {e}", l.id)));
                    }
                }
                _ => {}
            }
            if !(l.propagation_delay.is_finite() && l.propagation_delay >= 0.0) {
                v.push(Violation::BadPropagationDelay(l.id));
            }
        }

        let mut flow_ids = BTreeSet::new();
        for f in &self.flows {
            if !flow_ids.insert(f.id.as_str()) {
                v.push(Violation::BadFlow {
                    flow: f.id.clone(),
                    reason: "duplicate flow id".into(),
                });
            }
            let roles = (
                self.node(f.src).map(|n| n.role),
                self.node(f.dst).map(|n| n.role),
            );
            if !matches!(
                roles,
                (Some(Role::Upf), Some(Role::Ue)) | (Some(Role::Ue), Some(Role::Upf))
            ) {
                v.push(Violation::BadFlow {
                    flow: f.id.clone(),
                    reason: "flows run between the UPF and a UE".into(),
                });
            }
            if !(f.rate.is_finite() && f.rate > 0.0) {
                v.push(Violation::BadFlow {
                    flow: f.id.clone(),
                    reason: "rate must be positive".into(),
                });
            }
            if f.packet_size == 0 {
                v.push(Violation::BadFlow {
                    flow: f.id.clone(),
                    reason: "packet_size must be positive".into(),
                });
            }
            if !(f.start >= 0.0 && f.start < f.stop && f.stop <= self.duration) {
                v.push(Violation::BadFlow {
                    flow: f.id.clone(),
                    reason: "need 0 <= start < stop <= duration".into(),
                });
            }
        }

        for d in &self.schedule {
            if !(d.at.is_finite() && d.at >= 0.0) {
                v.push(Violation::BadDirective(format!(
                    "{} at t={} s",
                    d.action.label(),
                    d.at
                )));
            }
            let carrier = match &d.action {
                DirectiveAction::InstantiateIabNode { access_carrier, .. } => Some(access_carrier),
                DirectiveAction::DuConfigUpdate { carrier, .. } => Some(carrier),
                DirectiveAction::RemoveLink { .. } => None,
            };
            if let Some(Err(e)) = carrier.map(Carrier::check) {
                v.push(Violation::InvalidCarrier(e));
            }
        }

        if let Err(e) = self.engine.validate() {
            v.push(Violation::BadEngineConfig(e));
        }

        ValidationReport { violations: v }
    }
}

fn du_side<'a>(a: &'a Node, b: &'a Node) -> Option<&'a Node> {
    if a.role.is_du() {
        Some(a)
    } else if b.role.is_du() {
        Some(b)
    } else {
        None
    }
}

fn same_group(a: &Node, b: &Node) -> bool {
    matches!((&a.owner_group, &b.owner_group), (Some(x), Some(y)) if x == y)
}

/// Medium/role compatibility shared by [`Scenario::add_link`] and
/// validation.
fn check_medium(a: &Node, b: &Node, wired: bool) -> Result<(), String> {
    use Role::*;
    if a.id == b.id {
        return Err("a link needs two distinct endpoints".into());
    }
    let (ra, rb) = if a.role <= b.role { (a.role, b.role) } else { (b.role, a.role) };
    if wired {
        match (ra, rb) {
            (Cu, DonorDu) | (Cu, Upf) => Ok(()),
            (IabMt, IabDu) if same_group(a, b) => Ok(()),
            (IabMt, IabDu) => Err("IAB-MT and DU node must belong to the same IAB node".into()),
            _ if ra == Ue || rb == Ue => Err("UEs have no wired links".into()),
            _ => Err("wired links join CU-DonorDU, CU-UPF or the two halves of an IAB node".into()),
        }
    } else {
        let du = ra.is_du() || rb.is_du();
        let terminal = ra.is_terminal() || rb.is_terminal();
        if !(du && terminal) {
            return Err("radio links join a DU to a UE or IAB-MT".into());
        }
        if same_group(a, b) {
            return Err("an IAB node's DU cannot serve its own IAB-MT".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    NoCu,
    MultipleCu(usize),
    NoUpf,
    MultipleUpf(usize),
    CuWithoutDonorDu,
    UngroupedIabDu(String),
    UngroupedIabMt(String),
    GroupMismatch { group: String, mts: usize, dus: usize },
    IllegalMedium { link: LinkId, a: String, b: String, reason: String },
    DuplicateLink(String, String),
    DanglingLink(LinkId),
    DuplicateName(String),
    NonFinitePosition(String),
    MissingTxPower(String),
    MissingCell(String),
    InvalidCarrier(String),
    BadWiredCapacity(LinkId),
    BadPropagationDelay(LinkId),
    InvalidRadioParams(String),
    BadFlow { flow: String, reason: String },
    BadDirective(String),
    BadEngineConfig(String),
    NonPositiveDuration(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoCu => write!(f, "no CU"),
            MultipleCu(n) => write!(f, "{n} CUs (exactly one allowed)"),
            NoUpf => write!(f, "no UPF"),
            MultipleUpf(n) => write!(f, "{n} UPFs (exactly one allowed)"),
            CuWithoutDonorDu => write!(f, "CU is not wired to any donor DU"),
            UngroupedIabDu(n) => write!(f, "IAB DU `{n}` has no owner_group"),
            UngroupedIabMt(n) => write!(f, "IAB-MT `{n}` has no owner_group"),
            GroupMismatch { group, mts, dus } => write!(
                f,
                "IAB group `{group}` has {mts} IAB-MT(s) and {dus} DU(s); expected one of each"
            ),
            IllegalMedium { link, a, b, reason } => {
                write!(f, "link {link} ({a} - {b}): {reason}")
            }
            DuplicateLink(a, b) => write!(f, "more than one link between {a} and {b}"),
            DanglingLink(l) => write!(f, "link {l} references a missing node"),
            DuplicateName(n) => write!(f, "node name `{n}` used twice"),
            NonFinitePosition(n) => write!(f, "node `{n}` has a non-finite position"),
            MissingTxPower(n) => write!(f, "radio node `{n}` has no tx_power"),
            MissingCell(n) => write!(f, "DU `{n}` advertises no carrier"),
            InvalidCarrier(e) => write!(f, "invalid carrier: {e}"),
            BadWiredCapacity(l) => write!(f, "wired link {l} needs a positive capacity"),
            BadPropagationDelay(l) => write!(f, "link {l} has a negative or non-finite delay"),
            InvalidRadioParams(e) => write!(f, "invalid radio parameters: {e}"),
            BadFlow { flow, reason } => write!(f, "flow `{flow}`: {reason}"),
            BadDirective(d) => write!(f, "directive {d} has an invalid time"),
            BadEngineConfig(e) => write!(f, "engine config: {e}"),
            NonPositiveDuration(d) => write!(f, "duration {d} s must be positive"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "scenario is valid");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}
