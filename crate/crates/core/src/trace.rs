//! Run record: timestamped events, per-flow deliveries and the summary
//! document, with their line-delimited and JSON exports.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::f1ap::{Entity, F1MessageKind};
use crate::time::SimTime;
use crate::topology::{LinkId, NodeId, Role};
use crate::tunnel::{PathMode, Teid};
use crate::radio::Direction;

/// Version of the trace and summary formats.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Control-plane and topology events only.
    Summary,
    /// Additionally every packet injection, forwarding step, delivery and
    /// drop.
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    /// The UE of the flow has no connected context.
    NotConnected,
    NoRoute,
    TtlExpired,
    QueueOverflow,
    LinkDown,
    TeidMismatch,
    DepthExceeded,
    BapMismatch,
    /// F1 message arrived on an idle or released association.
    AssociationInactive,
    /// Zero capacity on the outgoing link.
    NoCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderOp {
    Forward,
    Push,
    Pop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    NodeAdded {
        t_ns: u64,
        node: NodeId,
        name: String,
        role: Role,
    },
    LinkAdded {
        t_ns: u64,
        link: LinkId,
        a: NodeId,
        b: NodeId,
        radio: bool,
    },
    LinkRemoved {
        t_ns: u64,
        link: LinkId,
    },
    Directive {
        t_ns: u64,
        action: String,
    },
    /// A directive that could not be applied; the run continues.
    DirectiveFailed {
        t_ns: u64,
        action: String,
        error: String,
    },
    StateTransition {
        t_ns: u64,
        entity: Entity,
        from: String,
        to: String,
        cause: String,
        /// Serving DU for UE contexts.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peer: Option<NodeId>,
    },
    PathInstalled {
        t_ns: u64,
        du: NodeId,
        mode: PathMode,
        hops: Vec<NodeId>,
        routes: usize,
    },
    CellReconfigured {
        t_ns: u64,
        du: NodeId,
        band_label: String,
        bandwidth: f64,
    },
    Timer {
        t_ns: u64,
        kind: String,
        subject: NodeId,
    },
    Inject {
        t_ns: u64,
        packet: u64,
        flow: u32,
        seq: u64,
        node: NodeId,
        payload: u32,
    },
    SendF1 {
        t_ns: u64,
        packet: u64,
        kind: F1MessageKind,
        association: NodeId,
        attempt: u8,
        from: NodeId,
        to: NodeId,
    },
    /// One forwarding step: header action at `node`, then onto `link`.
    Forward {
        t_ns: u64,
        node: NodeId,
        packet: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flow: Option<u32>,
        op: HeaderOp,
        next_hop: NodeId,
        link: LinkId,
        depth: usize,
        wire_size: u32,
        teids: Vec<Teid>,
    },
    Deliver {
        t_ns: u64,
        node: NodeId,
        packet: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flow: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kind: Option<F1MessageKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        association: Option<NodeId>,
        payload: u32,
        latency_ns: u64,
        hop_log: Vec<NodeId>,
    },
    Drop {
        t_ns: u64,
        node: NodeId,
        packet: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flow: Option<u32>,
        cause: DropCause,
        depth: usize,
        wire_size: u32,
        teids: Vec<Teid>,
    },
}

impl TraceEvent {
    pub fn time(&self) -> SimTime {
        use TraceEvent::*;
        let t = match self {
            NodeAdded { t_ns, .. }
            | LinkAdded { t_ns, .. }
            | LinkRemoved { t_ns, .. }
            | Directive { t_ns, .. }
            | DirectiveFailed { t_ns, .. }
            | StateTransition { t_ns, .. }
            | PathInstalled { t_ns, .. }
            | CellReconfigured { t_ns, .. }
            | Timer { t_ns, .. }
            | Inject { t_ns, .. }
            | SendF1 { t_ns, .. }
            | Forward { t_ns, .. }
            | Deliver { t_ns, .. }
            | Drop { t_ns, .. } => *t_ns,
        };
        SimTime(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub mode: PathMode,
    pub duration: f64,
    pub trace_level: TraceLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkInfo {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub radio: bool,
    /// Carries traffic to or from a UE.
    pub access: bool,
    /// Capacity a→b and b→a at the end of the run, bit/s; `None` when
    /// unbounded.
    pub capacity_ab: Option<f64>,
    pub capacity_ba: Option<f64>,
    pub removed: bool,
}

impl LinkInfo {
    /// Radio link between a donor DU and an IAB-MT.
    pub fn is_backhaul_radio(&self, nodes: &[NodeInfo]) -> bool {
        let role = |n: NodeId| nodes.iter().find(|x| x.id == n).map(|x| x.role);
        self.radio
            && matches!(
                (role(self.a), role(self.b)),
                (Some(Role::DonorDu), Some(Role::IabMt)) | (Some(Role::IabMt), Some(Role::DonorDu))
            )
    }

    pub fn capacity_from(&self, sender: NodeId) -> Option<f64> {
        if sender == self.a {
            self.capacity_ab
        } else {
            self.capacity_ba
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowInfo {
    pub index: u32,
    pub id: String,
    pub src: NodeId,
    pub dst: NodeId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow_id: String,
    pub direction: Option<Direction>,
    pub offered_bps: f64,
    pub goodput_bps: f64,
    pub mean_latency_s: f64,
    pub drop_count: u64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub delivered_payload_bytes: u64,
    /// Link traversals by this flow's packets.
    pub hops_traversed: u64,
    pub overhead_bytes: u64,
    pub backhaul_overhead_bytes: u64,
    pub max_depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub link: LinkId,
    pub a: String,
    pub b: String,
    pub radio: bool,
    pub access: bool,
    pub capacity_ab_bps: Option<f64>,
    pub capacity_ba_bps: Option<f64>,
    /// Busiest direction's share of busy time.
    pub utilization: f64,
    pub utilization_ab: f64,
    pub utilization_ba: f64,
    pub packets: u64,
    pub bytes: u64,
    pub overhead_bytes: u64,
    pub overhead_fraction: f64,
    pub drops: u64,
    pub max_depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub hops_traversed: u64,
    pub overhead_bytes: u64,
    pub backhaul_overhead_bytes: u64,
    pub control_messages_sent: u64,
    pub control_messages_delivered: u64,
    pub directive_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub mode: PathMode,
    pub duration: f64,
    pub flows: Vec<FlowSummary>,
    pub links: Vec<LinkSummary>,
    pub totals: Totals,
}

impl Summary {
    pub fn flow(&self, id: &str) -> Option<&FlowSummary> {
        self.flows.iter().find(|f| f.flow_id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(s: &str) -> Result<Summary, serde_json::Error> {
        serde_json::from_str(s)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenario {} (mode {}, seed {}, {} s)",
            self.scenario, self.mode, self.seed, self.duration
        )?;
        writeln!(
            f,
            "{:<14} {:>12} {:>12} {:>12} {:>8} {:>10}",
            "flow", "offered Mb/s", "goodput Mb/s", "latency ms", "drops", "hops"
        )?;
        for fl in &self.flows {
            writeln!(
                f,
                "{:<14} {:>12.3} {:>12.3} {:>12.3} {:>8} {:>10}",
                fl.flow_id,
                fl.offered_bps / 1e6,
                fl.goodput_bps / 1e6,
                fl.mean_latency_s * 1e3,
                fl.drop_count,
                fl.hops_traversed
            )?;
        }
        writeln!(
            f,
            "backhaul overhead {} B, control messages {}/{} delivered",
            self.totals.backhaul_overhead_bytes,
            self.totals.control_messages_delivered,
            self.totals.control_messages_sent
        )
    }
}

/// Delivery log of one flow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowDeliveries {
    pub flow_id: String,
    pub times: Vec<SimTime>,
    pub payloads: Vec<u32>,
    /// (seq, payload) of every delivered packet.
    pub seqs: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("unknown flow `{0}`")]
    UnknownFlow(String),
    #[error("window end {t1} must exceed start {t0}")]
    InvalidWindow { t0: f64, t1: f64 },
    #[error("schema version {a} does not match {b}")]
    SchemaMismatch { a: u32, b: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub nodes: Vec<NodeInfo>,
    pub links: Vec<LinkInfo>,
    pub flows: Vec<FlowInfo>,
    pub events: Vec<TraceEvent>,
    pub deliveries: Vec<FlowDeliveries>,
    pub summary: Summary,
}

#[derive(Serialize)]
struct HeaderRecord<'a> {
    record: &'static str,
    #[serde(flatten)]
    header: &'a TraceHeader,
    nodes: &'a [NodeInfo],
    flows: &'a [FlowInfo],
}

impl Trace {
    pub fn flow_index(&self, flow_id: &str) -> Option<usize> {
        self.deliveries.iter().position(|d| d.flow_id == flow_id)
    }

    pub fn node_name(&self, id: NodeId) -> Option<&str> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.name.as_str())
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkInfo> {
        self.links.iter().find(|l| l.id == id)
    }

    /// Writes the header line followed by one event per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = HeaderRecord {
            record: "header",
            header: &self.header,
            nodes: &self.nodes,
            flows: &self.flows,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// SHA-256 over the line-delimited export and the summary document.
    pub fn digest(&self) -> String {
        let mut hasher = HashWriter(Sha256::new());
        self.write_jsonl(&mut hasher).expect("hashing never fails");
        hasher.0.update(self.summary.to_json().as_bytes());
        hex::encode(hasher.0.finalize())
    }

    /// Goodput of `flow_id` over the window `(t0, t1]`: delivered payload
    /// bits divided by the window length.
    pub fn measure_throughput(&self, flow_id: &str, window: (f64, f64)) -> Result<f64, TraceError> {
        let (t0, t1) = window;
        if !(t1 > t0) {
            return Err(TraceError::InvalidWindow { t0, t1 });
        }
        let d = self
            .deliveries
            .iter()
            .find(|d| d.flow_id == flow_id)
            .ok_or_else(|| TraceError::UnknownFlow(flow_id.to_string()))?;
        let (lo, hi) = (SimTime::from_secs_f64(t0), SimTime::from_secs_f64(t1));
        let bits: u64 = d
            .times
            .iter()
            .zip(&d.payloads)
            .filter(|(t, _)| **t > lo && **t <= hi)
            .map(|(_, p)| *p as u64 * 8)
            .sum();
        Ok(bits as f64 / (t1 - t0))
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Quantity checked by a scenario assertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GoodputBps,
    MeanLatencyS,
    DropCount,
    Delivered,
}

/// Optional `[[assert]]` block of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub flow: String,
    pub metric: Metric,
    /// Only for goodput; defaults to the whole run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionOutcome {
    pub assertion: Assertion,
    pub value: Option<f64>,
    pub passed: bool,
    pub note: String,
}

impl Assertion {
    pub fn evaluate(&self, trace: &Trace) -> AssertionOutcome {
        let value = match self.metric {
            Metric::GoodputBps => {
                let w = self.window.unwrap_or([0.0, trace.header.duration]);
                trace.measure_throughput(&self.flow, (w[0], w[1])).ok()
            }
            Metric::MeanLatencyS => trace.summary.flow(&self.flow).map(|f| f.mean_latency_s),
            Metric::DropCount => trace.summary.flow(&self.flow).map(|f| f.drop_count as f64),
            Metric::Delivered => trace.summary.flow(&self.flow).map(|f| f.delivered as f64),
        };
        let passed = value.is_some_and(|v| {
            self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
        });
        let note = match value {
            None => format!("flow `{}` not found or window invalid", self.flow),
            Some(v) => format!(
                "{:?} of {} = {v} (min {:?}, max {:?})",
                self.metric, self.flow, self.min, self.max
            ),
        };
        AssertionOutcome {
            assertion: self.clone(),
            value,
            passed,
            note,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDelta {
    pub flow_id: String,
    pub goodput_bps: f64,
    pub mean_latency_s: f64,
    pub hops_traversed: i64,
    pub overhead_bytes: i64,
    pub backhaul_overhead_bytes: i64,
}

/// Per-flow differences `b - a` between two runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub a: String,
    pub b: String,
    pub flows: Vec<FlowDelta>,
    /// Flows present in only one of the runs.
    pub unmatched: Vec<String>,
    pub total_hops_traversed: i64,
    pub total_backhaul_overhead_bytes: i64,
}

impl CompareReport {
    pub fn is_identical(&self) -> bool {
        self.unmatched.is_empty()
            && self.total_hops_traversed == 0
            && self.total_backhaul_overhead_bytes == 0
            && self.flows.iter().all(|f| {
                f.goodput_bps == 0.0
                    && f.mean_latency_s == 0.0
                    && f.hops_traversed == 0
                    && f.overhead_bytes == 0
                    && f.backhaul_overhead_bytes == 0
            })
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "compare {} -> {}", self.a, self.b)?;
        writeln!(
            f,
            "{:<14} {:>14} {:>14} {:>10} {:>14}",
            "flow", "d goodput Mb/s", "d latency ms", "d hops", "d bh overhead"
        )?;
        for d in &self.flows {
            writeln!(
                f,
                "{:<14} {:>14.4} {:>14.4} {:>10} {:>14}",
                d.flow_id,
                d.goodput_bps / 1e6,
                d.mean_latency_s * 1e3,
                d.hops_traversed,
                d.backhaul_overhead_bytes
            )?;
        }
        for u in &self.unmatched {
            writeln!(f, "{u}: present in only one run")?;
        }
        writeln!(
            f,
            "total: d hops {}, d backhaul overhead {} B",
            self.total_hops_traversed, self.total_backhaul_overhead_bytes
        )
    }
}

pub fn compare(a: &Summary, b: &Summary) -> Result<CompareReport, TraceError> {
    if a.schema_version != b.schema_version {
        return Err(TraceError::SchemaMismatch {
            a: a.schema_version,
            b: b.schema_version,
        });
    }
    let mut flows = Vec::new();
    let mut unmatched = Vec::new();
    for fa in &a.flows {
        match b.flow(&fa.flow_id) {
            Some(fb) => flows.push(FlowDelta {
                flow_id: fa.flow_id.clone(),
                goodput_bps: fb.goodput_bps - fa.goodput_bps,
                mean_latency_s: fb.mean_latency_s - fa.mean_latency_s,
                hops_traversed: fb.hops_traversed as i64 - fa.hops_traversed as i64,
                overhead_bytes: fb.overhead_bytes as i64 - fa.overhead_bytes as i64,
                backhaul_overhead_bytes: fb.backhaul_overhead_bytes as i64
                    - fa.backhaul_overhead_bytes as i64,
            }),
            None => unmatched.push(fa.flow_id.clone()),
        }
    }
    unmatched.extend(
        b.flows
            .iter()
            .filter(|fb| a.flow(&fb.flow_id).is_none())
            .map(|fb| fb.flow_id.clone()),
    );
    Ok(CompareReport {
        a: format!("{} ({})", a.scenario, a.mode),
        b: format!("{} ({})", b.scenario, b.mode),
        flows,
        unmatched,
        total_hops_traversed: b.totals.hops_traversed as i64 - a.totals.hops_traversed as i64,
        total_backhaul_overhead_bytes: b.totals.backhaul_overhead_bytes as i64
            - a.totals.backhaul_overhead_bytes as i64,
    })
}
