//! Discrete-event engine.
//!
//! Events are ordered by (time, insertion sequence), so a run is a pure
//! function of the scenario, the seed and the run options. Every directed
//! link side is a FIFO with a bounded buffer; a packet occupies the buffer
//! from admission until its last bit is on the wire.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::f1ap::{ControlPlane, DrbTunnels, Entity, F1Error, F1Message, F1MessageKind, Transition};
use crate::radio::{self, Direction};
use crate::time::SimTime;
use crate::topology::{
    Carrier, DirectiveAction, LinkId, LinkSpec, Medium, NodeId, NodeSpec, Role, Scenario, ValidationReport,
};
use crate::trace::{
    DropCause, FlowDeliveries, FlowInfo, FlowSummary, HeaderOp, LinkInfo, LinkSummary, NodeInfo, Summary, Totals, Trace,
    TraceError, TraceEvent, TraceHeader, TraceLevel, SCHEMA_VERSION,
};
use crate::tunnel::{
    build_f1_transport_path, forward, install_routes, install_ue_routes, BapRouteId, Forwarded, HeaderSizes, Packet,
    PacketKind, Path, PathMode, RoutingTable, TeidAllocator, Transport, TunnelError, DEFAULT_TTL,
};

/// Engine knobs a scenario may override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub gtp_header_size: u32,
    pub bap_header_size: u32,
    pub control_message_size: u32,
    /// Packets a link direction holds, including the one on the wire.
    pub queue_capacity: usize,
    pub ttl: u8,
    /// Retransmissions of an unanswered F1 request before it fails.
    pub setup_retries: u8,
    /// Retransmission timeout as a multiple of the estimated path round trip.
    pub retry_rtt_factor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            gtp_header_size: 8,
            bap_header_size: 4,
            control_message_size: crate::f1ap::CONTROL_MESSAGE_SIZE,
            queue_capacity: 256,
            ttl: DEFAULT_TTL,
            setup_retries: 1,
            retry_rtt_factor: 3.0,
        }
    }
}

impl EngineConfig {
    pub fn header_sizes(&self) -> HeaderSizes {
        HeaderSizes {
            gtp: self.gtp_header_size,
            bap: self.bap_header_size,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gtp_header_size == 0 || self.bap_header_size == 0 {
            return Err("header sizes must be positive".into());
        }
        if self.control_message_size == 0 {
            return Err("control_message_size must be positive".into());
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be positive".into());
        }
        if self.ttl == 0 {
            return Err("ttl must be positive".into());
        }
        if !(self.retry_rtt_factor.is_finite() && self.retry_rtt_factor > 0.0) {
            return Err("retry_rtt_factor must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario is invalid: {}", .0.messages().join("; "))]
    Invalid(ValidationReport),
    #[error("link queue full ({0} packets)")]
    QueueOverflow(usize),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Per-run choices that are not part of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub mode: PathMode,
    pub trace_level: TraceLevel,
    /// Replaces the scenario seed.
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn mode(mode: PathMode) -> Self {
        RunOptions {
            mode,
            ..Default::default()
        }
    }
}

/// Timing of one packet on a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub start: SimTime,
    pub finish: SimTime,
    /// Last bit at the far end.
    pub arrival: SimTime,
}

/// One direction of a link: single server, FIFO, bounded buffer.
#[derive(Debug, Clone, Default)]
pub struct LinkQueue {
    busy_until: SimTime,
    finishes: VecDeque<SimTime>,
}

impl LinkQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Packets admitted and not yet fully transmitted at `now`.
    pub fn backlog(&mut self, now: SimTime) -> usize {
        while self.finishes.front().is_some_and(|f| *f <= now) {
            self.finishes.pop_front();
        }
        self.finishes.len()
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    /// Admits a packet of `wire_bytes` at `now`. Service starts when the
    /// previous packet has left; serialization takes `wire_bytes * 8 /
    /// capacity`. An infinite capacity serializes instantly.
    pub fn transmit(
        &mut self,
        now: SimTime,
        wire_bytes: u32,
        capacity: f64,
        propagation: SimTime,
        limit: usize,
    ) -> Result<Transmission, EngineError> {
        if self.backlog(now) >= limit {
            return Err(EngineError::QueueOverflow(limit));
        }
        let start = now.max(self.busy_until);
        let finish = start + serialization(wire_bytes, capacity);
        self.busy_until = finish;
        self.finishes.push_back(finish);
        Ok(Transmission {
            start,
            finish,
            arrival: finish + propagation,
        })
    }
}

pub fn serialization(wire_bytes: u32, capacity: f64) -> SimTime {
    if capacity.is_infinite() {
        SimTime::ZERO
    } else {
        SimTime::from_secs_f64(wire_bytes as f64 * 8.0 / capacity)
    }
}

/// Capacity of `link` when `sender` transmits, bit/s.
pub fn link_capacity(topology: &Scenario, link: LinkId, sender: NodeId) -> Option<f64> {
    let l = topology.links.iter().find(|l| l.id == link)?;
    match &l.medium {
        Medium::Wired { capacity } => Some(*capacity),
        Medium::Radio { carrier } => {
            let tx = topology.node(sender)?;
            let rx = topology.node(l.other(sender)?)?;
            let params = topology.radio_defaults.with_overrides(&l.radio);
            let budget = radio::link_budget(
                carrier,
                tx.tx_power.unwrap_or(0.0),
                tx.position.distance(&rx.position),
                &params,
            );
            let dir = if tx.role.is_du() {
                Direction::Downlink
            } else {
                Direction::Uplink
            };
            Some(radio::shannon_capacity(carrier.bandwidth, budget.snr, dir, &params))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ProcKey {
    du: NodeId,
    request: F1MessageKind,
    ue: Option<NodeId>,
}

#[derive(Debug, Clone)]
struct Pending {
    msg: F1Message,
    new_cell: Option<Carrier>,
}

#[derive(Debug)]
enum EventKind {
    FlowTick(usize),
    Arrive {
        link: LinkId,
        to: NodeId,
        packet: Packet,
    },
    Retransmit {
        key: ProcKey,
        attempt: u8,
    },
    SessionReady(NodeId),
    Directive(usize),
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // BinaryHeap is a max-heap; earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone, Default)]
struct FlowStats {
    injected: u64,
    delivered: u64,
    dropped: u64,
    live: u64,
    latency_ns: u128,
    payload_bytes: u64,
    hops: u64,
    overhead: u64,
    backhaul_overhead: u64,
    max_depth: usize,
}

#[derive(Debug, Clone, Default)]
struct LinkRuntime {
    /// Index 0: endpoint a sends.
    queues: [LinkQueue; 2],
    busy_ns: [u64; 2],
    packets: u64,
    bytes: u64,
    overhead: u64,
    drops: u64,
    max_depth: usize,
}

#[derive(Debug, Clone)]
struct FlowRt {
    ue: NodeId,
    interval: f64,
    next_seq: u64,
}

/// Mutable network state of a run.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Scenario,
    pub control: ControlPlane,
    pub routes: RoutingTable,
    pub teids: TeidAllocator,
    /// Uplink F1 transport path per DU.
    pub paths: BTreeMap<NodeId, Path>,
    next_bap: u16,
}

impl Network {
    fn cu(&self) -> NodeId {
        self.topology.nodes_with_role(Role::Cu).next().expect("validated").id
    }

    fn upf(&self) -> NodeId {
        self.topology.nodes_with_role(Role::Upf).next().expect("validated").id
    }
}

pub struct Simulation {
    config: EngineConfig,
    sizes: HeaderSizes,
    opts: RunOptions,
    seed: u64,
    name: String,
    net: Network,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now: SimTime,
    end: SimTime,
    started: bool,
    links: BTreeMap<LinkId, LinkRuntime>,
    removed: Vec<LinkInfo>,
    next_packet: u64,
    flows: Vec<FlowRt>,
    flow_stats: Vec<FlowStats>,
    deliveries: Vec<FlowDeliveries>,
    pending: BTreeMap<ProcKey, Pending>,
    events: Vec<TraceEvent>,
    totals: Totals,
}

/// Validates and runs `scenario` to its duration.
pub fn run(scenario: &Scenario, opts: RunOptions) -> Result<Trace, EngineError> {
    let mut sim = Simulation::new(scenario, opts)?;
    sim.run_to_end();
    Ok(sim.into_trace())
}

/// Goodput of a flow over `(t0, t1]`, bit/s.
pub fn measure_throughput(trace: &Trace, flow_id: &str, window: (f64, f64)) -> Result<f64, EngineError> {
    Ok(trace.measure_throughput(flow_id, window)?)
}

fn drop_cause(e: &TunnelError) -> DropCause {
    match e {
        TunnelError::TtlExpired { .. } => DropCause::TtlExpired,
        TunnelError::TeidMismatch { .. } | TunnelError::NotGtp | TunnelError::EmptyStack => DropCause::TeidMismatch,
        TunnelError::DepthExceeded(_) => DropCause::DepthExceeded,
        TunnelError::BapMismatch { .. } => DropCause::BapMismatch,
        _ => DropCause::NoRoute,
    }
}

fn request_of(kind: F1MessageKind) -> F1MessageKind {
    match kind {
        F1MessageKind::SetupResponse => F1MessageKind::SetupRequest,
        F1MessageKind::UeContextSetupResponse => F1MessageKind::UeContextSetupRequest,
        F1MessageKind::DuConfigUpdateAck => F1MessageKind::DuConfigUpdate,
        k => k,
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario, opts: RunOptions) -> Result<Simulation, EngineError> {
        let report = scenario.validate_topology();
        if !report.is_valid() {
            return Err(EngineError::Invalid(report));
        }
        let seed = opts.seed.unwrap_or(scenario.seed);
        let config = scenario.engine.clone();
        let mut sim = Simulation {
            sizes: config.header_sizes(),
            config,
            opts,
            seed,
            name: scenario.name.clone(),
            net: Network {
                topology: scenario.clone(),
                control: ControlPlane::new(),
                routes: RoutingTable::new(),
                teids: TeidAllocator::new(seed),
                paths: BTreeMap::new(),
                next_bap: 1,
            },
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            end: SimTime::from_secs_f64(scenario.duration),
            started: false,
            links: BTreeMap::new(),
            removed: Vec::new(),
            next_packet: 1,
            flows: Vec::new(),
            flow_stats: vec![FlowStats::default(); scenario.flows.len()],
            deliveries: Vec::new(),
            pending: BTreeMap::new(),
            events: Vec::new(),
            totals: Totals::default(),
        };
        for (i, f) in scenario.flows.iter().enumerate() {
            let ue = match scenario.node(f.src).map(|n| n.role) {
                Some(Role::Upf) => f.dst,
                _ => f.src,
            };
            sim.flows.push(FlowRt {
                ue,
                interval: f.packet_size as f64 * 8.0 / f.rate,
                next_seq: 0,
            });
            sim.deliveries.push(FlowDeliveries {
                flow_id: f.id.clone(),
                ..Default::default()
            });
            if f.start <= scenario.duration && f.start < f.stop {
                sim.schedule(SimTime::from_secs_f64(f.start), EventKind::FlowTick(i));
            }
        }
        for (i, d) in scenario.schedule.iter().enumerate() {
            if d.at <= scenario.duration {
                sim.schedule(SimTime::from_secs_f64(d.at), EventKind::Directive(i));
            }
        }
        Ok(sim)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Processes every event up to and including `t` (capped at the
    /// scenario duration).
    pub fn run_until(&mut self, t: SimTime) {
        if !self.started {
            self.started = true;
            self.bring_up_donors();
        }
        let limit = t.min(self.end);
        while self.queue.peek().is_some_and(|e| e.time <= limit) {
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.dispatch(ev.kind);
        }
        self.now = self.now.max(limit);
    }

    pub fn run_to_end(&mut self) {
        self.run_until(self.end);
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn full(&self) -> bool {
        self.opts.trace_level == TraceLevel::Full
    }

    fn t_ns(&self) -> u64 {
        self.now.as_nanos()
    }

    fn record_transition(&mut self, tr: Transition, peer: Option<NodeId>) {
        self.events.push(TraceEvent::StateTransition {
            t_ns: self.now.as_nanos(),
            entity: tr.entity,
            from: tr.from.to_string(),
            to: tr.to.to_string(),
            cause: tr.cause,
            peer,
        });
    }

    fn directive_failed(&mut self, action: &str, error: String) {
        self.totals.directive_failures += 1;
        self.events.push(TraceEvent::DirectiveFailed {
            t_ns: self.t_ns(),
            action: action.to_string(),
            error,
        });
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::FlowTick(i) => self.inject(i),
            EventKind::Arrive { link, to, packet } => {
                if self.net.topology.links.iter().any(|l| l.id == link) {
                    self.handle_at_node(to, packet);
                } else {
                    self.drop_packet(to, packet, DropCause::LinkDown);
                }
            }
            EventKind::Retransmit { key, attempt } => self.retransmit(key, attempt),
            EventKind::SessionReady(mt) => self.session_ready(mt),
            EventKind::Directive(i) => self.apply_directive(i),
        }
    }

    // ---- packet plane ----

    fn inject(&mut self, i: usize) {
        let spec = self.net.topology.flows[i].clone();
        let rt = &mut self.flows[i];
        let seq = rt.next_seq;
        rt.next_seq += 1;
        let (ue, interval) = (rt.ue, rt.interval);
        let next = spec.start + (seq + 1) as f64 * interval;
        if next < spec.stop {
            let t = SimTime::from_secs_f64(next);
            if t <= self.end {
                self.schedule(t, EventKind::FlowTick(i));
            }
        }
        let id = self.next_packet;
        self.next_packet += 1;
        let mut p = Packet::user(id, i as u32, seq, spec.src, spec.dst, spec.packet_size, self.now);
        p.ttl = self.config.ttl;
        self.flow_stats[i].injected += 1;
        if self.full() {
            self.events.push(TraceEvent::Inject {
                t_ns: self.t_ns(),
                packet: id,
                flow: i as u32,
                seq,
                node: spec.src,
                payload: spec.packet_size,
            });
        }
        if !self.net.control.is_connected(ue) {
            self.flow_stats[i].dropped += 1;
            self.record_drop(spec.src, &p, DropCause::NotConnected);
            return;
        }
        self.flow_stats[i].live += 1;
        self.handle_at_node(spec.src, p);
    }

    fn handle_at_node(&mut self, node: NodeId, packet: Packet) {
        let before = packet.depth();
        match forward(&self.net.routes, node, packet, &self.sizes) {
            Ok(Forwarded::Consumed(p)) => self.consume(node, p),
            Ok(Forwarded::Next { next_hop, packet }) => {
                let op = match packet.depth().cmp(&before) {
                    Ordering::Greater => HeaderOp::Push,
                    Ordering::Less => HeaderOp::Pop,
                    Ordering::Equal => HeaderOp::Forward,
                };
                self.send_on(node, next_hop, packet, op);
            }
            Err((e, p)) => {
                let cause = drop_cause(&e);
                self.drop_packet(node, p, cause);
            }
        }
    }

    fn send_on(&mut self, node: NodeId, next: NodeId, packet: Packet, op: HeaderOp) {
        let Some(link) = self.net.topology.link_between(node, next) else {
            return self.drop_packet(node, packet, DropCause::LinkDown);
        };
        let (link_id, prop, side) = (
            link.id,
            SimTime::from_secs_f64(link.propagation_delay),
            usize::from(link.endpoints.0 != node),
        );
        let access = self.is_access(link_id);
        let capacity = link_capacity(&self.net.topology, link_id, node).unwrap_or(0.0);
        if !(capacity > 0.0) {
            return self.drop_packet(node, packet, DropCause::NoCapacity);
        }
        let wire = packet.wire_size();
        let overhead = (wire - packet.payload_size) as u64;
        let depth = packet.depth();
        let (now, end, limit) = (self.now, self.end, self.config.queue_capacity);
        let rt = self.links.entry(link_id).or_default();
        let tx = match rt.queues[side].transmit(now, wire, capacity, prop, limit) {
            Ok(tx) => tx,
            Err(_) => {
                rt.drops += 1;
                return self.drop_packet(node, packet, DropCause::QueueOverflow);
            }
        };
        rt.busy_ns[side] += tx.finish.min(end).as_nanos() - tx.start.min(end).as_nanos();
        rt.packets += 1;
        rt.bytes += wire as u64;
        rt.overhead += overhead;
        rt.max_depth = rt.max_depth.max(depth);
        if let Some(f) = packet.flow() {
            let s = &mut self.flow_stats[f as usize];
            s.hops += 1;
            s.overhead += overhead;
            if !access {
                s.backhaul_overhead += overhead;
            }
            s.max_depth = s.max_depth.max(depth);
        }
        if self.full() {
            self.events.push(TraceEvent::Forward {
                t_ns: now.as_nanos(),
                node,
                packet: packet.id,
                flow: packet.flow(),
                op,
                next_hop: next,
                link: link_id,
                depth,
                wire_size: wire,
                teids: packet.teids(),
            });
        }
        self.schedule(
            tx.arrival,
            EventKind::Arrive {
                link: link_id,
                to: next,
                packet,
            },
        );
    }

    fn is_access(&self, link: LinkId) -> bool {
        let t = &self.net.topology;
        t.links.iter().find(|l| l.id == link).is_some_and(|l| {
            [l.endpoints.0, l.endpoints.1]
                .iter()
                .any(|n| t.node(*n).is_some_and(|n| n.role == Role::Ue))
        })
    }

    fn consume(&mut self, node: NodeId, p: Packet) {
        match &p.kind {
            PacketKind::User { flow, seq } => {
                let (flow, seq) = (*flow as usize, *seq);
                let latency = self.now - p.created_at;
                let s = &mut self.flow_stats[flow];
                s.delivered += 1;
                s.live -= 1;
                s.latency_ns += latency.as_nanos() as u128;
                s.payload_bytes += p.payload_size as u64;
                let d = &mut self.deliveries[flow];
                d.times.push(self.now);
                d.payloads.push(p.payload_size);
                d.seqs.push(seq);
                if self.full() {
                    self.events.push(TraceEvent::Deliver {
                        t_ns: self.t_ns(),
                        node,
                        packet: p.id,
                        flow: Some(flow as u32),
                        kind: None,
                        association: None,
                        payload: p.payload_size,
                        latency_ns: latency.as_nanos(),
                        hop_log: p.hop_log,
                    });
                }
            }
            PacketKind::Control(_) => self.receive_f1(node, p),
        }
    }

    fn record_drop(&mut self, node: NodeId, p: &Packet, cause: DropCause) {
        if self.full() {
            self.events.push(TraceEvent::Drop {
                t_ns: self.t_ns(),
                node,
                packet: p.id,
                flow: p.flow(),
                cause,
                depth: p.depth(),
                wire_size: p.wire_size(),
                teids: p.teids(),
            });
        }
    }

    fn drop_packet(&mut self, node: NodeId, p: Packet, cause: DropCause) {
        self.record_drop(node, &p, cause);
        match &p.kind {
            PacketKind::User { flow, .. } => {
                let s = &mut self.flow_stats[*flow as usize];
                s.dropped += 1;
                s.live -= 1;
            }
            PacketKind::Control(msg) => {
                if cause == DropCause::LinkDown {
                    let key = ProcKey {
                        du: msg.association,
                        request: request_of(msg.kind),
                        ue: msg.ue,
                    };
                    if self.pending.remove(&key).is_some() {
                        let err = F1Error::TransportDown(msg.association).to_string();
                        self.fail_procedure(key, &err);
                    }
                }
            }
        }
    }

    // ---- F1 procedures ----

    fn send_f1(&mut self, msg: F1Message) {
        let du = msg.association;
        let cu = self.net.cu();
        let (src, dst) = if msg.kind.is_uplink() { (du, cu) } else { (cu, du) };
        let id = self.next_packet;
        self.next_packet += 1;
        self.totals.control_messages_sent += 1;
        if self.full() {
            self.events.push(TraceEvent::SendF1 {
                t_ns: self.t_ns(),
                packet: id,
                kind: msg.kind,
                association: du,
                attempt: msg.attempt,
                from: src,
                to: dst,
            });
        }
        let mut p = Packet::control(id, msg, src, dst, self.config.control_message_size, self.now);
        p.ttl = self.config.ttl;
        self.handle_at_node(src, p);
    }

    /// Sends a request and arms its retransmission timer.
    fn start_procedure(&mut self, msg: F1Message, new_cell: Option<Carrier>) {
        let key = ProcKey {
            du: msg.association,
            request: msg.kind,
            ue: msg.ue,
        };
        self.pending.insert(
            key,
            Pending {
                msg: msg.clone(),
                new_cell,
            },
        );
        self.arm_timer(key, msg.attempt);
        self.send_f1(msg);
    }

    fn arm_timer(&mut self, key: ProcKey, attempt: u8) {
        let rtt = self.path_rtt(key.du);
        let t = self.now + SimTime::from_secs_f64(self.config.retry_rtt_factor * rtt);
        self.schedule(t, EventKind::Retransmit { key, attempt });
    }

    /// Round trip of one control message over the DU's transport,
    /// including the current backlog of every queue it passes.
    fn path_rtt(&mut self, du: NodeId) -> f64 {
        let Some(path) = self.net.paths.get(&du).cloned() else {
            return 0.0;
        };
        let mut total = 0.0;
        let mut legs: Vec<(NodeId, NodeId)> = path.legs().collect();
        legs.extend(path.reversed().legs());
        for (a, b) in legs {
            let Some(l) = self.net.topology.link_between(a, b) else { continue };
            let (id, prop, side) = (l.id, l.propagation_delay, usize::from(l.endpoints.0 != a));
            let cap = link_capacity(&self.net.topology, id, a).unwrap_or(f64::INFINITY);
            let wait = self.links.get(&id).map_or(0.0, |rt| {
                rt.queues[side].busy_until().as_secs_f64() - self.now.as_secs_f64()
            });
            total += prop + serialization(self.config.control_message_size, cap).as_secs_f64() + wait.max(0.0);
        }
        total
    }

    fn retransmit(&mut self, key: ProcKey, attempt: u8) {
        let Some(p) = self.pending.get_mut(&key) else { return };
        if p.msg.attempt != attempt {
            return;
        }
        if attempt < self.config.setup_retries {
            p.msg.attempt += 1;
            let msg = p.msg.clone();
            self.arm_timer(key, msg.attempt);
            self.send_f1(msg);
        } else {
            self.pending.remove(&key);
            self.fail_procedure(key, "retries_exhausted");
        }
    }

    fn fail_procedure(&mut self, key: ProcKey, cause: &str) {
        match key.request {
            F1MessageKind::SetupRequest => {
                if let Ok(tr) = self.net.control.f1_setup_failed(key.du, cause) {
                    self.record_transition(tr, None);
                }
            }
            F1MessageKind::UeContextSetupRequest => {
                if let Some(ue) = key.ue {
                    if let Ok(tr) = self.net.control.ue_attach_failed(ue, cause) {
                        self.record_transition(tr, Some(key.du));
                    }
                }
            }
            _ => self.directive_failed("du_config_update", cause.to_string()),
        }
    }

    fn receive_f1(&mut self, node: NodeId, p: Packet) {
        let PacketKind::Control(msg) = &p.kind else { unreachable!() };
        let msg = msg.clone();
        let live = self
            .net
            .control
            .association(msg.association)
            .is_some_and(|a| matches!(a.state, crate::f1ap::AssocState::SetupRequested | crate::f1ap::AssocState::Active));
        if !live {
            return self.drop_packet(node, p, DropCause::AssociationInactive);
        }
        self.totals.control_messages_delivered += 1;
        if self.full() {
            self.events.push(TraceEvent::Deliver {
                t_ns: self.t_ns(),
                node,
                packet: p.id,
                flow: None,
                kind: Some(msg.kind),
                association: Some(msg.association),
                payload: p.payload_size,
                latency_ns: (self.now - p.created_at).as_nanos(),
                hop_log: p.hop_log,
            });
        }
        let du = msg.association;
        let reply = |kind| F1Message {
            kind,
            cell: None,
            cause: None,
            ..msg.clone()
        };
        match msg.kind {
            F1MessageKind::SetupRequest
            | F1MessageKind::UeContextSetupRequest
            | F1MessageKind::DuConfigUpdate => {
                let r = reply(msg.kind.response().expect("request"));
                self.send_f1(r);
            }
            kind => {
                let key = ProcKey {
                    du,
                    request: request_of(kind),
                    ue: msg.ue,
                };
                let Some(pending) = self.pending.remove(&key) else { return };
                match kind {
                    F1MessageKind::SetupResponse => {
                        if let Ok(tr) = self.net.control.f1_setup_complete(du) {
                            self.record_transition(tr, None);
                            self.try_attach_all();
                        }
                    }
                    F1MessageKind::UeContextSetupResponse => {
                        if let Some(ue) = msg.ue {
                            self.complete_attach(ue);
                        }
                    }
                    _ => {
                        if let Some(cell) = pending.new_cell {
                            self.apply_cell(du, cell);
                        }
                    }
                }
            }
        }
    }

    fn apply_cell(&mut self, du: NodeId, cell: Carrier) {
        let t = &mut self.net.topology;
        if let Some(n) = t.nodes.iter_mut().find(|n| n.id == du) {
            n.cell = Some(cell.clone());
        }
        for l in t.links.iter_mut() {
            if (l.endpoints.0 == du || l.endpoints.1 == du) && l.medium.is_radio() {
                l.medium = Medium::Radio { carrier: cell.clone() };
            }
        }
        self.events.push(TraceEvent::CellReconfigured {
            t_ns: self.now.as_nanos(),
            du,
            band_label: cell.band_label,
            bandwidth: cell.bandwidth,
        });
    }

    fn install_transport(&mut self, du: NodeId, path: Path, transport: Transport) -> Result<(), TunnelError> {
        let mut n = install_routes(&mut self.net.routes, &self.net.topology, &path, &transport)?.len();
        n += install_routes(&mut self.net.routes, &self.net.topology, &path.reversed(), &transport)?.len();
        self.events.push(TraceEvent::PathInstalled {
            t_ns: self.now.as_nanos(),
            du,
            mode: path.mode,
            hops: path.hops.clone(),
            routes: n,
        });
        self.net.paths.insert(du, path);
        Ok(())
    }

    fn start_f1_setup(&mut self, du: NodeId, path: Path) {
        let cu = self.net.cu();
        match self.net.control.f1_setup(cu, du, path) {
            Ok(tr) => self.record_transition(tr, None),
            Err(e) => return self.directive_failed("f1_setup", e.to_string()),
        }
        let mut msg = F1Message::new(F1MessageKind::SetupRequest, du);
        if let Some(cell) = self.net.topology.node(du).and_then(|n| n.cell.clone()) {
            msg = msg.with_cell(&cell);
        }
        self.start_procedure(msg, None);
    }

    fn bring_up_donors(&mut self) {
        let donors: Vec<NodeId> = self.net.topology.nodes_with_role(Role::DonorDu).map(|n| n.id).collect();
        for du in donors {
            let r = build_f1_transport_path(&self.net.topology, &self.net.control, du, self.opts.mode)
                .and_then(|path| {
                    self.install_transport(du, path.clone(), Transport::Direct)?;
                    Ok(path)
                });
            match r {
                Ok(path) => self.start_f1_setup(du, path),
                Err(e) => self.directive_failed("f1_setup", e.to_string()),
            }
        }
    }

    /// Received power of `du`'s cell at `node`, if it covers it.
    fn coverage(&self, du: NodeId, node: NodeId) -> Option<f64> {
        let t = &self.net.topology;
        let (d, n) = (t.node(du)?, t.node(node)?);
        let (cell, tx) = (d.cell.as_ref()?, d.tx_power?);
        let b = radio::link_budget(cell, tx, d.position.distance(&n.position), &t.radio_defaults);
        (b.rx_power >= t.radio_defaults.coverage_rsrp_threshold).then_some(b.rx_power)
    }

    /// Starts attaching every detached UE and IAB-MT to the strongest
    /// covering DU whose association is active.
    fn try_attach_all(&mut self) {
        let t = &self.net.topology;
        let candidates: Vec<(NodeId, Role, Option<String>)> = t
            .nodes
            .iter()
            .filter(|n| matches!(n.role, Role::Ue | Role::IabMt))
            .filter(|n| {
                self.net
                    .control
                    .ue_context(n.id)
                    .is_none_or(|c| c.state == crate::f1ap::UeState::Detached)
            })
            .map(|n| (n.id, n.role, n.owner_group.clone()))
            .collect();
        for (ue, role, group) in candidates {
            let t = &self.net.topology;
            let best = t
                .nodes
                .iter()
                .filter(|d| match role {
                    Role::IabMt => d.role == Role::DonorDu,
                    _ => d.role.is_du(),
                })
                .filter(|d| group.is_none() || d.owner_group != group)
                .filter(|d| self.net.control.association(d.id).is_some_and(|a| a.is_active()))
                .filter_map(|d| self.coverage(d.id, ue).map(|rx| (d.id, rx)))
                .fold(None, |best: Option<(NodeId, f64)>, (d, rx)| match best {
                    Some((_, b)) if b >= rx => best,
                    _ => Some((d, rx)),
                });
            if let Some((du, _)) = best {
                self.start_attach(ue, du);
            }
        }
    }

    fn start_attach(&mut self, ue: NodeId, du: NodeId) {
        if self.net.topology.link_between(du, ue).is_none() {
            match self.net.topology.add_link(du, ue, LinkSpec::radio(None)) {
                Ok(id) => self.events.push(TraceEvent::LinkAdded {
                    t_ns: self.now.as_nanos(),
                    link: id,
                    a: du,
                    b: ue,
                    radio: true,
                }),
                Err(e) => return self.directive_failed("ue_attach", e.to_string()),
            }
        }
        let cu = self.net.cu();
        match self.net.control.ue_attach(ue, du, cu, true) {
            Ok(tr) => self.record_transition(tr, Some(du)),
            Err(e) => return self.directive_failed("ue_attach", e.to_string()),
        }
        self.start_procedure(F1Message::new(F1MessageKind::UeContextSetupRequest, du).with_ue(ue), None);
    }

    fn complete_attach(&mut self, ue: NodeId) {
        let (cu, upf) = (self.net.cu(), self.net.upf());
        let Some(du) = self.net.control.ue_context(ue).map(|c| c.serving_du) else { return };
        let drb = match (self.net.teids.allocate_tunnel(cu), self.net.teids.allocate_tunnel(du)) {
            (Ok(uplink), Ok(downlink)) => DrbTunnels { uplink, downlink },
            (Err(e), _) | (_, Err(e)) => return self.directive_failed("ue_attach", e.to_string()),
        };
        let role = self.net.topology.node(ue).map(|n| n.role);
        if role == Some(Role::Ue) {
            let Some(path) = self.net.paths.get(&du).cloned() else { return };
            if let Err(e) = install_ue_routes(&mut self.net.routes, ue, du, cu, upf, &path, drb.uplink, drb.downlink) {
                return self.directive_failed("ue_attach", e.to_string());
            }
        }
        match self.net.control.ue_connected(ue, drb) {
            Ok(tr) => self.record_transition(tr, Some(du)),
            Err(e) => return self.directive_failed("ue_attach", e.to_string()),
        }
        if role == Some(Role::IabMt) {
            self.request_session(ue, du);
        }
    }

    /// The IAB-MT's PDU session. NAS/NGAP signalling is not modelled
    /// message by message; the session is up one control round trip
    /// between the MT and the UPF later.
    fn request_session(&mut self, mt: NodeId, donor: NodeId) {
        let (cu, upf) = (self.net.cu(), self.net.upf());
        let tunnels = self
            .net
            .teids
            .allocate_tunnel(upf)
            .and_then(|ul| Ok((ul, self.net.teids.allocate_tunnel(mt)?)));
        let (ul, dl) = match tunnels {
            Ok(t) => t,
            Err(e) => return self.directive_failed("pdu_session", e.to_string()),
        };
        match self.net.control.establish_pdu_session(mt, upf, ul, dl) {
            Ok(tr) => self.record_transition(tr, None),
            Err(e) => return self.directive_failed("pdu_session", e.to_string()),
        }
        let mut rtt = 0.0;
        for (a, b) in [(mt, donor), (donor, cu), (cu, upf)] {
            if let Some(l) = self.net.topology.link_between(a, b) {
                let up = link_capacity(&self.net.topology, l.id, a).unwrap_or(f64::INFINITY);
                let down = link_capacity(&self.net.topology, l.id, b).unwrap_or(f64::INFINITY);
                rtt += 2.0 * l.propagation_delay
                    + serialization(self.config.control_message_size, up).as_secs_f64()
                    + serialization(self.config.control_message_size, down).as_secs_f64();
            }
        }
        if self.full() {
            self.events.push(TraceEvent::Timer {
                t_ns: self.t_ns(),
                kind: "pdu_session".into(),
                subject: mt,
            });
        }
        self.schedule(self.now + SimTime::from_secs_f64(rtt), EventKind::SessionReady(mt));
    }

    fn session_ready(&mut self, mt: NodeId) {
        match self.net.control.pdu_session_established(mt) {
            Ok(tr) => self.record_transition(tr, None),
            Err(e) => return self.directive_failed("pdu_session", e.to_string()),
        }
        let t = &self.net.topology;
        let group = t.node(mt).and_then(|n| n.owner_group.clone());
        let Some(du) = t
            .nodes_with_role(Role::IabDu)
            .find(|d| d.owner_group.is_some() && d.owner_group == group)
            .map(|d| d.id)
        else {
            return;
        };
        let mode = self.opts.mode;
        let r = build_f1_transport_path(&self.net.topology, &self.net.control, du, mode).and_then(|path| {
            let transport = match mode {
                PathMode::UpfReroute => {
                    let s = self.net.control.session(mt).expect("just established");
                    Transport::Session {
                        uplink: s.uplink_tunnel,
                        downlink: s.downlink_tunnel,
                    }
                }
                PathMode::BapBypass => {
                    let b = self.net.next_bap;
                    self.net.next_bap += 2;
                    Transport::Bap {
                        uplink: BapRouteId(b),
                        downlink: BapRouteId(b + 1),
                    }
                }
            };
            self.install_transport(du, path.clone(), transport)?;
            Ok(path)
        });
        match r {
            Ok(path) => self.start_f1_setup(du, path),
            Err(e) => self.directive_failed("f1_setup", e.to_string()),
        }
    }

    // ---- directives ----

    fn apply_directive(&mut self, i: usize) {
        let d = self.net.topology.schedule[i].clone();
        let label = d.action.label();
        self.events.push(TraceEvent::Directive {
            t_ns: self.t_ns(),
            action: label.to_string(),
        });
        if let Err(e) = self.try_directive(d.action) {
            self.directive_failed(label, e);
        }
    }

    fn try_directive(&mut self, action: DirectiveAction) -> Result<(), String> {
        match action {
            DirectiveAction::InstantiateIabNode {
                group,
                position,
                access_carrier,
                mt_tx_power,
                du_tx_power,
            } => {
                let t = &mut self.net.topology;
                if t.nodes.iter().any(|n| n.owner_group.as_deref() == Some(group.as_str())) {
                    return Err(format!("conflicting entry: group `{group}` already exists"));
                }
                if t.best_donor_du(position).is_none() {
                    return Err(crate::topology::TopologyError::NoDonorCoverage(position).to_string());
                }
                access_carrier.check()?;
                let mt = t
                    .add_node(
                        NodeSpec::new(Role::IabMt, position)
                            .tx_power(mt_tx_power)
                            .group(group.clone())
                            .named(format!("{group}-mt")),
                    )
                    .map_err(|e| e.to_string())?;
                let du = t
                    .add_node(
                        NodeSpec::new(Role::IabDu, position)
                            .tx_power(du_tx_power)
                            .group(group.clone())
                            .cell(access_carrier)
                            .named(format!("{group}-du")),
                    )
                    .map_err(|e| e.to_string())?;
                let link = t
                    .add_link(mt, du, LinkSpec::wired(f64::INFINITY).delay(0.0))
                    .map_err(|e| e.to_string())?;
                let now = self.now.as_nanos();
                for id in [mt, du] {
                    let n = self.net.topology.node(id).expect("just added");
                    self.events.push(TraceEvent::NodeAdded {
                        t_ns: now,
                        node: id,
                        name: n.name.clone(),
                        role: n.role,
                    });
                }
                self.events.push(TraceEvent::LinkAdded {
                    t_ns: now,
                    link,
                    a: mt,
                    b: du,
                    radio: false,
                });
                self.try_attach_all();
                Ok(())
            }
            DirectiveAction::DuConfigUpdate { du, carrier } => {
                let node = self
                    .net
                    .topology
                    .node_by_name(&du)
                    .filter(|n| n.role.is_du())
                    .ok_or_else(|| format!("no DU named `{du}`"))?
                    .id;
                carrier.check()?;
                self.net.control.du_config_update(node).map_err(|e| e.to_string())?;
                let msg = F1Message::new(F1MessageKind::DuConfigUpdate, node).with_cell(&carrier);
                self.start_procedure(msg, Some(carrier));
                Ok(())
            }
            DirectiveAction::RemoveLink { endpoints } => {
                let t = &self.net.topology;
                let a = t.node_by_name(&endpoints[0]).ok_or_else(|| format!("unknown node `{}`", endpoints[0]))?.id;
                let b = t.node_by_name(&endpoints[1]).ok_or_else(|| format!("unknown node `{}`", endpoints[1]))?.id;
                let idx = t
                    .links
                    .iter()
                    .position(|l| l.connects(a, b))
                    .ok_or_else(|| format!("no link between `{}` and `{}`", endpoints[0], endpoints[1]))?;
                let info = self.link_info(&self.net.topology.links[idx].clone(), true);
                let link = self.net.topology.links.remove(idx);
                self.removed.push(info);
                self.events.push(TraceEvent::LinkRemoved {
                    t_ns: self.now.as_nanos(),
                    link: link.id,
                });
                Ok(())
            }
        }
    }

    // ---- results ----

    fn link_info(&self, l: &crate::topology::Link, removed: bool) -> LinkInfo {
        let t = &self.net.topology;
        let (a, b) = l.endpoints;
        let finite = |c: Option<f64>| c.filter(|c| c.is_finite());
        LinkInfo {
            id: l.id,
            a,
            b,
            radio: l.medium.is_radio(),
            access: [a, b].iter().any(|n| t.node(*n).is_some_and(|n| n.role == Role::Ue)),
            capacity_ab: finite(link_capacity(t, l.id, a)),
            capacity_ba: finite(link_capacity(t, l.id, b)),
            removed,
        }
    }

    pub fn into_trace(self) -> Trace {
        let t = &self.net.topology;
        let duration = t.duration;
        let nodes: Vec<NodeInfo> = t
            .nodes
            .iter()
            .map(|n| NodeInfo {
                id: n.id,
                name: n.name.clone(),
                role: n.role,
            })
            .collect();
        let mut links: Vec<LinkInfo> = t.links.iter().map(|l| self.link_info(l, false)).collect();
        links.extend(self.removed.iter().cloned());
        links.sort_by_key(|l| l.id);

        let flow_infos: Vec<FlowInfo> = t
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| FlowInfo {
                index: i as u32,
                id: f.id.clone(),
                src: f.src,
                dst: f.dst,
            })
            .collect();
        let mut totals = self.totals.clone();
        let flow_summaries: Vec<FlowSummary> = t
            .flows
            .iter()
            .zip(&self.flow_stats)
            .map(|(f, s)| {
                let active = f.stop.min(duration) - f.start;
                totals.hops_traversed += s.hops;
                totals.overhead_bytes += s.overhead;
                totals.backhaul_overhead_bytes += s.backhaul_overhead;
                FlowSummary {
                    flow_id: f.id.clone(),
                    direction: Some(if t.node(f.src).map(|n| n.role) == Some(Role::Upf) {
                        Direction::Downlink
                    } else {
                        Direction::Uplink
                    }),
                    offered_bps: f.rate,
                    goodput_bps: if active > 0.0 {
                        s.payload_bytes as f64 * 8.0 / active
                    } else {
                        0.0
                    },
                    mean_latency_s: if s.delivered > 0 {
                        s.latency_ns as f64 / s.delivered as f64 * 1e-9
                    } else {
                        0.0
                    },
                    drop_count: s.dropped,
                    injected: s.injected,
                    delivered: s.delivered,
                    dropped: s.dropped,
                    in_flight: s.live,
                    delivered_payload_bytes: s.payload_bytes,
                    hops_traversed: s.hops,
                    overhead_bytes: s.overhead,
                    backhaul_overhead_bytes: s.backhaul_overhead,
                    max_depth: s.max_depth,
                }
            })
            .collect();
        let name = |n: NodeId| nodes.iter().find(|x| x.id == n).map_or_else(|| n.to_string(), |x| x.name.clone());
        let dur_ns = SimTime::from_secs_f64(duration).as_nanos().max(1) as f64;
        let link_summaries = links
            .iter()
            .map(|l| {
                let rt = self.links.get(&l.id).cloned().unwrap_or_default();
                let (ab, ba) = (rt.busy_ns[0] as f64 / dur_ns, rt.busy_ns[1] as f64 / dur_ns);
                LinkSummary {
                    link: l.id,
                    a: name(l.a),
                    b: name(l.b),
                    radio: l.radio,
                    access: l.access,
                    capacity_ab_bps: l.capacity_ab,
                    capacity_ba_bps: l.capacity_ba,
                    utilization: ab.max(ba),
                    utilization_ab: ab,
                    utilization_ba: ba,
                    packets: rt.packets,
                    bytes: rt.bytes,
                    overhead_bytes: rt.overhead,
                    overhead_fraction: if rt.bytes > 0 {
                        rt.overhead as f64 / rt.bytes as f64
                    } else {
                        0.0
                    },
                    drops: rt.drops,
                    max_depth: rt.max_depth,
                }
            })
            .collect();
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            scenario: self.name.clone(),
            seed: self.seed,
            mode: self.opts.mode,
            duration,
            flows: flow_summaries,
            links: link_summaries,
            totals,
        };
        Trace {
            header: TraceHeader {
                schema_version: SCHEMA_VERSION,
                scenario: self.name,
                seed: self.seed,
                mode: self.opts.mode,
                duration,
                trace_level: self.opts.trace_level,
            },
            nodes,
            links,
            flows: flow_infos,
            events: self.events,
            deliveries: self.deliveries,
            summary,
        }
    }
}

/// State transitions recorded for `entity`, in order.
pub fn transitions_of(trace: &Trace, entity: Entity) -> Vec<(SimTime, String)> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::StateTransition { t_ns, entity: en, to, .. } if *en == entity => {
                Some((SimTime(*t_ns), to.clone()))
            }
            _ => None,
        })
        .collect()
}
