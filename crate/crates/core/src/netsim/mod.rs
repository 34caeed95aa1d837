//! Deterministic discrete-event network.
//!
//! Nodes exchange datagrams over a full mesh with a fixed latency and
//! seeded i.i.d. loss and duplication. The scheduler owns the virtual
//! clock and drives every transport task in a fixed order: per processed
//! tick, all due events (deliveries, timer wake-ups, migration phases)
//! run first, then each node steps its contexts: responders, completers,
//! requesters, timers, with nodes in address order and QPs in QPN order.
//!
//! One tick is nominally one microsecond; all results are reported in
//! ticks of simulated time.

pub mod trace;

use crate::addr::{Gid, NodeAddress};
use crate::error::VerbsError;
use crate::migrator::{self, MigrationSpec, MigrationState};
use crate::rng::{splitmix64, XorShift64Star};
use crate::transport::{self, packet::Opcode, packet::Packet, Emit, TaskOutput};
use crate::verbs::{QpState, VerbsContext};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use trace::{Dir, Trace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub seed: u64,
    pub latency_ticks: u32,
    pub loss_rate: f64,
    pub dup_rate: f64,
    pub max_ticks: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            seed: 0,
            latency_ticks: 1,
            loss_rate: 0.0,
            dup_rate: 0.0,
            max_ticks: 1_000_000,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), VerbsError> {
        if self.latency_ticks < 1 {
            return Err(VerbsError::InvalidArgument("latency must be >= 1 tick".into()));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(VerbsError::InvalidArgument("loss_rate must be in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.dup_rate) {
            return Err(VerbsError::InvalidArgument("dup_rate must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// What travels in one simulated datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Datagram {
    Packet(Vec<u8>),
    /// One chunk of a checkpoint image in flight; the image bytes
    /// themselves stay with the migration state.
    MigrationChunk { migration: usize, index: u32, len: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Deliver { dest: Gid, datagram: Datagram },
    /// Lazy timer wake-up; deadlines on the QP decide what fires.
    Timer { node: usize, qpn: u32 },
    /// External wake-up (scenario traffic scheduling).
    Wake,
    MigrationTrigger { index: usize },
    MigrationRestore { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EventEntry {
    at: u64,
    seq: u64,
    kind: EventKind,
}

impl Ord for EventEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for EventEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
pub struct Node {
    pub name: String,
    pub addr: NodeAddress,
    pub contexts: Vec<VerbsContext>,
    inbox: Vec<Packet>,
    /// QPNs that migrated away from this node, with their new location.
    /// Only resume messages are forwarded; anything else addressed to a
    /// migrated-away QP is dropped.
    pub resume_forwards: BTreeMap<u32, Gid>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub dropped_loss: u64,
    pub dropped_unroutable: u64,
    pub duplicated: u64,
    pub forwarded: u64,
    pub chunks_delivered: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEntry {
    pub tick: u64,
    pub node: usize,
    pub ctx_id: u32,
    pub qpn: u32,
    pub from: QpState,
    pub to: QpState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// The per-tick callback asked to stop.
    Stopped,
    /// Event queue empty and no QP has pending work.
    Quiesced,
    /// Tick budget exhausted first.
    TickBudget,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub outcome: RunOutcome,
    pub end_tick: u64,
    pub counters: Counters,
    pub qp_states: BTreeMap<QpState, u64>,
    pub migrations: Vec<crate::migrator::MigrationReport>,
}

pub struct Simulator {
    pub cfg: NetConfig,
    now: u64,
    ticked: bool,
    seq: u64,
    queue: BinaryHeap<Reverse<EventEntry>>,
    rng: XorShift64Star,
    pub nodes: Vec<Node>,
    gid_index: BTreeMap<Gid, usize>,
    step_order: Vec<usize>,
    pub trace: Trace,
    pub timeline: Vec<TimelineEntry>,
    pub counters: Counters,
    pub migrations: Vec<MigrationState>,
    known_ctxs: BTreeSet<u32>,
}

impl Simulator {
    pub fn new(cfg: NetConfig) -> Result<Self, VerbsError> {
        cfg.validate()?;
        Ok(Simulator {
            cfg,
            now: 0,
            ticked: false,
            seq: 0,
            queue: BinaryHeap::new(),
            rng: XorShift64Star::new(splitmix64(cfg.seed)),
            nodes: Vec::new(),
            gid_index: BTreeMap::new(),
            step_order: Vec::new(),
            trace: Trace::default(),
            timeline: Vec::new(),
            counters: Counters::default(),
            migrations: Vec::new(),
            known_ctxs: BTreeSet::new(),
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn attach_node(&mut self, name: &str, gid_seed: u64) -> Result<usize, VerbsError> {
        let lid = self.nodes.len() as u16 + 1;
        let addr = NodeAddress::from_seed(gid_seed, lid);
        if self.gid_index.contains_key(&addr.gid) {
            return Err(VerbsError::InvalidArgument(format!(
                "gid seed {gid_seed} collides with an attached node"
            )));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            name: name.to_string(),
            addr,
            contexts: Vec::new(),
            inbox: Vec::new(),
            resume_forwards: BTreeMap::new(),
        });
        self.gid_index.insert(addr.gid, idx);
        // Nodes step in address order.
        self.step_order = (0..self.nodes.len()).collect();
        self.step_order.sort_by_key(|&i| self.nodes[i].addr.gid);
        Ok(idx)
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn node_by_gid(&self, gid: Gid) -> Option<usize> {
        self.gid_index.get(&gid).copied()
    }

    pub fn create_context(
        &mut self,
        node: usize,
        ctx_id: u32,
        qpn_range: (u32, u32),
        mrn_range: (u32, u32),
    ) -> Result<(), VerbsError> {
        if self.known_ctxs.contains(&ctx_id) {
            return Err(VerbsError::InvalidArgument(format!("ctx {ctx_id} already exists")));
        }
        let addr = self.nodes[node].addr;
        let key_seed = splitmix64(self.cfg.seed ^ splitmix64(addr.guid) ^ ctx_id as u64);
        let ctx = VerbsContext::new(ctx_id, addr, key_seed, qpn_range, mrn_range);
        self.nodes[node].contexts.push(ctx);
        self.known_ctxs.insert(ctx_id);
        Ok(())
    }

    pub(crate) fn adopt_context(&mut self, node: usize, ctx: VerbsContext) {
        // A context arriving by restore re-occupies its QPNs locally.
        for qpn in ctx.qps.keys() {
            self.nodes[node].resume_forwards.remove(qpn);
        }
        self.known_ctxs.insert(ctx.ctx_id);
        self.nodes[node].contexts.push(ctx);
    }

    pub fn ctx_known(&self, ctx_id: u32) -> bool {
        self.known_ctxs.contains(&ctx_id)
    }

    pub fn locate_ctx(&self, ctx_id: u32) -> Option<(usize, usize)> {
        for (ni, node) in self.nodes.iter().enumerate() {
            if let Some(ci) = node.contexts.iter().position(|c| c.ctx_id == ctx_id) {
                return Some((ni, ci));
            }
        }
        None
    }

    pub fn ctx(&self, ctx_id: u32) -> Option<&VerbsContext> {
        self.locate_ctx(ctx_id).map(|(ni, ci)| &self.nodes[ni].contexts[ci])
    }

    pub fn ctx_mut(&mut self, ctx_id: u32) -> Option<&mut VerbsContext> {
        let (ni, ci) = self.locate_ctx(ctx_id)?;
        Some(&mut self.nodes[ni].contexts[ci])
    }

    pub(crate) fn schedule(&mut self, at: u64, kind: EventKind) {
        debug_assert!(at >= self.now);
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(EventEntry { at, seq, kind }));
    }

    /// Schedule an external wake-up so `run`'s per-tick callback gets a
    /// chance to act at `at` even if the network is otherwise idle.
    pub fn schedule_wake(&mut self, at: u64) {
        self.schedule(at.max(self.now), EventKind::Wake);
    }

    /// Register a migration and arm its trigger.
    pub fn schedule_migration(&mut self, spec: MigrationSpec) -> Result<usize, VerbsError> {
        migrator::validate_spec(self, &spec)?;
        let index = self.migrations.len();
        let at = spec.trigger_tick.max(self.now);
        self.migrations.push(MigrationState::new(spec));
        self.schedule(at, EventKind::MigrationTrigger { index });
        Ok(index)
    }

    /// Transmit one packet from a node, applying loss and duplication.
    pub fn send_packet(&mut self, src_node: usize, emit: Emit) {
        self.send_packet_dir(src_node, emit, Dir::Snd);
    }

    fn send_packet_dir(&mut self, src_node: usize, emit: Emit, dir: Dir) {
        let now = self.now;
        self.counters.packets_sent += 1;
        if dir == Dir::Fwd {
            self.counters.forwarded += 1;
        }
        self.trace.push_packet(now, dir, Some(src_node), emit.src_qpn, &emit.packet);
        if self.rng.chance(self.cfg.loss_rate) {
            self.counters.dropped_loss += 1;
            self.trace.push_packet(now, Dir::Drp, Some(src_node), emit.src_qpn, &emit.packet);
            return;
        }
        let bytes = emit.packet.encode();
        let at = now + self.cfg.latency_ticks as u64;
        let duplicate = self.rng.chance(self.cfg.dup_rate);
        if duplicate {
            self.counters.duplicated += 1;
            self.schedule(
                at,
                EventKind::Deliver { dest: emit.dst, datagram: Datagram::Packet(bytes.clone()) },
            );
            self.schedule(
                at + 1,
                EventKind::Deliver { dest: emit.dst, datagram: Datagram::Packet(bytes) },
            );
        } else {
            self.schedule(
                at,
                EventKind::Deliver { dest: emit.dst, datagram: Datagram::Packet(bytes) },
            );
        }
    }

    /// Image chunks model a reliable in-band transfer stream: they share
    /// the link latency but are exempt from loss and duplication.
    pub(crate) fn send_chunk(&mut self, dest: Gid, migration: usize, index: u32, len: u32, at: u64) {
        self.schedule(
            at,
            EventKind::Deliver {
                dest,
                datagram: Datagram::MigrationChunk { migration, index, len },
            },
        );
    }

    fn handle_deliver(&mut self, dest: Gid, datagram: Datagram) {
        let Some(&node_idx) = self.gid_index.get(&dest) else {
            // Routing black hole.
            self.counters.dropped_unroutable += 1;
            if let Datagram::Packet(bytes) = &datagram {
                if let Ok(pkt) = Packet::decode(bytes) {
                    self.trace.push_packet(self.now, Dir::Drp, None, pkt.dest_qpn, &pkt);
                }
            }
            return;
        };
        match datagram {
            Datagram::Packet(bytes) => match Packet::decode(&bytes) {
                Ok(pkt) => {
                    self.counters.packets_delivered += 1;
                    self.trace.push_packet(self.now, Dir::Rcv, Some(node_idx), pkt.dest_qpn, &pkt);
                    self.nodes[node_idx].inbox.push(pkt);
                }
                Err(_) => {
                    self.counters.dropped_unroutable += 1;
                }
            },
            Datagram::MigrationChunk { index, len, .. } => {
                self.counters.chunks_delivered += 1;
                self.trace.push_xfer(self.now, Dir::Rcv, Some(node_idx), index, len);
            }
        }
    }

    fn process_events_at(&mut self, t: u64) {
        loop {
            match self.queue.peek() {
                Some(Reverse(e)) if e.at <= t => {}
                _ => break,
            }
            let Reverse(e) = self.queue.pop().unwrap();
            debug_assert!(e.at == t, "event in the past");
            match e.kind {
                EventKind::Deliver { dest, datagram } => self.handle_deliver(dest, datagram),
                EventKind::Timer { .. } | EventKind::Wake => {}
                EventKind::MigrationTrigger { index } => migrator::on_trigger(self, index),
                EventKind::MigrationRestore { index } => migrator::on_restore(self, index),
            }
        }
    }

    /// Route this node's inbox to (context position, packet) pairs.
    /// Resume packets for migrated-away QPNs are forwarded to the QP's
    /// new node; anything else unroutable is dropped.
    fn resolve_inbox(&mut self, node_idx: usize) -> Vec<(usize, Packet)> {
        let inbox = std::mem::take(&mut self.nodes[node_idx].inbox);
        let mut resolved = Vec::with_capacity(inbox.len());
        let mut forwards: Vec<(Gid, Packet)> = Vec::new();
        let mut drops: Vec<Packet> = Vec::new();
        {
            let node = &self.nodes[node_idx];
            for pkt in inbox {
                match node.contexts.iter().position(|c| c.qps.contains_key(&pkt.dest_qpn)) {
                    Some(pos) => resolved.push((pos, pkt)),
                    None => match node.resume_forwards.get(&pkt.dest_qpn) {
                        Some(&dst) if pkt.opcode == Opcode::Resume => forwards.push((dst, pkt)),
                        _ => drops.push(pkt),
                    },
                }
            }
        }
        for pkt in drops {
            self.counters.dropped_unroutable += 1;
            self.trace.push_packet(self.now, Dir::Drp, Some(node_idx), pkt.dest_qpn, &pkt);
        }
        for (dst, pkt) in forwards {
            let src_qpn = pkt.dest_qpn;
            self.send_packet_dir(node_idx, Emit { dst, src_qpn, packet: pkt }, Dir::Fwd);
        }
        resolved
    }

    fn run_task(
        &mut self,
        node_idx: usize,
        ctx_pos: usize,
        qpn: u32,
        out: &mut TaskOutput,
        timer_reqs: &mut Vec<(u64, u32)>,
        f: impl FnOnce(&mut crate::verbs::QueuePair, &mut VerbsContext, &mut TaskOutput),
    ) {
        let ctx = &mut self.nodes[node_idx].contexts[ctx_pos];
        if let Some(mut qp) = ctx.qps.remove(&qpn) {
            f(&mut qp, ctx, out);
            ctx.qps.insert(qpn, qp);
        }
        for dl in out.wakeups.drain(..) {
            timer_reqs.push((dl, qpn));
        }
    }

    fn step_node(&mut self, node_idx: usize) {
        let now = self.now;
        let inbox = self.resolve_inbox(node_idx);
        let mut out = TaskOutput::default();
        let mut timer_reqs: Vec<(u64, u32)> = Vec::new();

        // Responders first: data and resume packets in arrival order.
        for (ctx_pos, pkt) in inbox.iter().filter(|(_, p)| p.opcode != Opcode::Ack) {
            self.run_task(node_idx, *ctx_pos, pkt.dest_qpn, &mut out, &mut timer_reqs, |qp, ctx, o| {
                if pkt.opcode == Opcode::Resume {
                    transport::handle_resume(qp, ctx, pkt, now, o);
                } else {
                    transport::responder_handle(qp, ctx, pkt, now, o);
                }
            });
        }
        // Completers: acknowledgements in arrival order.
        for (ctx_pos, pkt) in inbox.iter().filter(|(_, p)| p.opcode == Opcode::Ack) {
            self.run_task(node_idx, *ctx_pos, pkt.dest_qpn, &mut out, &mut timer_reqs, |qp, ctx, o| {
                transport::completer_handle(qp, ctx, pkt, now, o);
            });
        }
        // Requesters, then timers, per context in creation order and per
        // QP in QPN order.
        let n_ctxs = self.nodes[node_idx].contexts.len();
        for ctx_pos in 0..n_ctxs {
            let qpns: Vec<u32> =
                self.nodes[node_idx].contexts[ctx_pos].qps.keys().copied().collect();
            for &qpn in &qpns {
                self.run_task(node_idx, ctx_pos, qpn, &mut out, &mut timer_reqs, |qp, ctx, o| {
                    transport::requester_step(qp, ctx, now, o);
                });
            }
            for &qpn in &qpns {
                self.run_task(node_idx, ctx_pos, qpn, &mut out, &mut timer_reqs, |qp, ctx, o| {
                    transport::timers_fire(qp, ctx, now, o);
                });
            }
        }
        for emit in out.emits.drain(..) {
            self.send_packet(node_idx, emit);
        }
        for (at, qpn) in timer_reqs {
            self.schedule(at.max(now), EventKind::Timer { node: node_idx, qpn });
        }
        // Fold any state transitions into the timeline.
        let node = &mut self.nodes[node_idx];
        let mut entries = Vec::new();
        for ctx in &mut node.contexts {
            for tr in ctx.transitions.drain(..) {
                entries.push(TimelineEntry {
                    tick: tr.tick,
                    node: node_idx,
                    ctx_id: ctx.ctx_id,
                    qpn: tr.qpn,
                    from: tr.from,
                    to: tr.to,
                });
            }
        }
        self.timeline.extend(entries);
    }

    fn any_requester_ready(&self) -> bool {
        self.nodes.iter().any(|n| {
            n.contexts
                .iter()
                .any(|c| c.qps.values().any(transport::requester_has_work))
        })
    }

    fn next_activity(&self) -> Option<u64> {
        let ev = self.queue.peek().map(|Reverse(e)| e.at);
        let req = self
            .any_requester_ready()
            .then_some(self.now + u64::from(self.ticked));
        match (ev, req) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Run until quiescent, until the tick budget is exhausted, or until
    /// the per-tick callback returns true. The callback runs after every
    /// processed tick and may post work or schedule wake-ups.
    pub fn run(
        &mut self,
        max_ticks: u64,
        mut on_tick: impl FnMut(&mut Simulator) -> bool,
    ) -> RunOutcome {
        loop {
            let Some(next) = self.next_activity() else {
                return RunOutcome::Quiesced;
            };
            if next > max_ticks {
                return RunOutcome::TickBudget;
            }
            debug_assert!(next > self.now || !self.ticked, "time must advance");
            self.now = next;
            self.ticked = true;
            self.process_events_at(next);
            let order = self.step_order.clone();
            for node_idx in order {
                self.step_node(node_idx);
            }
            if on_tick(self) {
                return RunOutcome::Stopped;
            }
        }
    }

    /// Convenience wrapper: run until a predicate holds.
    pub fn run_until(
        &mut self,
        max_ticks: u64,
        mut pred: impl FnMut(&Simulator) -> bool,
    ) -> RunOutcome {
        self.run(max_ticks, |sim| pred(sim))
    }

    pub fn report(&self, outcome: RunOutcome) -> SimReport {
        let mut qp_states: BTreeMap<QpState, u64> = BTreeMap::new();
        for node in &self.nodes {
            for ctx in &node.contexts {
                for qp in ctx.qps.values() {
                    *qp_states.entry(qp.state).or_insert(0) += 1;
                }
            }
        }
        SimReport {
            outcome,
            end_tick: self.now,
            counters: self.counters,
            qp_states,
            migrations: migrator::finalize_reports(self),
        }
    }

    pub fn render_trace(&self) -> String {
        self.trace.render(&self.node_names())
    }
}
