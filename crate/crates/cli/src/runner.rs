//! Builds a simulation from a scenario, drives the traffic patterns,
//! checks the scenario assertions and renders the outputs.
//!
//! The application model is deliberately simple: each traffic flow posts
//! messages at a fixed interval into a ring of send slots, gated by the
//! number of outstanding completions, and the receiving side keeps its
//! receive queue stocked from a ring of receive slots. A context that is
//! mid-migration is frozen, like the checkpointed process it stands in
//! for, and resumes posting after the restore.

use crate::scenario::{
    Assertions, MrAccess, Scenario, TrafficOpcode, TransferDef,
};
use migrsim_core::migrator::{MigrationSpec, TransferMode};
use migrsim_core::netsim::trace::{Dir, TraceOp};
use migrsim_core::netsim::{RunOutcome, SimReport, Simulator};
use migrsim_core::rng::{splitmix64, XorShift64Star};
use migrsim_core::transport::packet::Syndrome;
use migrsim_core::verbs::{
    access, PartnerAddr, QpAttrs, QpCaps, QpState, ReceiveRequest, SendRequest, WcOpcode,
    WcStatus, WorkCompletion, WrOpcode, RETRY_INFINITE,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy)]
struct MrInfo {
    mrn: u32,
    lkey: u32,
    rkey: u32,
    base: u64,
    size: u64,
}

#[derive(Debug, Clone, Copy)]
struct QpInfo {
    qpn: u32,
    send_cq: u32,
    recv_cq: u32,
    srq: Option<u32>,
}

#[derive(Debug, Clone, Default)]
struct CtxInfo {
    node: usize,
    pds: Vec<u32>,
    cqs: Vec<u32>,
    srqs: Vec<u32>,
    mrs: Vec<MrInfo>,
    qps: Vec<QpInfo>,
}

/// One completion as applications observe it; the unit of the
/// transparency comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WcRecord {
    pub wr_id: u64,
    pub status: WcStatus,
    pub opcode: WcOpcode,
    pub byte_len: u64,
}

impl From<WorkCompletion> for WcRecord {
    fn from(wc: WorkCompletion) -> Self {
        WcRecord { wr_id: wc.wr_id, status: wc.status, opcode: wc.opcode, byte_len: wc.byte_len }
    }
}

struct FlowState {
    // defs
    opcode: TrafficOpcode,
    count: u64,
    interval: u64,
    slots: u64,
    sizes: Vec<u32>,
    content_seed: u64,
    // endpoints
    snd_ctx: u32,
    snd_qpn: u32,
    snd_send_cq: u32,
    snd_mr: MrInfo,
    rcv_ctx: u32,
    rcv_qp: QpInfo,
    rcv_mr: MrInfo,
    write_target: Option<MrInfo>,
    // progress
    next_post_tick: u64,
    posted: u64,
    send_done: u64,
    recv_done: u64,
    errors: Vec<String>,
}

impl FlowState {
    fn send_slot(&self, idx: u64) -> u64 {
        self.snd_mr.base + (idx % self.slots) * self.slot_size()
    }

    fn recv_ring(&self) -> u64 {
        2 * self.slots
    }

    fn recv_slot(&self, idx: u64) -> u64 {
        self.rcv_mr.base + self.rcv_mr.size / 2 + (idx % self.recv_ring()) * self.slot_size()
    }

    fn write_slot(&self, idx: u64) -> u64 {
        let t = self.write_target.unwrap();
        t.base + (idx % self.slots) * self.slot_size()
    }

    fn slot_size(&self) -> u64 {
        *self.sizes.iter().max().unwrap() as u64
    }

    fn payload(&self, idx: u64) -> Vec<u8> {
        let len = self.sizes[idx as usize] as usize;
        let mut rng = XorShift64Star::new(
            splitmix64(self.content_seed ^ (idx.wrapping_mul(0x9E37_79B9) | 1)),
        );
        (0..len).map(|_| (rng.next_u32() & 0xFF) as u8).collect()
    }

    fn complete(&self) -> bool {
        let sends_done = self.send_done >= self.count;
        match self.opcode {
            TrafficOpcode::Send => sends_done && self.recv_done >= self.count,
            TrafficOpcode::Write => sends_done,
        }
    }
}

pub struct RunResult {
    pub outcome: RunOutcome,
    pub report: SimReport,
    pub assertion_failures: Vec<String>,
    pub trace: String,
    pub stats: String,
    pub timeline: String,
    /// Per-(ctx, cq) completion streams for transparency comparisons.
    pub wc_streams: BTreeMap<(u32, u32), Vec<WcRecord>>,
}

impl RunResult {
    pub fn ok(&self) -> bool {
        self.assertion_failures.is_empty()
    }
}

pub fn run_scenario(sc: &Scenario) -> Result<RunResult, String> {
    let mut sim = Simulator::new(sc.to_net_config()).map_err(|e| e.to_string())?;
    let mut ctxs: Vec<CtxInfo> = Vec::new();

    for node in &sc.nodes {
        sim.attach_node(&node.name, node.gid_seed).map_err(|e| e.to_string())?;
    }
    // Objects, in scenario order so identifiers are reproducible.
    for (ci, cdef) in sc.contexts.iter().enumerate() {
        let ci32 = ci as u32;
        let node = sc.node_index(&cdef.node).unwrap();
        let qpn_range = cdef
            .qpn_range
            .map(|[lo, hi]| (lo, hi))
            .unwrap_or((0x100 + ci32 * 0x10000, 0x100 + ci32 * 0x10000 + 0x8000));
        let mrn_range = cdef
            .mrn_range
            .map(|[lo, hi]| (lo, hi))
            .unwrap_or((1 + ci32 * 0x10000, 1 + ci32 * 0x10000 + 0x8000));
        sim.create_context(node, ci32, qpn_range, mrn_range).map_err(|e| e.to_string())?;
        let ctx = sim.ctx_mut(ci32).unwrap();
        let mut info = CtxInfo { node, ..Default::default() };
        for _ in 0..cdef.pds {
            info.pds.push(ctx.alloc_pd());
        }
        for cq in &cdef.cqs {
            info.cqs.push(ctx.create_cq(cq.depth).map_err(|e| e.to_string())?);
        }
        for srq in &cdef.srqs {
            info.srqs.push(
                ctx.create_srq(info.pds[srq.pd as usize], srq.depth).map_err(|e| e.to_string())?,
            );
        }
        let mut base_cursor: u64 = 0x10000;
        for mr in &cdef.mrs {
            let flags = match mr.access {
                MrAccess::Local => access::LOCAL_WRITE,
                MrAccess::RemoteWrite => access::LOCAL_WRITE | access::REMOTE_WRITE,
            };
            let mrn = ctx
                .reg_mr(info.pds[mr.pd as usize], base_cursor, mr.size, flags)
                .map_err(|e| e.to_string())?;
            let m = &ctx.mrs[&mrn];
            info.mrs.push(MrInfo { mrn, lkey: m.lkey, rkey: m.rkey, base: m.base, size: m.length });
            base_cursor += (mr.size + 0xFFF) & !0xFFF;
        }
        for qp in &cdef.qps {
            let qpn = ctx
                .create_qp(
                    info.pds[qp.pd as usize],
                    info.cqs[qp.send_cq as usize],
                    info.cqs[qp.recv_cq as usize],
                    qp.srq.map(|s| info.srqs[s as usize]),
                    QpCaps { max_send_wr: qp.max_send_wr, max_recv_wr: qp.max_recv_wr },
                )
                .map_err(|e| e.to_string())?;
            info.qps.push(QpInfo {
                qpn,
                send_cq: info.cqs[qp.send_cq as usize],
                recv_cq: info.cqs[qp.recv_cq as usize],
                srq: qp.srq.map(|s| info.srqs[s as usize]),
            });
        }
        ctxs.push(info);
    }
    // Connect the pairs.
    for (ci, cdef) in sc.contexts.iter().enumerate() {
        for (qi, qdef) in cdef.qps.iter().enumerate() {
            let peer = &ctxs[qdef.partner.ctx as usize];
            let peer_gid = sim.nodes[peer.node].addr.gid;
            let peer_qpn = peer.qps[qdef.partner.qp as usize].qpn;
            let peer_psn = sc.contexts[qdef.partner.ctx as usize].qps[qdef.partner.qp as usize]
                .psn_seed;
            let qpn = ctxs[ci].qps[qi].qpn;
            let ctx = sim.ctx_mut(ci as u32).unwrap();
            ctx.modify_qp(qpn, QpState::Init, &QpAttrs::default(), 0)
                .map_err(|e| e.to_string())?;
            ctx.modify_qp(
                qpn,
                QpState::Rtr,
                &QpAttrs {
                    partner: Some(PartnerAddr { gid: peer_gid, qpn: peer_qpn }),
                    expected_psn: Some(peer_psn),
                    mtu: Some(qdef.mtu),
                    ..Default::default()
                },
                0,
            )
            .map_err(|e| e.to_string())?;
            ctx.modify_qp(
                qpn,
                QpState::Rts,
                &QpAttrs {
                    next_psn: Some(qdef.psn_seed),
                    retry: Some((
                        qdef.timeout_ticks,
                        qdef.max_retries.unwrap_or(RETRY_INFINITE),
                    )),
                    max_inflight: Some(qdef.max_inflight),
                    ..Default::default()
                },
                0,
            )
            .map_err(|e| e.to_string())?;
        }
    }
    // Traffic flows.
    let mut flows: Vec<FlowState> = Vec::new();
    for (ti, t) in sc.traffic.iter().enumerate() {
        let snd_ctx = t.ctx;
        let qdef = sc.contexts[t.ctx as usize].qps[t.qp as usize];
        let rcv_ctx = qdef.partner.ctx;
        let rcv_qp = ctxs[rcv_ctx as usize].qps[qdef.partner.qp as usize];
        let (lo, hi) = t.msg_size.bounds();
        let mut size_rng = XorShift64Star::new(splitmix64(sc.seed ^ (0xF100 + ti as u64)));
        let sizes: Vec<u32> =
            (0..t.count).map(|_| (lo + size_rng.next_u64() % (hi - lo + 1)) as u32).collect();
        flows.push(FlowState {
            opcode: t.opcode,
            count: t.count,
            interval: t.interval_ticks,
            slots: t.slots.min(t.count),
            sizes,
            content_seed: splitmix64(sc.seed ^ (0xC0DE + ti as u64)),
            snd_ctx,
            snd_qpn: ctxs[t.ctx as usize].qps[t.qp as usize].qpn,
            snd_send_cq: ctxs[t.ctx as usize].qps[t.qp as usize].send_cq,
            snd_mr: ctxs[t.ctx as usize].mrs[t.local_mr as usize],
            rcv_ctx,
            rcv_qp,
            rcv_mr: ctxs[rcv_ctx as usize].mrs[t.local_mr as usize],
            write_target: (t.opcode == TrafficOpcode::Write)
                .then(|| ctxs[rcv_ctx as usize].mrs[t.target_mr as usize]),
            next_post_tick: t.start_tick,
            posted: 0,
            send_done: 0,
            recv_done: 0,
            errors: Vec::new(),
        });
    }
    // Stock the receive rings.
    for f in &flows {
        if f.opcode != TrafficOpcode::Send {
            continue;
        }
        let prepost = f.recv_ring().min(f.count);
        for idx in 0..prepost {
            post_flow_rr(&mut sim, f, idx);
        }
    }
    // Migrations.
    if sc.migration_enabled {
        for m in &sc.migrations {
            let src_node = sc.node_index(&sc.contexts[m.ctx as usize].node).unwrap();
            let dst_node = sc.node_index(&m.dst).unwrap();
            let spec = MigrationSpec {
                ctx_id: m.ctx,
                src: sim.nodes[src_node].addr.gid,
                dst: sim.nodes[dst_node].addr.gid,
                trigger_tick: m.trigger_tick,
                transfer: match m.transfer {
                    TransferDef::InBand => TransferMode::InBand,
                    TransferDef::OutOfBand => TransferMode::OutOfBand,
                },
            };
            sim.schedule_migration(spec).map_err(|e| e.to_string())?;
        }
    }
    for f in &flows {
        sim.schedule_wake(f.next_post_tick);
    }

    // Drive.
    let mut wc_streams: BTreeMap<(u32, u32), Vec<WcRecord>> = BTreeMap::new();
    let n_ctx = ctxs.len() as u32;
    let cq_handles: Vec<(u32, Vec<u32>)> =
        ctxs.iter().enumerate().map(|(ci, c)| (ci as u32, c.cqs.clone())).collect();
    let max_ticks = sc.net.max_ticks;
    let outcome = sim.run(max_ticks, |sim| {
        let now = sim.now();
        // Poll every completion queue, in (ctx, cq) order.
        for (ctx_id, cqs) in &cq_handles {
            for &cq in cqs {
                let Some(ctx) = sim.ctx_mut(*ctx_id) else { continue };
                let wcs = match ctx.poll_cq(cq, u32::MAX) {
                    Ok(wcs) => wcs,
                    Err(_) => continue,
                };
                if wcs.is_empty() {
                    continue;
                }
                let stream = wc_streams.entry((*ctx_id, cq)).or_default();
                for wc in &wcs {
                    stream.push((*wc).into());
                }
                for wc in wcs {
                    dispatch_wc(sim, &mut flows, *ctx_id, cq, wc);
                }
            }
        }
        // Post due traffic on unfrozen contexts.
        for f in flows.iter_mut() {
            if frozen(sim, f.snd_ctx) {
                continue;
            }
            while f.posted < f.count
                && f.posted.saturating_sub(f.send_done) < f.slots
                && now >= f.next_post_tick
            {
                let idx = f.posted;
                post_flow_send(sim, f, idx);
                f.posted += 1;
                f.next_post_tick = now + f.interval;
            }
            if f.posted < f.count {
                sim.schedule_wake(f.next_post_tick.max(now + 1));
            }
        }
        let _ = n_ctx;
        false
    });

    let report = sim.report(outcome);
    let trace = sim.render_trace();
    let timeline = render_timeline(&sim);
    let assertion_failures = evaluate_assertions(&sc.assertions, &sim, &report, &flows, outcome);
    let stats = render_stats(sc, &report, &flows, &wc_streams, &assertion_failures);
    Ok(RunResult {
        outcome,
        report,
        assertion_failures,
        trace,
        stats,
        timeline,
        wc_streams,
    })
}

/// A context is frozen from its migration trigger until the restore
/// completes; the checkpointed application cannot post during that time.
fn frozen(sim: &Simulator, ctx_id: u32) -> bool {
    sim.migrations
        .iter()
        .any(|m| m.spec.ctx_id == ctx_id && sim.now() >= m.spec.trigger_tick && !m.done)
}

fn post_flow_rr(sim: &mut Simulator, f: &FlowState, idx: u64) {
    let Some(ctx) = sim.ctx_mut(f.rcv_ctx) else { return };
    let rr = ReceiveRequest {
        wr_id: idx,
        lkey: f.rcv_mr.lkey,
        addr: f.recv_slot(idx),
        maxlen: f.slot_size(),
    };
    let res = match f.rcv_qp.srq {
        Some(srq) => ctx.post_srq_recv(srq, rr),
        None => ctx.post_recv(f.rcv_qp.qpn, rr),
    };
    res.expect("receive ring post failed");
}

fn post_flow_send(sim: &mut Simulator, f: &mut FlowState, idx: u64) {
    let now = sim.now();
    let payload = f.payload(idx);
    let addr = f.send_slot(idx);
    let Some(ctx) = sim.ctx_mut(f.snd_ctx) else { return };
    let mr = ctx.mrs.get_mut(&f.snd_mr.mrn).unwrap();
    mr.slice_mut(addr, payload.len() as u64).copy_from_slice(&payload);
    let sr = match f.opcode {
        TrafficOpcode::Send => SendRequest {
            wr_id: idx,
            opcode: WrOpcode::Send,
            lkey: f.snd_mr.lkey,
            addr,
            len: payload.len() as u64,
            remote: None,
        },
        TrafficOpcode::Write => SendRequest {
            wr_id: idx,
            opcode: WrOpcode::RdmaWrite,
            lkey: f.snd_mr.lkey,
            addr,
            len: payload.len() as u64,
            remote: Some(migrsim_core::verbs::RemoteTarget {
                rkey: f.write_target.unwrap().rkey,
                raddr: f.write_slot(idx),
            }),
        },
    };
    if let Err(e) = ctx.post_send(f.snd_qpn, sr, now) {
        f.errors.push(format!("post_send msg {idx}: {e}"));
    }
}

fn dispatch_wc(
    sim: &mut Simulator,
    flows: &mut [FlowState],
    ctx_id: u32,
    cq: u32,
    wc: WorkCompletion,
) {
    for f in flows.iter_mut() {
        if f.snd_ctx == ctx_id && cq == f.snd_send_cq {
            if wc.status != WcStatus::Success {
                f.errors.push(format!("send wc {}: {:?}", wc.wr_id, wc.status));
            }
            f.send_done += 1;
            return;
        }
        if f.opcode == TrafficOpcode::Send && f.rcv_ctx == ctx_id && cq == f.rcv_qp.recv_cq {
            handle_recv_wc(sim, f, wc);
            return;
        }
    }
}

fn handle_recv_wc(sim: &mut Simulator, f: &mut FlowState, wc: WorkCompletion) {
    let idx = f.recv_done;
    if wc.wr_id != idx {
        f.errors.push(format!("recv order: expected msg {idx}, got {}", wc.wr_id));
    }
    if wc.status != WcStatus::Success {
        f.errors.push(format!("recv wc {}: {:?}", wc.wr_id, wc.status));
        f.recv_done += 1;
        return;
    }
    let want = f.payload(wc.wr_id);
    if wc.byte_len != want.len() as u64 {
        f.errors.push(format!(
            "recv len: msg {} got {} want {}",
            wc.wr_id,
            wc.byte_len,
            want.len()
        ));
    }
    if let Some(ctx) = sim.ctx(f.rcv_ctx) {
        let got = ctx.mrs[&f.rcv_mr.mrn].slice(f.recv_slot(wc.wr_id), want.len() as u64);
        if got != want.as_slice() {
            f.errors.push(format!("recv bytes differ for msg {}", wc.wr_id));
        }
    }
    f.recv_done += 1;
    // Recycle the slot for a message one ring ahead.
    let next = wc.wr_id + f.recv_ring();
    if next < f.count {
        post_flow_rr(sim, f, next);
    }
}

fn evaluate_assertions(
    asserts: &Assertions,
    sim: &Simulator,
    report: &SimReport,
    flows: &[FlowState],
    outcome: RunOutcome,
) -> Vec<String> {
    let mut failures = Vec::new();
    if asserts.deliver_all {
        if outcome == RunOutcome::TickBudget {
            failures.push("deliver_all: tick budget exhausted before completion".into());
        }
        for (fi, f) in flows.iter().enumerate() {
            if !f.complete() {
                failures.push(format!(
                    "deliver_all: flow {fi} incomplete (posted {}, sends {}, recvs {} of {})",
                    f.posted, f.send_done, f.recv_done, f.count
                ));
            }
            for e in &f.errors {
                failures.push(format!("deliver_all: flow {fi}: {e}"));
            }
            // Write flows: the last ring of messages must sit verbatim in
            // the target region.
            if f.opcode == TrafficOpcode::Write && f.complete() {
                if let Some(ctx) = sim.ctx(f.rcv_ctx) {
                    let target = f.write_target.unwrap();
                    let first = f.count.saturating_sub(f.slots);
                    for idx in first..f.count {
                        let want = f.payload(idx);
                        let got = ctx.mrs[&target.mrn].slice(f.write_slot(idx), want.len() as u64);
                        if got != want.as_slice() {
                            failures
                                .push(format!("deliver_all: flow {fi}: write {idx} bytes differ"));
                        }
                    }
                }
            }
        }
    }
    if asserts.pause_safety || asserts.stop_silence {
        // Reconstruct pause/stop windows per (node, qpn) from the
        // timeline and scan the trace against them.
        let mut windows: Vec<(usize, u32, u64, u64, QpState)> = Vec::new();
        for (i, t) in sim.timeline.iter().enumerate() {
            if t.to == QpState::Paused || t.to == QpState::Stopped {
                let end = sim.timeline[i..]
                    .iter()
                    .find(|u| u.node == t.node && u.qpn == t.qpn && u.from == t.to)
                    .map(|u| u.tick)
                    .unwrap_or(u64::MAX);
                windows.push((t.node, t.qpn, t.tick, end, t.to));
            }
        }
        for r in sim.trace.records() {
            if r.dir != Dir::Snd {
                continue;
            }
            let Some(node) = r.node else { continue };
            for &(wnode, wqpn, start, end, state) in &windows {
                if node != wnode || r.qpn != wqpn || r.tick < start || r.tick >= end {
                    continue;
                }
                match state {
                    QpState::Paused if asserts.pause_safety => {
                        if let TraceOp::Pkt(op) = r.op {
                            if op.is_data() {
                                failures.push(format!(
                                    "pause_safety: qp {:#x} sent {} at tick {} while paused",
                                    r.qpn,
                                    op.mnemonic(),
                                    r.tick
                                ));
                            }
                        }
                    }
                    QpState::Stopped
                        if asserts.stop_silence && r.syndrome != Some(Syndrome::NakStopped) =>
                    {
                        failures.push(format!(
                            "stop_silence: qp {:#x} emitted non-NAK_STOPPED at tick {}",
                            r.qpn, r.tick
                        ));
                    }
                    _ => {}
                }
            }
        }
    }
    if asserts.no_rem_access_after_restore {
        let restore_ticks: Vec<u64> = report
            .migrations
            .iter()
            .filter(|m| m.success)
            .map(|m| m.completed_tick)
            .collect();
        if let Some(&first) = restore_ticks.iter().min() {
            for r in sim.trace.records() {
                if r.tick >= first && r.syndrome == Some(Syndrome::NakRemAccess) {
                    failures.push(format!(
                        "no_rem_access_after_restore: NAK_REM_ACCESS at tick {}",
                        r.tick
                    ));
                }
            }
        }
    }
    if asserts.converged {
        for node in &sim.nodes {
            for ctx in &node.contexts {
                for qp in ctx.qps.values() {
                    let idle = qp.state == QpState::Rts
                        && qp.sq.is_empty()
                        && qp.req.inflight.is_empty()
                        && !qp.req.awaiting_resume_ack;
                    if !idle {
                        failures.push(format!(
                            "converged: qp {:#x} on {} is {} with {} queued / {} inflight",
                            qp.qpn,
                            node.name,
                            qp.state,
                            qp.sq.len(),
                            qp.req.inflight.len()
                        ));
                    }
                }
            }
        }
    }
    if asserts.wc_conservation {
        for (fi, f) in flows.iter().enumerate() {
            if f.send_done != f.posted {
                failures.push(format!(
                    "wc_conservation: flow {fi} posted {} sends but saw {} completions",
                    f.posted, f.send_done
                ));
            }
        }
    }
    failures
}

fn render_timeline(sim: &Simulator) -> String {
    let names = sim.node_names();
    let mut out = String::new();
    for t in &sim.timeline {
        let _ = writeln!(
            out,
            "{} {} ctx={} qpn={} {} {}",
            t.tick, names[t.node], t.ctx_id, t.qpn, t.from, t.to
        );
    }
    out
}

fn render_stats(
    sc: &Scenario,
    report: &SimReport,
    flows: &[FlowState],
    wc_streams: &BTreeMap<(u32, u32), Vec<WcRecord>>,
    failures: &[String],
) -> String {
    let mut out = String::new();
    let c = report.counters;
    let outcome = match report.outcome {
        RunOutcome::Stopped => "stopped",
        RunOutcome::Quiesced => "quiesced",
        RunOutcome::TickBudget => "tick_budget",
    };
    let _ = writeln!(
        out,
        "run seed={} outcome={} end_tick={} packets_sent={} packets_delivered={} \
         dropped_loss={} dropped_unroutable={} duplicated={} forwarded={} chunks_delivered={}",
        sc.seed,
        outcome,
        report.end_tick,
        c.packets_sent,
        c.packets_delivered,
        c.dropped_loss,
        c.dropped_unroutable,
        c.duplicated,
        c.forwarded,
        c.chunks_delivered
    );
    let mut by_status: BTreeMap<&'static str, u64> = BTreeMap::new();
    for stream in wc_streams.values() {
        for wc in stream {
            *by_status
                .entry(match wc.status {
                    WcStatus::Success => "success",
                    WcStatus::LocLenErr => "loc_len_err",
                    WcStatus::RemAccessErr => "rem_access_err",
                    WcStatus::RetryExcErr => "retry_exc_err",
                    WcStatus::WrFlushErr => "wr_flush_err",
                })
                .or_insert(0) += 1;
        }
    }
    for (status, count) in by_status {
        let _ = writeln!(out, "wc status={status} count={count}");
    }
    for (fi, f) in flows.iter().enumerate() {
        let _ = writeln!(
            out,
            "flow index={fi} ctx={} qpn={} opcode={} posted={} send_completed={} delivered={} errors={}",
            f.snd_ctx,
            f.snd_qpn,
            match f.opcode {
                TrafficOpcode::Send => "send",
                TrafficOpcode::Write => "write",
            },
            f.posted,
            f.send_done,
            f.recv_done,
            f.errors.len()
        );
    }
    for (i, m) in report.migrations.iter().enumerate() {
        let _ = writeln!(
            out,
            "migration index={i} ctx={} trigger={} status={} checkpoint_ticks={} transfer_ticks={} \
             restore_ticks={} total_ticks={} image_bytes={} max_partner_latency_ticks={} completed={}{}",
            m.ctx_id,
            m.trigger_tick,
            if m.success { "ok" } else { "failed" },
            m.checkpoint_ticks,
            m.transfer_ticks,
            m.restore_ticks,
            m.total_ticks(),
            m.image_bytes,
            m.max_partner_latency_ticks,
            m.completed_tick,
            m.error.as_deref().map(|e| format!(" error={e:?}")).unwrap_or_default()
        );
    }
    for (state, count) in &report.qp_states {
        let _ = writeln!(out, "qpstate state={state} count={count}");
    }
    for f in failures {
        let _ = writeln!(out, "assert_failure {f}");
    }
    let _ = writeln!(out, "assertions_passed={}", failures.is_empty());
    out
}
