//! Live-migration orchestration: stop and dump a context at its source
//! node, transfer the image, restore and refill at the destination, then
//! destroy the source objects. Each migration produces a report with the
//! per-phase costs in ticks.

use crate::addr::Gid;
use crate::checkpoint::{self, ContextImage};
use crate::error::VerbsError;
use crate::netsim::{EventKind, Simulator};
use crate::rng::splitmix64;
use crate::transport::TaskOutput;
use crate::verbs::VerbsContext;

/// Image bytes carried per simulated datagram during in-band transfer.
pub const CHUNK_BYTES: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// Image chunks travel through the simulated network, one chunk per
    /// latency interval, sharing the link with the workload.
    InBand,
    /// Image appears at the destination instantaneously.
    OutOfBand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MigrationSpec {
    pub ctx_id: u32,
    pub src: Gid,
    pub dst: Gid,
    pub trigger_tick: u64,
    pub transfer: TransferMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationReport {
    pub ctx_id: u32,
    pub src: Gid,
    pub dst: Gid,
    pub trigger_tick: u64,
    pub checkpoint_ticks: u64,
    pub transfer_ticks: u64,
    pub restore_ticks: u64,
    pub image_bytes: u64,
    pub max_partner_latency_ticks: u64,
    pub completed_tick: u64,
    pub success: bool,
    pub error: Option<String>,
}

impl MigrationReport {
    /// Total simulated migration latency: checkpoint + transfer + restore.
    pub fn total_ticks(&self) -> u64 {
        self.checkpoint_ticks + self.transfer_ticks + self.restore_ticks
    }
}

#[derive(Debug)]
pub struct MigrationState {
    pub spec: MigrationSpec,
    image: Option<Vec<u8>>,
    pub report: MigrationReport,
    /// (gid, qpn) of every partner QP at dump time, for the
    /// partner-observed latency metric.
    pub partner_snapshot: Vec<(Gid, u32)>,
    pub done: bool,
}

impl MigrationState {
    pub fn new(spec: MigrationSpec) -> Self {
        MigrationState {
            spec,
            image: None,
            report: MigrationReport {
                ctx_id: spec.ctx_id,
                src: spec.src,
                dst: spec.dst,
                trigger_tick: spec.trigger_tick,
                checkpoint_ticks: 0,
                transfer_ticks: 0,
                restore_ticks: 0,
                image_bytes: 0,
                max_partner_latency_ticks: 0,
                completed_tick: 0,
                success: false,
                error: None,
            },
            partner_snapshot: Vec::new(),
            done: false,
        }
    }

    fn fail(&mut self, now: u64, msg: String) {
        self.report.success = false;
        self.report.error = Some(msg);
        self.report.completed_tick = now;
        self.done = true;
    }
}

pub(crate) fn validate_spec(sim: &Simulator, spec: &MigrationSpec) -> Result<(), VerbsError> {
    if spec.src == spec.dst {
        return Err(VerbsError::InvalidArgument("migration src == dst".into()));
    }
    if sim.node_by_gid(spec.src).is_none() {
        return Err(VerbsError::InvalidArgument("migration src not attached".into()));
    }
    if sim.node_by_gid(spec.dst).is_none() {
        return Err(VerbsError::InvalidArgument("migration dst not attached".into()));
    }
    if spec.trigger_tick > sim.cfg.max_ticks {
        return Err(VerbsError::InvalidArgument(
            "migration trigger beyond the tick budget".into(),
        ));
    }
    Ok(())
}

/// Phase 1, at the trigger tick: atomically dump the context on the
/// source node (all its QPs go Stopped) and launch the image transfer.
pub(crate) fn on_trigger(sim: &mut Simulator, index: usize) {
    let now = sim.now();
    let spec = sim.migrations[index].spec;
    let Some(src_node) = sim.node_by_gid(spec.src) else {
        sim.migrations[index].fail(now, "source node vanished".into());
        return;
    };
    let Some(ci) =
        sim.nodes[src_node].contexts.iter().position(|c| c.ctx_id == spec.ctx_id)
    else {
        sim.migrations[index].fail(now, format!("ctx {} not on source node", spec.ctx_id));
        return;
    };
    let ctx = &mut sim.nodes[src_node].contexts[ci];
    let partner_snapshot: Vec<(Gid, u32)> = ctx
        .qps
        .values()
        .filter_map(|qp| qp.partner.map(|p| (p.gid, p.qpn)))
        .collect();
    let image = checkpoint::dump_context(ctx, now);
    let bytes = image.encode();
    let image_len = bytes.len() as u64;

    let latency = sim.cfg.latency_ticks as u64;
    let transfer_ticks = match spec.transfer {
        TransferMode::InBand => {
            let chunks = image_len.div_ceil(CHUNK_BYTES);
            for i in 0..chunks {
                let len = if i == chunks - 1 && !image_len.is_multiple_of(CHUNK_BYTES) {
                    (image_len % CHUNK_BYTES) as u32
                } else {
                    CHUNK_BYTES as u32
                };
                sim.send_chunk(spec.dst, index, i as u32, len, now + (i + 1) * latency);
            }
            chunks * latency
        }
        TransferMode::OutOfBand => 0,
    };
    {
        let st = &mut sim.migrations[index];
        st.image = Some(bytes);
        st.partner_snapshot = partner_snapshot;
        st.report.checkpoint_ticks = 1;
        st.report.transfer_ticks = transfer_ticks;
        st.report.image_bytes = image_len;
    }
    sim.schedule(now + transfer_ticks + 1, EventKind::MigrationRestore { index });
}

/// Identifier conflicts with contexts already living on the destination
/// node. QPNs and MRNs are node-global, so a restore must not recreate
/// an identifier some other process occupies.
fn check_node_collisions(
    sim: &Simulator,
    node: usize,
    image: &ContextImage,
) -> Result<(), VerbsError> {
    for rec in &image.records {
        match rec {
            checkpoint::ObjectRecord::Qp(q)
                if sim.nodes[node].contexts.iter().any(|c| c.qps.contains_key(&q.qpn)) =>
            {
                return Err(VerbsError::Collision { kind: "qpn", id: q.qpn });
            }
            checkpoint::ObjectRecord::Mr(m)
                if sim.nodes[node].contexts.iter().any(|c| c.mrs.contains_key(&m.mrn)) =>
            {
                return Err(VerbsError::Collision { kind: "mrn", id: m.mrn });
            }
            _ => {}
        }
    }
    Ok(())
}

/// Phase 2, after the transfer: restore the context on the destination
/// node (emitting resume messages at each REFILL), destroy the source
/// objects and leave resume-forwarding entries in their place.
pub(crate) fn on_restore(sim: &mut Simulator, index: usize) {
    let now = sim.now();
    let spec = sim.migrations[index].spec;
    let Some(dst_node) = sim.node_by_gid(spec.dst) else {
        sim.migrations[index].fail(now, "destination node vanished".into());
        return;
    };
    let bytes = sim.migrations[index].image.take().expect("restore without image");
    let image = ContextImage::decode(&bytes).expect("self-produced image must decode");
    if let Err(e) = check_node_collisions(sim, dst_node, &image) {
        sim.migrations[index].fail(now, e.to_string());
        return;
    }
    let dst_addr = sim.nodes[dst_node].addr;
    let key_seed = splitmix64(sim.cfg.seed ^ splitmix64(dst_addr.guid) ^ spec.ctx_id as u64);
    let mut ctx = VerbsContext::new(
        spec.ctx_id,
        dst_addr,
        key_seed,
        image.header.qpn_range,
        image.header.mrn_range,
    );
    let mut out = TaskOutput::default();
    match checkpoint::restore_context(&mut ctx, &image, now, &mut out) {
        Ok(()) => {
            // Destroy the stopped source objects; from here on only
            // resume messages are forwarded to the new location.
            if let Some(src_node) = sim.node_by_gid(spec.src) {
                if let Some(ci) =
                    sim.nodes[src_node].contexts.iter().position(|c| c.ctx_id == spec.ctx_id)
                {
                    let src_ctx = sim.nodes[src_node].contexts.remove(ci);
                    for qpn in src_ctx.qps.keys() {
                        sim.nodes[src_node].resume_forwards.insert(*qpn, spec.dst);
                    }
                }
            }
            sim.adopt_context(dst_node, ctx);
            for emit in out.emits.drain(..) {
                sim.send_packet(dst_node, emit);
            }
            for dl in out.wakeups.drain(..) {
                sim.schedule(dl.max(now), EventKind::Timer { node: dst_node, qpn: 0 });
            }
            let st = &mut sim.migrations[index];
            st.report.restore_ticks = 1;
            st.report.success = true;
            st.report.completed_tick = now;
            st.done = true;
        }
        Err(e) => {
            // Source objects stay Stopped; cleanup is teardown's job.
            sim.migrations[index].fail(now, e.to_string());
        }
    }
}

/// Destroy all objects of a context on the listed nodes. Partners of the
/// destroyed QPs are not notified: their sends run into retry exhaustion,
/// and QPs already paused on the destroyed context stay stuck. Repeated
/// teardown of the same context is a no-op; tearing down a context that
/// never existed is an argument error.
pub fn teardown(sim: &mut Simulator, ctx_id: u32, nodes: &[Gid]) -> Result<(), VerbsError> {
    if !sim.ctx_known(ctx_id) {
        return Err(VerbsError::InvalidArgument(format!("unknown ctx {ctx_id}")));
    }
    for gid in nodes {
        if let Some(ni) = sim.node_by_gid(*gid) {
            if let Some(ci) = sim.nodes[ni].contexts.iter().position(|c| c.ctx_id == ctx_id) {
                sim.nodes[ni].contexts.remove(ci);
            }
        }
    }
    Ok(())
}

/// Reports with the partner-observed latency filled in from the final QP
/// metrics (the pause shows up as send latency on the partner side).
pub(crate) fn finalize_reports(sim: &Simulator) -> Vec<MigrationReport> {
    sim.migrations
        .iter()
        .map(|st| {
            let mut r = st.report.clone();
            r.max_partner_latency_ticks = st
                .partner_snapshot
                .iter()
                .filter_map(|(_, qpn)| {
                    sim.nodes
                        .iter()
                        .flat_map(|n| n.contexts.iter())
                        .filter_map(|c| c.qps.get(qpn))
                        .map(|qp| qp.max_send_latency)
                        .max()
                })
                .max()
                .unwrap_or(0);
            r
        })
        .collect()
}

/// Restore an image directly onto a node outside of a scheduled
/// migration. Used for reconstructing prepared snapshots.
pub fn restore_image_onto_node(
    sim: &mut Simulator,
    node: usize,
    ctx_id: u32,
    image: &ContextImage,
) -> Result<(), VerbsError> {
    if sim.locate_ctx(ctx_id).is_some() {
        return Err(VerbsError::InvalidArgument(format!("ctx {ctx_id} is already live")));
    }
    check_node_collisions(sim, node, image)?;
    let now = sim.now();
    let addr = sim.nodes[node].addr;
    let key_seed = splitmix64(sim.cfg.seed ^ splitmix64(addr.guid) ^ ctx_id as u64);
    let mut ctx = VerbsContext::new(
        ctx_id,
        addr,
        key_seed,
        image.header.qpn_range,
        image.header.mrn_range,
    );
    let mut out = TaskOutput::default();
    checkpoint::restore_context(&mut ctx, image, now, &mut out)?;
    sim.adopt_context(node, ctx);
    for emit in out.emits.drain(..) {
        sim.send_packet(node, emit);
    }
    for dl in out.wakeups.drain(..) {
        sim.schedule(dl.max(now), EventKind::Timer { node, qpn: 0 });
    }
    Ok(())
}
