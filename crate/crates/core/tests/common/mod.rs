//! Shared harness for integration tests: a two-node simulator with one
//! connected RC QP pair per direction and helpers for driving traffic.

#![allow(dead_code)]

use migrsim_core::addr::Gid;
use migrsim_core::checkpoint::{ContextImage, ObjectRecord};
use migrsim_core::netsim::{NetConfig, Simulator};
use migrsim_core::rng::XorShift64Star;
use migrsim_core::verbs::{
    access, PartnerAddr, QpAttrs, QpCaps, QpState, ReceiveRequest, SendRequest, WcStatus,
    WorkCompletion, WrOpcode,
};

#[derive(Debug, Clone, Copy)]
pub struct Endpoint {
    pub ctx_id: u32,
    pub node: usize,
    pub gid: Gid,
    pub pd: u32,
    pub send_cq: u32,
    pub recv_cq: u32,
    pub mrn: u32,
    pub lkey: u32,
    pub rkey: u32,
    pub mr_base: u64,
    pub mr_len: u64,
    pub qpn: u32,
}

pub struct Pair {
    pub sim: Simulator,
    pub a: Endpoint,
    pub b: Endpoint,
}

pub struct PairConfig {
    pub net: NetConfig,
    pub mr_len: u64,
    pub mtu: u32,
    pub timeout_ticks: u32,
    pub max_retries: u32,
    pub use_srq: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            net: NetConfig::default(),
            mr_len: 1 << 20,
            mtu: 1024,
            timeout_ticks: 32,
            max_retries: migrsim_core::verbs::RETRY_INFINITE,
            use_srq: false,
        }
    }
}

fn make_endpoint(sim: &mut Simulator, ctx_id: u32, node: usize, cfg: &PairConfig) -> Endpoint {
    let base = (ctx_id - 1) * 0x10000;
    sim.create_context(node, ctx_id, (0x100 + base, 0x100 + base + 0x8000), (1 + base, 1 + base + 0x8000))
        .unwrap();
    let gid = sim.nodes[node].addr.gid;
    let ctx = sim.ctx_mut(ctx_id).unwrap();
    let pd = ctx.alloc_pd();
    let send_cq = ctx.create_cq(1 << 15).unwrap();
    let recv_cq = ctx.create_cq(1 << 15).unwrap();
    let mrn = ctx
        .reg_mr(pd, 0x10000, cfg.mr_len, access::LOCAL_WRITE | access::REMOTE_WRITE)
        .unwrap();
    let (lkey, rkey) = {
        let mr = &ctx.mrs[&mrn];
        (mr.lkey, mr.rkey)
    };
    let srq = if cfg.use_srq { Some(ctx.create_srq(pd, 1 << 14).unwrap()) } else { None };
    let qpn = ctx.create_qp(pd, send_cq, recv_cq, srq, QpCaps::default()).unwrap();
    Endpoint {
        ctx_id,
        node,
        gid,
        pd,
        send_cq,
        recv_cq,
        mrn,
        lkey,
        rkey,
        mr_base: 0x10000,
        mr_len: cfg.mr_len,
        qpn,
    }
}

fn connect(sim: &mut Simulator, ep: &Endpoint, peer: &Endpoint, cfg: &PairConfig) {
    let ctx = sim.ctx_mut(ep.ctx_id).unwrap();
    ctx.modify_qp(ep.qpn, QpState::Init, &QpAttrs::default(), 0).unwrap();
    ctx.modify_qp(
        ep.qpn,
        QpState::Rtr,
        &QpAttrs {
            partner: Some(PartnerAddr { gid: peer.gid, qpn: peer.qpn }),
            expected_psn: Some(0),
            mtu: Some(cfg.mtu),
            ..Default::default()
        },
        0,
    )
    .unwrap();
    ctx.modify_qp(
        ep.qpn,
        QpState::Rts,
        &QpAttrs {
            next_psn: Some(0),
            retry: Some((cfg.timeout_ticks, cfg.max_retries)),
            ..Default::default()
        },
        0,
    )
    .unwrap();
}

/// Two nodes, two contexts, one QP pair brought to RTS on both ends.
pub fn build_pair(cfg: PairConfig) -> Pair {
    let mut sim = Simulator::new(cfg.net).unwrap();
    let n0 = sim.attach_node("n0", 1).unwrap();
    let n1 = sim.attach_node("n1", 2).unwrap();
    let a = make_endpoint(&mut sim, 1, n0, &cfg);
    let b = make_endpoint(&mut sim, 2, n1, &cfg);
    connect(&mut sim, &a, &b, &cfg);
    connect(&mut sim, &b, &a, &cfg);
    Pair { sim, a, b }
}

/// Deterministic payload for message `idx` of a stream.
pub fn msg_bytes(stream_seed: u64, idx: u64, len: usize) -> Vec<u8> {
    let mut rng = XorShift64Star::new(stream_seed.wrapping_mul(0x9E37).wrapping_add(idx + 1));
    (0..len).map(|_| (rng.next_u32() & 0xFF) as u8).collect()
}

/// Write `bytes` into the endpoint's MR at `offset` and post a SEND.
pub fn post_send_msg(sim: &mut Simulator, ep: &Endpoint, wr_id: u64, offset: u64, bytes: &[u8]) {
    let now = sim.now();
    let ctx = sim.ctx_mut(ep.ctx_id).unwrap();
    let mr = ctx.mrs.get_mut(&ep.mrn).unwrap();
    let addr = ep.mr_base + offset;
    mr.slice_mut(addr, bytes.len() as u64).copy_from_slice(bytes);
    ctx.post_send(
        ep.qpn,
        SendRequest {
            wr_id,
            opcode: WrOpcode::Send,
            lkey: ep.lkey,
            addr,
            len: bytes.len() as u64,
            remote: None,
        },
        now,
    )
    .unwrap();
}

pub fn post_recv_slot(sim: &mut Simulator, ep: &Endpoint, wr_id: u64, offset: u64, maxlen: u64) {
    let ctx = sim.ctx_mut(ep.ctx_id).unwrap();
    ctx.post_recv(
        ep.qpn,
        ReceiveRequest { wr_id, lkey: ep.lkey, addr: ep.mr_base + offset, maxlen },
    )
    .unwrap();
}

pub fn drain_cq(sim: &mut Simulator, ctx_id: u32, cq: u32) -> Vec<WorkCompletion> {
    sim.ctx_mut(ctx_id).unwrap().poll_cq(cq, u32::MAX).unwrap()
}

pub fn mr_slice(sim: &Simulator, ep: &Endpoint, offset: u64, len: u64) -> Vec<u8> {
    let ctx = sim.ctx(ep.ctx_id).unwrap();
    ctx.mrs[&ep.mrn].slice(ep.mr_base + offset, len).to_vec()
}

pub fn assert_all_success(wcs: &[WorkCompletion]) {
    for wc in wcs {
        assert_eq!(wc.status, WcStatus::Success, "wc {wc:?}");
    }
}

/// Observable-state comparison of two images, for round-trip checks.
/// The node GID may differ (restores land on fresh nodes) and a REFILLed
/// QP legitimately awaits a resume ack even if the original did not.
pub fn assert_observably_equal(original: &ContextImage, redump: &ContextImage) {
    assert_eq!(original.header.qpn_range, redump.header.qpn_range);
    assert_eq!(original.header.mrn_range, redump.header.mrn_range);
    assert_eq!(original.header.last_qpn, redump.header.last_qpn);
    assert_eq!(original.header.last_mrn, redump.header.last_mrn);
    assert_eq!(original.records.len(), redump.records.len());
    for (orig, re) in original.records.iter().zip(&redump.records) {
        match (orig, re) {
            (ObjectRecord::Qp(o), ObjectRecord::Qp(r)) => {
                let mut r = r.clone();
                r.awaiting_resume_ack = o.awaiting_resume_ack;
                assert_eq!(o, &r, "qp {:#x} state differs after restore", o.qpn);
            }
            (o, r) => assert_eq!(o, r),
        }
    }
}
