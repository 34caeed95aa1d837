//! The connection-resume golden check behind `verify-fig6`.
//!
//! It reconstructs, through checkpoint-level primitives, the canonical
//! mid-stream snapshot of a migrated connection: a six-packet message
//! with PSNs 4..=9 where packet 4 is acknowledged, 5..=7 are sent but
//! unacknowledged, 8..=9 are still pending, and the receiver expects
//! PSN 7. Restoring the sender on a new node must then produce, exactly:
//! a resume carrying PSN 5, an acknowledgement of 6 (the last packet the
//! receiver got), the retransmission of 7, the first transmission of 8
//! and 9, and one final acknowledgement of 9, after which both work
//! requests complete.

use migrsim_core::addr::Gid;
use migrsim_core::checkpoint::{
    ContextImage, CqRecord, ImageHeader, MrRecord, ObjectRecord, PdRecord, QpRecord, RqRecord,
};
use migrsim_core::migrator::restore_image_onto_node;
use migrsim_core::netsim::{NetConfig, Simulator};
use migrsim_core::rng::XorShift64Star;
use migrsim_core::transport::packet::Opcode;
use migrsim_core::verbs::{
    access, PacketDesc, PartnerAddr, QpAttrs, QpCaps, QpState, ReceiveRequest, SendRequest,
    SqEntry, WcStatus, RETRY_INFINITE,
};

const QPN_A: u32 = 0x100;
const QPN_B: u32 = 0x200;
const MTU: u32 = 1024;
const MSG_LEN: u64 = 6 * MTU as u64;
const A_MR_BASE: u64 = 0x1000;
const A_LKEY: u32 = 0x1111;
const A_RKEY: u32 = 0x2222;

/// Snapshot variants: the canonical picture plus two hand-derived
/// perturbations of the unacknowledged window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// acked <= 4, unacked 5..=7, pending 8..=9, receiver expects 7.
    Canonical,
    /// unacked 6..=7 only.
    FirstUnacked6,
    /// nothing unacked; receiver already has everything sent so far.
    NothingUnacked,
}

struct Shape {
    first_unacked: u32,
    next_psn: u32,
    receiver_expected: u32,
}

impl Variant {
    fn shape(self) -> Shape {
        match self {
            Variant::Canonical => {
                Shape { first_unacked: 5, next_psn: 8, receiver_expected: 7 }
            }
            Variant::FirstUnacked6 => {
                Shape { first_unacked: 6, next_psn: 8, receiver_expected: 7 }
            }
            Variant::NothingUnacked => {
                Shape { first_unacked: 8, next_psn: 8, receiver_expected: 8 }
            }
        }
    }

    /// Hand-derived expected packet sequence, as trace lines.
    pub fn expected_trace(self) -> String {
        let s = self.shape();
        let mut lines: Vec<String> = Vec::new();
        let mut tick = 0u64;
        // Resume announcement and the ack of the last received packet.
        lines.push(format!("{tick} snd a2 {QPN_A} RESUME {} - 0", s.first_unacked));
        tick += 1;
        lines.push(format!("{tick} rcv b {QPN_B} RESUME {} - 0", s.first_unacked));
        lines.push(format!("{tick} snd b {QPN_B} ACK {} ACK_OK 0", s.receiver_expected - 1));
        tick += 1;
        lines.push(format!("{tick} rcv a2 {QPN_A} ACK {} ACK_OK 0", s.receiver_expected - 1));
        // Replay of the survivors, then the pending tail; the receiver
        // acknowledges once, on the last packet of the message.
        for psn in s.receiver_expected..=9 {
            let opcode = if psn == 9 { "SEND_LAST" } else { "SEND_MIDDLE" };
            lines.push(format!("{tick} snd a2 {QPN_A} {opcode} {psn} - 1024"));
            tick += 1;
            lines.push(format!("{tick} rcv b {QPN_B} {opcode} {psn} - 1024"));
        }
        lines.push(format!("{tick} snd b {QPN_B} ACK 9 ACK_OK 0"));
        tick += 1;
        lines.push(format!("{tick} rcv a2 {QPN_A} ACK 9 ACK_OK 0"));
        lines.join("\n") + "\n"
    }
}

fn message_bytes() -> Vec<u8> {
    let mut rng = XorShift64Star::new(0x6016);
    (0..MSG_LEN).map(|_| (rng.next_u32() & 0xFF) as u8).collect()
}

/// The migrated sender's checkpoint image for a given snapshot shape.
fn sender_image(variant: Variant, old_gid: Gid, partner_gid: Gid) -> ContextImage {
    let s = variant.shape();
    let msg = message_bytes();
    let inflight: Vec<PacketDesc> = (s.first_unacked..s.next_psn)
        .map(|psn| PacketDesc {
            psn,
            opcode: Opcode::SendMiddle,
            ack_req: false,
            sr_seq: 0,
            offset: (psn as u64 - 4) * MTU as u64,
            len: MTU,
            last_sent: 0,
        })
        .collect();
    ContextImage {
        header: ImageHeader {
            node_gid: old_gid,
            qpn_range: (0x100, 0x200),
            mrn_range: (1, 0x100),
            last_qpn: QPN_A,
            last_mrn: 1,
        },
        records: vec![
            ObjectRecord::Pd(PdRecord { handle: 1 }),
            ObjectRecord::Mr(MrRecord {
                mrn: 1,
                pd: 1,
                lkey: A_LKEY,
                rkey: A_RKEY,
                base: A_MR_BASE,
                length: MSG_LEN,
                access: access::LOCAL_WRITE,
                buffer: msg,
            }),
            ObjectRecord::Cq(CqRecord { handle: 1, depth: 64, ring: vec![] }),
            ObjectRecord::Cq(CqRecord { handle: 2, depth: 64, ring: vec![] }),
            ObjectRecord::Qp(QpRecord {
                qpn: QPN_A,
                pd: 1,
                state: QpState::Rts,
                partner: Some((partner_gid, QPN_B)),
                mtu: MTU,
                max_inflight: 64,
                max_send_wr: 64,
                max_recv_wr: 64,
                send_cq: 1,
                recv_cq: 2,
                sqd_fence: 0,
                sq: vec![SqEntry {
                    seq: 0,
                    posted_tick: 0,
                    sr: SendRequest {
                        wr_id: 70,
                        opcode: migrsim_core::verbs::WrOpcode::Send,
                        lkey: A_LKEY,
                        addr: A_MR_BASE,
                        len: MSG_LEN,
                        remote: None,
                    },
                }],
                rq: RqRecord::Own(vec![]),
                next_psn: s.next_psn,
                first_unacked: s.first_unacked,
                cur_sr_seq: 0,
                cur_sr_offset: (s.next_psn as u64 - 4) * MTU as u64,
                next_sr_seq: 1,
                awaiting_resume_ack: false,
                resend_cursor: None,
                inflight,
                expected_psn: 0,
                msn: 0,
                nak_outstanding: false,
                cur_rr: None,
                cur_rr_offset: 0,
                cur_write: None,
                timeout_ticks: 64,
                max_retries: RETRY_INFINITE,
                retries_used: 0,
                backoff: 1,
                last_resume_tick: None,
            }),
        ],
    }
}

pub struct GoldenOutcome {
    pub trace: String,
    pub expected: String,
    pub matched: bool,
    pub completions_ok: bool,
    pub bytes_ok: bool,
    pub detail: String,
}

impl GoldenOutcome {
    pub fn passed(&self) -> bool {
        self.matched && self.completions_ok && self.bytes_ok
    }
}

/// Build the snapshot, run the resume, and compare against the
/// hand-derived packet sequence byte for byte.
pub fn run(variant: Variant) -> GoldenOutcome {
    let s = variant.shape();
    let msg = message_bytes();
    let mut sim = Simulator::new(NetConfig {
        seed: 0,
        latency_ticks: 1,
        loss_rate: 0.0,
        dup_rate: 0.0,
        max_ticks: 10_000,
    })
    .unwrap();
    let node_b = sim.attach_node("b", 2).unwrap();
    let node_a2 = sim.attach_node("a2", 3).unwrap();
    let gid_a_old = Gid::from_seed(1); // never attached: the sender moved
    let gid_b = sim.nodes[node_b].addr.gid;

    // The receiver: a live QP mid-message, expecting `receiver_expected`.
    sim.create_context(node_b, 2, (0x200, 0x300), (0x200, 0x300)).unwrap();
    let b_mr;
    {
        let ctx = sim.ctx_mut(2).unwrap();
        let pd = ctx.alloc_pd();
        let scq = ctx.create_cq(64).unwrap();
        let rcq = ctx.create_cq(64).unwrap();
        b_mr = ctx.reg_mr(pd, 0x8000, 8192, access::LOCAL_WRITE).unwrap();
        let lkey = ctx.mrs[&b_mr].lkey;
        let qpn = ctx.create_qp(pd, scq, rcq, None, QpCaps::default()).unwrap();
        assert_eq!(qpn, QPN_B);
        ctx.modify_qp(qpn, QpState::Init, &QpAttrs::default(), 0).unwrap();
        ctx.modify_qp(
            qpn,
            QpState::Rtr,
            &QpAttrs {
                partner: Some(PartnerAddr { gid: gid_a_old, qpn: QPN_A }),
                expected_psn: Some(s.receiver_expected),
                mtu: Some(MTU),
                ..Default::default()
            },
            0,
        )
        .unwrap();
        ctx.modify_qp(qpn, QpState::Rts, &QpAttrs { next_psn: Some(0), ..Default::default() }, 0)
            .unwrap();
        // Mid-message responder state: the receive request is claimed
        // and the first segments already landed.
        let received = (s.receiver_expected as u64 - 4) * MTU as u64;
        let mr = ctx.mrs.get_mut(&b_mr).unwrap();
        mr.slice_mut(0x8000, received).copy_from_slice(&msg[..received as usize]);
        let qp = ctx.qps.get_mut(&qpn).unwrap();
        qp.rsp.cur_rr =
            Some(ReceiveRequest { wr_id: 80, lkey, addr: 0x8000, maxlen: 8192 });
        qp.rsp.cur_rr_offset = received;
    }

    // The migrated sender, reconstructed from its checkpoint image on
    // the new node. REFILL emits the resume message.
    let image = sender_image(variant, gid_a_old, gid_b);
    restore_image_onto_node(&mut sim, node_a2, 1, &image).unwrap();

    sim.run(10_000, |_| false);

    let trace = sim.render_trace();
    let expected = variant.expected_trace();
    let matched = trace == expected;

    let mut detail = String::new();
    let send_wcs = sim.ctx_mut(1).unwrap().poll_cq(1, 16).unwrap();
    let recv_wcs = sim.ctx_mut(2).unwrap().poll_cq(2, 16).unwrap();
    let completions_ok = send_wcs.len() == 1
        && send_wcs[0].wr_id == 70
        && send_wcs[0].status == WcStatus::Success
        && send_wcs[0].byte_len == MSG_LEN
        && recv_wcs.len() == 1
        && recv_wcs[0].wr_id == 80
        && recv_wcs[0].status == WcStatus::Success
        && recv_wcs[0].byte_len == MSG_LEN;
    if !completions_ok {
        detail.push_str(&format!("send wcs: {send_wcs:?}\nrecv wcs: {recv_wcs:?}\n"));
    }
    let got = sim.ctx(2).unwrap().mrs[&b_mr].slice(0x8000, MSG_LEN).to_vec();
    let bytes_ok = got == msg;
    if !bytes_ok {
        detail.push_str("delivered message bytes differ\n");
    }
    if !matched {
        detail.push_str("--- expected ---\n");
        detail.push_str(&expected);
        detail.push_str("--- actual ---\n");
        detail.push_str(&trace);
    }
    GoldenOutcome { trace, expected, matched, completions_ok, bytes_ok, detail }
}
