//! Property-based tests: wire-codec identity, PSN window arithmetic,
//! state-machine closure over random operation sequences, window
//! discipline and exactly-once delivery under randomized loss.

mod common;

use common::*;
use migrsim_core::addr::Gid;
use migrsim_core::netsim::{NetConfig, RunOutcome};
use migrsim_core::transport::packet::{
    psn_ge, psn_lt, psn_sub, Aeth, Opcode, Packet, ResumeInfo, Reth, Syndrome, PSN_MASK,
};
use migrsim_core::verbs::{QpAttrs, QpState, QueuePair};
use proptest::prelude::*;

fn arb_opcode() -> impl Strategy<Value = Opcode> {
    prop_oneof![
        Just(Opcode::SendFirst),
        Just(Opcode::SendMiddle),
        Just(Opcode::SendLast),
        Just(Opcode::SendOnly),
        Just(Opcode::WriteFirst),
        Just(Opcode::WriteMiddle),
        Just(Opcode::WriteLast),
        Just(Opcode::WriteOnly),
        Just(Opcode::Ack),
        Just(Opcode::Resume),
    ]
}

fn arb_syndrome() -> impl Strategy<Value = Syndrome> {
    prop_oneof![
        Just(Syndrome::AckOk),
        Just(Syndrome::NakPsnSeq),
        Just(Syndrome::NakRemAccess),
        Just(Syndrome::NakRemOp),
        Just(Syndrome::NakStopped),
    ]
}

prop_compose! {
    fn arb_packet()(
        opcode in arb_opcode(),
        flags in 0u8..=1,
        dest_qpn in 0u32..=PSN_MASK,
        psn in 0u32..=PSN_MASK,
        raddr in any::<u64>(),
        rkey in any::<u32>(),
        dma_len in any::<u32>(),
        syndrome in arb_syndrome(),
        msn in 0u32..=PSN_MASK,
        gid_seed in any::<u64>(),
        src_qpn in 0u32..=PSN_MASK,
        first in 0u32..=PSN_MASK,
        payload in proptest::collection::vec(any::<u8>(), 0..600),
    ) -> Packet {
        Packet {
            opcode,
            flags,
            dest_qpn,
            psn,
            reth: opcode.has_reth().then_some(Reth { raddr, rkey, dma_len }),
            aeth: (opcode == Opcode::Ack).then_some(Aeth { syndrome, msn }),
            resume: (opcode == Opcode::Resume).then_some(ResumeInfo {
                src_gid: Gid::from_seed(gid_seed),
                src_qpn,
                first_unacked_psn: first,
            }),
            payload: if opcode.is_data() { payload } else { Vec::new() },
        }
    }
}

proptest! {
    #[test]
    fn packet_codec_roundtrip(pkt in arb_packet()) {
        let bytes = pkt.encode();
        let decoded = Packet::decode(&bytes).unwrap();
        prop_assert_eq!(&decoded, &pkt);
        prop_assert_eq!(decoded.encode(), bytes);
    }

    #[test]
    fn psn_half_window_orders(a in 0u32..=PSN_MASK, d in 0u32..(1u32 << 23)) {
        let b = (a + d) & PSN_MASK;
        prop_assert!(psn_ge(b, a));
        if d != 0 {
            prop_assert!(psn_lt(a, b));
        }
        prop_assert_eq!(psn_sub(b, a), d);
    }
}

/// Random user-facing operation stream; asserts the state machine only
/// ever takes documented edges.
#[derive(Debug, Clone)]
enum Op {
    Modify(QpState),
    PostSend,
    PostRecv,
    Poll,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        prop_oneof![
            Just(QpState::Reset),
            Just(QpState::Init),
            Just(QpState::Rtr),
            Just(QpState::Rts),
            Just(QpState::Sqd),
            Just(QpState::Sqe),
            Just(QpState::Error),
            Just(QpState::Stopped),
            Just(QpState::Paused),
        ]
        .prop_map(Op::Modify),
        Just(Op::PostSend),
        Just(Op::PostRecv),
        Just(Op::Poll),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn state_machine_closure(ops in proptest::collection::vec(arb_op(), 1..120)) {
        let cfg = PairConfig::default();
        let mut pair = build_pair(cfg);
        let a = pair.a;
        // Start from Reset to explore the whole graph.
        let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
        ctx.modify_qp(a.qpn, QpState::Reset, &QpAttrs::default(), 0).unwrap();
        for op in &ops {
            let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
            let before = ctx.qps[&a.qpn].state;
            match op {
                Op::Modify(target) => {
                    let attrs = QpAttrs {
                        partner: Some(migrsim_core::verbs::PartnerAddr {
                            gid: pair.b.gid,
                            qpn: pair.b.qpn,
                        }),
                        expected_psn: Some(0),
                        next_psn: Some(0),
                        ..Default::default()
                    };
                    let res = ctx.modify_qp(a.qpn, *target, &attrs, 0);
                    let after = ctx.qps[&a.qpn].state;
                    match res {
                        Ok(()) => {
                            prop_assert!(
                                QueuePair::user_transition_allowed(before, *target),
                                "illegal edge {before} -> {target} accepted"
                            );
                            prop_assert_eq!(after, *target);
                        }
                        Err(_) => prop_assert_eq!(after, before, "failed modify must not move"),
                    }
                }
                Op::PostSend => {
                    let sr = migrsim_core::verbs::SendRequest {
                        wr_id: 1,
                        opcode: migrsim_core::verbs::WrOpcode::Send,
                        lkey: a.lkey,
                        addr: a.mr_base,
                        len: 16,
                        remote: None,
                    };
                    let res = ctx.post_send(a.qpn, sr, 0);
                    if matches!(before, QpState::Reset | QpState::Error) {
                        prop_assert!(res.is_err(), "post_send must fail in {before}");
                    } else {
                        prop_assert!(res.is_ok());
                    }
                }
                Op::PostRecv => {
                    let rr = migrsim_core::verbs::ReceiveRequest {
                        wr_id: 2,
                        lkey: a.lkey,
                        addr: a.mr_base + 0x1000,
                        maxlen: 64,
                    };
                    let res = ctx.post_recv(a.qpn, rr);
                    if matches!(before, QpState::Reset | QpState::Error) {
                        prop_assert!(res.is_err());
                    } else {
                        prop_assert!(res.is_ok());
                    }
                }
                Op::Poll => {
                    ctx.poll_cq(a.send_cq, 4).unwrap();
                }
            }
        }
    }

    /// Window discipline: inflight PSNs are exactly the contiguous
    /// interval [first_unacked, next_psn) at every scheduler tick.
    #[test]
    fn window_discipline_under_loss(seed in 0u64..500, loss in 0.0f64..0.4) {
        let cfg = PairConfig {
            net: NetConfig { seed, latency_ticks: 2, loss_rate: loss, dup_rate: 0.0, max_ticks: 400_000 },
            ..Default::default()
        };
        let mut pair = build_pair(cfg);
        for i in 0..12u64 {
            post_recv_slot(&mut pair.sim, &pair.b, i, 0x80000 + i * 4096, 4096);
            post_send_msg(&mut pair.sim, &pair.a, i, i * 4096, &msg_bytes(seed, i, 2200));
        }
        let a = pair.a;
        let outcome = pair.sim.run(400_000, |sim| {
            let qp = &sim.ctx(a.ctx_id).unwrap().qps[&a.qpn];
            let n = qp.req.inflight.len() as u32;
            assert_eq!(psn_sub(qp.req.next_psn, qp.req.first_unacked), n);
            for (i, desc) in qp.req.inflight.iter().enumerate() {
                assert_eq!(desc.psn, (qp.req.first_unacked + i as u32) & PSN_MASK);
            }
            false
        });
        prop_assert_eq!(outcome, RunOutcome::Quiesced);
    }

    /// Exactly-once, in-order, byte-identical delivery for any seed and
    /// loss rate below one with infinite retries.
    #[test]
    fn delivery_exactly_once_under_loss(seed in 0u64..1000, loss in 0.0f64..0.5) {
        let cfg = PairConfig {
            net: NetConfig { seed, latency_ticks: 1, loss_rate: loss, dup_rate: 0.0, max_ticks: 600_000 },
            ..Default::default()
        };
        let mut pair = build_pair(cfg);
        let count = 15u64;
        let mut lens = Vec::new();
        for i in 0..count {
            let len = 1 + ((seed * 31 + i * 7) % 3000) as usize;
            lens.push(len);
            post_recv_slot(&mut pair.sim, &pair.b, i, 0x80000 + i * 4096, 4096);
        }
        for i in 0..count {
            post_send_msg(&mut pair.sim, &pair.a, i, i * 4096, &msg_bytes(seed, i, lens[i as usize]));
        }
        let outcome = pair.sim.run(600_000, |_| false);
        prop_assert_eq!(outcome, RunOutcome::Quiesced);
        let recv = drain_cq(&mut pair.sim, pair.b.ctx_id, pair.b.recv_cq);
        prop_assert_eq!(recv.len() as u64, count);
        for (i, wc) in recv.iter().enumerate() {
            prop_assert_eq!(wc.wr_id, i as u64);
            prop_assert_eq!(wc.byte_len, lens[i] as u64);
        }
        for i in 0..count {
            prop_assert_eq!(
                mr_slice(&pair.sim, &pair.b, 0x80000 + i * 4096, lens[i as usize] as u64),
                msg_bytes(seed, i, lens[i as usize])
            );
        }
    }
}
