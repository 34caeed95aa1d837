//! Dump/restore fidelity: image codec identity, atomic stop-on-dump,
//! identifier stability, the staged restore walk and key restore.

mod common;

use common::*;
use migrsim_core::checkpoint::{
    dump_context, restore_context, restore_object, ContextImage, ObjectRecord, RestoreCommand,
};
use migrsim_core::error::VerbsError;
use migrsim_core::migrator::restore_image_onto_node;
use migrsim_core::netsim::NetConfig;
use migrsim_core::transport::packet::Opcode;
use migrsim_core::transport::TaskOutput;
use migrsim_core::verbs::{access, QpCaps, QpState, VerbsContext};
use migrsim_core::NodeAddress;

fn small_ctx() -> VerbsContext {
    let mut ctx = VerbsContext::new(
        9,
        NodeAddress::from_seed(42, 1),
        1234,
        (0x100, 0x200),
        (1, 0x100),
    );
    let pd = ctx.alloc_pd();
    let scq = ctx.create_cq(16).unwrap();
    let rcq = ctx.create_cq(16).unwrap();
    let mrn = ctx.reg_mr(pd, 0x1000, 4, access::LOCAL_WRITE).unwrap();
    ctx.mrs.get_mut(&mrn).unwrap().buffer.copy_from_slice(&[0xDE, 0xAD, 0xBE, 0xEF]);
    ctx.create_qp(pd, scq, rcq, None, QpCaps::default()).unwrap();
    ctx
}

#[test]
fn object_count_counts_all_objects() {
    let mut ctx = small_ctx();
    let image = dump_context(&mut ctx, 5);
    // 1 PD + 1 MR + 2 CQs + 1 QP
    assert_eq!(image.object_count(), 5);
}

#[test]
fn dump_stops_every_qp() {
    let mut ctx = small_ctx();
    dump_context(&mut ctx, 5);
    assert!(ctx.qps.values().all(|qp| qp.state == QpState::Stopped));
    // The stop is visible in the transition log.
    assert!(ctx
        .transitions
        .iter()
        .any(|t| t.tick == 5 && t.to == QpState::Stopped));
}

#[test]
fn error_qp_is_dumped_as_error() {
    let mut ctx = small_ctx();
    let qpn = *ctx.qps.keys().next().unwrap();
    ctx.modify_qp(qpn, QpState::Error, &Default::default(), 0).unwrap();
    let image = dump_context(&mut ctx, 1);
    let rec = image
        .records
        .iter()
        .find_map(|r| match r {
            ObjectRecord::Qp(q) => Some(q),
            _ => None,
        })
        .unwrap();
    assert_eq!(rec.state, QpState::Error);
}

#[test]
fn encode_decode_is_byte_identity() {
    let mut ctx = small_ctx();
    let image = dump_context(&mut ctx, 0);
    let bytes = image.encode();
    let decoded = ContextImage::decode(&bytes).unwrap();
    assert_eq!(decoded, image);
    assert_eq!(decoded.encode(), bytes);
}

// The image header layout is frozen; these bytes are the contract.
#[test]
fn golden_image_header() {
    let mut ctx = small_ctx();
    let image = dump_context(&mut ctx, 0);
    let bytes = image.encode();
    assert_eq!(&bytes[0..4], b"MGRD");
    assert_eq!(u16::from_be_bytes([bytes[4], bytes[5]]), 1); // version
    assert_eq!(&bytes[6..22], &ctx.node.gid.0); // node gid
    let be32 = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    assert_eq!(be32(22), 0x100); // qpn range lo
    assert_eq!(be32(26), 0x200); // qpn range hi
    assert_eq!(be32(30), 1); // mrn range lo
    assert_eq!(be32(34), 0x100); // mrn range hi
    assert_eq!(be32(38), 0x100); // last qpn
    assert_eq!(be32(42), 1); // last mrn
    assert_eq!(be32(46), 5); // object count
    // First record: PD, 4-byte body, handle 1.
    assert_eq!(bytes[50], 1);
    assert_eq!(be32(51), 4);
    assert_eq!(be32(55), 1);
}

#[test]
fn decode_rejects_corruption() {
    let mut ctx = small_ctx();
    let bytes = dump_context(&mut ctx, 0).encode();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        ContextImage::decode(&bad),
        Err(migrsim_core::ImageError::BadMagic)
    ));
    let mut bad = bytes.clone();
    bad[5] = 9;
    assert!(matches!(
        ContextImage::decode(&bad),
        Err(migrsim_core::ImageError::BadVersion(_))
    ));
    assert!(ContextImage::decode(&bytes[..bytes.len() - 1]).is_err());
}

/// Build a pair, push some traffic through it with loss so the dump
/// catches PSN counters, inflight descriptors and partial progress.
fn mid_stream_pair(seed: u64) -> (Pair, u64) {
    let cfg = PairConfig {
        net: NetConfig {
            seed,
            latency_ticks: 2,
            loss_rate: 0.15,
            dup_rate: 0.0,
            max_ticks: 1_000_000,
        },
        ..Default::default()
    };
    let mut pair = build_pair(cfg);
    let count = 20u64;
    for i in 0..count {
        post_recv_slot(&mut pair.sim, &pair.b, i, 0x80000 + i * 4096, 4096);
        post_recv_slot(&mut pair.sim, &pair.a, i, 0x80000 + i * 4096, 4096);
    }
    for i in 0..count {
        post_send_msg(&mut pair.sim, &pair.a, i, i * 4096, &msg_bytes(seed, i, 2500));
        post_send_msg(&mut pair.sim, &pair.b, i, i * 4096, &msg_bytes(seed ^ 1, i, 1800));
    }
    // Stop mid-stream.
    let ticks = 40 + seed % 37;
    pair.sim.run(ticks, |_| false);
    (pair, count)
}

#[test]
fn roundtrip_preserves_observable_state_mid_stream() {
    for seed in 0..8 {
        let (mut pair, _) = mid_stream_pair(seed);
        let a = pair.a;
        let now = pair.sim.now();
        let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
        let image = dump_context(ctx, now);
        let bytes = image.encode();
        assert_eq!(ContextImage::decode(&bytes).unwrap(), image, "codec identity");

        // Restore onto a brand-new node in the same simulation.
        let fresh = pair.sim.attach_node("fresh", 100 + seed).unwrap();
        restore_image_onto_node(&mut pair.sim, fresh, 77, &image).unwrap();
        let restored = pair.sim.ctx_mut(77).unwrap();
        let redump = dump_context(restored, now);
        assert_observably_equal(&image, &redump);
    }
}

#[test]
fn restored_identifiers_match_originals_on_empty_ranges() {
    let (mut pair, _) = mid_stream_pair(3);
    let a = pair.a;
    let now = pair.sim.now();
    let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
    let orig_qpns: Vec<u32> = ctx.qps.keys().copied().collect();
    let orig_mrs: Vec<(u32, u32, u32)> =
        ctx.mrs.values().map(|m| (m.mrn, m.lkey, m.rkey)).collect();
    let image = dump_context(ctx, now);
    let fresh = pair.sim.attach_node("fresh", 500).unwrap();
    restore_image_onto_node(&mut pair.sim, fresh, 78, &image).unwrap();
    let restored = pair.sim.ctx(78).unwrap();
    assert_eq!(restored.qps.keys().copied().collect::<Vec<_>>(), orig_qpns);
    assert_eq!(
        restored.mrs.values().map(|m| (m.mrn, m.lkey, m.rkey)).collect::<Vec<_>>(),
        orig_mrs,
        "MRNs and both protection keys must survive restore"
    );
}

#[test]
fn occupied_identifier_reports_collision() {
    let (mut pair, _) = mid_stream_pair(4);
    let a = pair.a;
    let b = pair.b;
    let now = pair.sim.now();
    let image = {
        let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
        dump_context(ctx, now)
    };
    // b's node already owns b.qpn; craft an image claiming the same QPN.
    let mut forged = image.clone();
    for rec in &mut forged.records {
        if let ObjectRecord::Qp(q) = rec {
            q.qpn = b.qpn;
        }
    }
    let err = restore_image_onto_node(&mut pair.sim, b.node, 79, &forged).unwrap_err();
    assert_eq!(err, VerbsError::Collision { kind: "qpn", id: b.qpn });
    // Deterministic: the same attempt fails identically.
    let err2 = restore_image_onto_node(&mut pair.sim, b.node, 79, &forged).unwrap_err();
    assert_eq!(err, err2);
}

#[test]
fn refill_emits_resume_with_dumped_first_unacked() {
    let (mut pair, _) = mid_stream_pair(5);
    let a = pair.a;
    let now = pair.sim.now();
    let image = {
        let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
        dump_context(ctx, now)
    };
    let qp_rec = image
        .records
        .iter()
        .find_map(|r| match r {
            ObjectRecord::Qp(q) => Some(q.clone()),
            _ => None,
        })
        .unwrap();
    let fresh = pair.sim.attach_node("fresh", 501).unwrap();
    let fresh_gid = pair.sim.nodes[fresh].addr.gid;
    restore_image_onto_node(&mut pair.sim, fresh, 80, &image).unwrap();
    // The restore sent one RESUME per QP carrying the dumped PSN.
    let trace = pair.sim.render_trace();
    let resume_line = trace
        .lines()
        .rev()
        .find(|l| l.contains("snd fresh") && l.contains("RESUME"))
        .expect("restore must announce itself");
    let fields: Vec<&str> = resume_line.split(' ').collect();
    assert_eq!(fields[5].parse::<u32>().unwrap(), qp_rec.first_unacked);
    // And the restored QP is awaiting its resume ack at the new address.
    let qp = &pair.sim.ctx(80).unwrap().qps[&qp_rec.qpn];
    assert!(qp.req.awaiting_resume_ack);
    assert_eq!(pair.sim.ctx(80).unwrap().node.gid, fresh_gid);
}

#[test]
fn refill_before_rts_is_a_state_error() {
    let mut ctx = small_ctx();
    let image = dump_context(&mut ctx, 0);
    let qp_rec = image
        .records
        .iter()
        .find(|r| matches!(r, ObjectRecord::Qp(_)))
        .unwrap();
    let mut target = VerbsContext::new(
        50,
        NodeAddress::from_seed(77, 2),
        999,
        (0x100, 0x200),
        (1, 0x100),
    );
    let mut out = TaskOutput::default();
    // CREATE the dependencies and the QP, but leave it in Reset.
    for rec in &image.records {
        restore_object(&mut target, rec, RestoreCommand::Create, 0, &mut out).unwrap();
    }
    let err = restore_object(&mut target, qp_rec, RestoreCommand::Refill, 0, &mut out).unwrap_err();
    assert!(matches!(err, VerbsError::InvalidState(_)));
}

#[test]
fn set_mr_keys_overwrites_fresh_keys() {
    let mut ctx = small_ctx();
    let image = dump_context(&mut ctx, 0);
    let mr_rec = image
        .records
        .iter()
        .find_map(|r| match r {
            ObjectRecord::Mr(m) => Some(m.clone()),
            _ => None,
        })
        .unwrap();
    let mut target = VerbsContext::new(
        51,
        NodeAddress::from_seed(78, 2),
        1000,
        (0x100, 0x200),
        (1, 0x100),
    );
    let mut out = TaskOutput::default();
    let pd_rec = image.records.iter().find(|r| matches!(r, ObjectRecord::Pd(_))).unwrap();
    restore_object(&mut target, pd_rec, RestoreCommand::Create, 0, &mut out).unwrap();
    restore_object(
        &mut target,
        &ObjectRecord::Mr(mr_rec.clone()),
        RestoreCommand::Create,
        0,
        &mut out,
    )
    .unwrap();
    // Freshly created keys come from the new node's stream...
    let fresh = &target.mrs[&mr_rec.mrn];
    assert_eq!(fresh.buffer, mr_rec.buffer, "buffer contents restored at CREATE");
    // ...and SET_MR_KEYS pins them back to the dumped values.
    restore_object(
        &mut target,
        &ObjectRecord::Mr(mr_rec.clone()),
        RestoreCommand::SetMrKeys,
        0,
        &mut out,
    )
    .unwrap();
    let m = &target.mrs[&mr_rec.mrn];
    assert_eq!((m.lkey, m.rkey), (mr_rec.lkey, mr_rec.rkey));
}

#[test]
fn restore_full_context_reaches_pre_dump_states() {
    let (mut pair, _) = mid_stream_pair(6);
    let a = pair.a;
    let now = pair.sim.now();
    let image = {
        let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
        dump_context(ctx, now)
    };
    let mut target = VerbsContext::new(
        52,
        NodeAddress::from_seed(79, 3),
        1001,
        image.header.qpn_range,
        image.header.mrn_range,
    );
    let mut out = TaskOutput::default();
    restore_context(&mut target, &image, now, &mut out).unwrap();
    for rec in &image.records {
        if let ObjectRecord::Qp(q) = rec {
            assert_eq!(target.qps[&q.qpn].state, q.state);
        }
    }
    assert_eq!(target.device.last_qpn, image.header.last_qpn);
    assert_eq!(target.device.last_mrn, image.header.last_mrn);
    // One resume per connected QP.
    let resumes = out.emits.iter().filter(|e| e.packet.opcode == Opcode::Resume).count();
    assert_eq!(resumes, 1);
}

#[test]
fn sqd_dump_restores_literally_with_fence() {
    let (mut pair, _) = mid_stream_pair(9);
    let a = pair.a;
    let now = pair.sim.now();
    {
        let ctx = pair.sim.ctx_mut(a.ctx_id).unwrap();
        ctx.modify_qp(a.qpn, migrsim_core::verbs::QpState::Sqd, &Default::default(), now)
            .unwrap();
        // More work arrives after the drain point.
        let lkey = ctx.mrs[&a.mrn].lkey;
        ctx.post_send(
            a.qpn,
            migrsim_core::verbs::SendRequest {
                wr_id: 900,
                opcode: migrsim_core::verbs::WrOpcode::Send,
                lkey,
                addr: a.mr_base,
                len: 64,
                remote: None,
            },
            now,
        )
        .unwrap();
    }
    let fence = pair.sim.ctx(a.ctx_id).unwrap().qps[&a.qpn].sqd_fence;
    let image = dump_context(pair.sim.ctx_mut(a.ctx_id).unwrap(), now);
    let fresh = pair.sim.attach_node("fresh", 600).unwrap();
    restore_image_onto_node(&mut pair.sim, fresh, 81, &image).unwrap();
    let qp = &pair.sim.ctx(81).unwrap().qps[&a.qpn];
    assert_eq!(qp.state, QpState::Sqd);
    assert_eq!(qp.sqd_fence, fence, "fence must survive, not be recomputed");
}

#[test]
fn run_until_predicate_stops_the_run() {
    let (mut pair, count) = mid_stream_pair(10);
    let b_ctx = pair.b.ctx_id;
    let b_rcq = pair.b.recv_cq;
    let outcome = pair.sim.run_until(1_000_000, |sim| {
        sim.ctx(b_ctx).map(|c| !c.cqs[&b_rcq].ring.is_empty()).unwrap_or(false)
    });
    assert_eq!(outcome, migrsim_core::netsim::RunOutcome::Stopped);
    let _ = count;
}

#[test]
fn dump_mid_message_captures_responder_progress() {
    // Drop enough packets that the receiver sits mid-message, then make
    // sure the claimed receive request and its offset travel in the image.
    for seed in 0..20 {
        let (mut pair, _) = mid_stream_pair(seed);
        let b = pair.b;
        let now = pair.sim.now();
        let ctx = pair.sim.ctx_mut(b.ctx_id).unwrap();
        let qp = &ctx.qps[&b.qpn];
        let mid_message = qp.rsp.cur_rr.is_some();
        let image = dump_context(ctx, now);
        let rec = image
            .records
            .iter()
            .find_map(|r| match r {
                ObjectRecord::Qp(q) if q.qpn == b.qpn => Some(q.clone()),
                _ => None,
            })
            .unwrap();
        if mid_message {
            assert!(rec.cur_rr.is_some());
            return; // found a mid-message dump; good
        }
    }
    panic!("no seed produced a mid-message dump; widen the search");
}
