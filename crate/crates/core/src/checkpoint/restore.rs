//! Staged restore of a context image: CREATE each object under its
//! original identifiers, overwrite memory protection keys, walk each QP
//! through the regular state ladder, then REFILL the internal task state
//! and announce the new location with a resume message.

use super::{ContextImage, ObjectRecord, QpRecord};
use crate::error::VerbsError;
use crate::transport::{self, TaskOutput};
use crate::verbs::{PartnerAddr, QpAttrs, QpCaps, QpState, RecvQueue, VerbsContext};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestoreCommand {
    Create,
    SetMrKeys,
    Refill,
}

/// Execute one restore command for one object record. Returns the
/// object's handle. CREATE recreates the object with its original
/// identifiers and queue/buffer contents; SET_MR_KEYS reinstates the
/// dumped protection keys before communication restarts; REFILL installs
/// the requester/responder task state into a QP already walked to RTS and
/// emits the resume message to its partner.
pub fn restore_object(
    ctx: &mut VerbsContext,
    rec: &ObjectRecord,
    cmd: RestoreCommand,
    now: u64,
    out: &mut TaskOutput,
) -> Result<u32, VerbsError> {
    match (cmd, rec) {
        (RestoreCommand::Create, ObjectRecord::Pd(pd)) => {
            ctx.alloc_pd_with_handle(pd.handle)?;
            Ok(pd.handle)
        }
        (RestoreCommand::Create, ObjectRecord::Mr(mr)) => {
            ctx.reg_mr_with_mrn(mr.mrn, mr.pd, mr.base, mr.length, mr.access)?;
            ctx.mrs.get_mut(&mr.mrn).unwrap().buffer.copy_from_slice(&mr.buffer);
            Ok(mr.mrn)
        }
        (RestoreCommand::Create, ObjectRecord::Cq(cq)) => {
            ctx.create_cq_with_handle(cq.handle, cq.depth)?;
            ctx.cqs.get_mut(&cq.handle).unwrap().ring = cq.ring.iter().copied().collect();
            Ok(cq.handle)
        }
        (RestoreCommand::Create, ObjectRecord::Srq(srq)) => {
            ctx.create_srq_with_handle(srq.handle, srq.pd, srq.depth)?;
            ctx.srqs.get_mut(&srq.handle).unwrap().ring = srq.ring.iter().copied().collect();
            Ok(srq.handle)
        }
        (RestoreCommand::Create, ObjectRecord::Qp(qp)) => {
            let srq = match qp.rq {
                super::RqRecord::Shared(h) => Some(h),
                super::RqRecord::Own(_) => None,
            };
            ctx.create_qp_with_qpn(
                qp.qpn,
                qp.pd,
                qp.send_cq,
                qp.recv_cq,
                srq,
                QpCaps { max_send_wr: qp.max_send_wr, max_recv_wr: qp.max_recv_wr },
            )?;
            let q = ctx.qps.get_mut(&qp.qpn).unwrap();
            q.mtu = qp.mtu;
            q.max_inflight = qp.max_inflight;
            q.sq = qp.sq.iter().cloned().collect::<VecDeque<_>>();
            if let super::RqRecord::Own(ring) = &qp.rq {
                q.rq = RecvQueue::Own(ring.iter().copied().collect());
            }
            // Queue-content integrity: the SR sequence counters belong
            // with the queue contents, not the task state.
            q.req.next_sr_seq = qp.next_sr_seq;
            q.req.cur_sr_seq = qp.cur_sr_seq;
            q.retry.timeout_ticks = qp.timeout_ticks;
            q.retry.max_retries = qp.max_retries;
            Ok(qp.qpn)
        }
        (RestoreCommand::SetMrKeys, ObjectRecord::Mr(mr)) => {
            let m = ctx
                .mrs
                .get_mut(&mr.mrn)
                .ok_or(VerbsError::UnknownHandle { kind: "mr", id: mr.mrn })?;
            m.lkey = mr.lkey;
            m.rkey = mr.rkey;
            Ok(mr.mrn)
        }
        (RestoreCommand::Refill, ObjectRecord::Qp(rec)) => {
            {
                let q = ctx
                    .qps
                    .get(&rec.qpn)
                    .ok_or(VerbsError::UnknownHandle { kind: "qp", id: rec.qpn })?;
                if q.state != QpState::Rts {
                    return Err(VerbsError::InvalidState(format!(
                        "refill requires RTS, qp {:#x} is {}",
                        rec.qpn, q.state
                    )));
                }
            }
            install_task_state(ctx, rec);
            // Announce the new location unconditionally.
            let mut qp = ctx.qps.remove(&rec.qpn).unwrap();
            if !qp.req.inflight.is_empty() {
                let dl = now + qp.retry.timeout_ticks as u64;
                qp.retry.deadline = Some(dl);
                out.wakeups.push(dl);
            }
            transport::send_resume(&mut qp, ctx, now, out);
            ctx.qps.insert(rec.qpn, qp);
            Ok(rec.qpn)
        }
        _ => Err(VerbsError::InvalidArgument(
            "restore command does not apply to this object type".into(),
        )),
    }
}

fn install_task_state(ctx: &mut VerbsContext, rec: &QpRecord) {
    let q = ctx.qps.get_mut(&rec.qpn).unwrap();
    q.req.next_psn = rec.next_psn;
    q.req.first_unacked = rec.first_unacked;
    q.req.inflight = rec.inflight.iter().copied().collect();
    q.req.cur_sr_seq = rec.cur_sr_seq;
    q.req.cur_sr_offset = rec.cur_sr_offset;
    q.req.next_sr_seq = rec.next_sr_seq;
    q.req.resend_cursor = rec.resend_cursor;
    q.rsp.expected_psn = rec.expected_psn;
    q.rsp.msn = rec.msn;
    q.rsp.nak_outstanding = rec.nak_outstanding;
    q.rsp.cur_rr = rec.cur_rr;
    q.rsp.cur_rr_offset = rec.cur_rr_offset;
    q.rsp.cur_write = rec.cur_write;
    q.retry.timeout_ticks = rec.timeout_ticks;
    q.retry.max_retries = rec.max_retries;
    q.retry.retries_used = rec.retries_used;
    q.retry.backoff = rec.backoff;
    q.sqd_fence = rec.sqd_fence;
    q.last_resume_tick = rec.last_resume_tick;
}

/// Restore a whole image into a fresh context, in record order. On an
/// identifier collision the restore aborts with the error; the partially
/// built context must be discarded by the caller.
pub fn restore_context(
    ctx: &mut VerbsContext,
    image: &ContextImage,
    now: u64,
    out: &mut TaskOutput,
) -> Result<(), VerbsError> {
    for rec in &image.records {
        restore_object(ctx, rec, RestoreCommand::Create, now, out)?;
        match rec {
            ObjectRecord::Mr(_) => {
                restore_object(ctx, rec, RestoreCommand::SetMrKeys, now, out)?;
            }
            ObjectRecord::Qp(qp) => {
                restore_qp_state(ctx, qp, now, out)?;
            }
            _ => {}
        }
    }
    ctx.device.last_qpn = image.header.last_qpn;
    ctx.device.last_mrn = image.header.last_mrn;
    Ok(())
}

/// Walk a recreated QP to its pre-dump state. QPs that had reached RTS
/// (or a state layered on it) are walked Reset -> Init -> RTR -> RTS with
/// the dumped PSNs and then REFILLed, which emits the resume message.
fn restore_qp_state(
    ctx: &mut VerbsContext,
    rec: &QpRecord,
    now: u64,
    out: &mut TaskOutput,
) -> Result<(), VerbsError> {
    let partner = rec.partner.map(|(gid, qpn)| PartnerAddr { gid, qpn });
    let walk_rtr = |ctx: &mut VerbsContext| -> Result<(), VerbsError> {
        let partner = partner.ok_or_else(|| {
            VerbsError::InvalidArgument(format!("qp {:#x} has no partner to restore", rec.qpn))
        })?;
        ctx.modify_qp(
            rec.qpn,
            QpState::Rtr,
            &QpAttrs {
                partner: Some(partner),
                expected_psn: Some(rec.expected_psn),
                mtu: Some(rec.mtu),
                ..Default::default()
            },
            now,
        )
    };
    match rec.state {
        QpState::Reset => {}
        QpState::Init => {
            ctx.modify_qp(rec.qpn, QpState::Init, &QpAttrs::default(), now)?;
        }
        QpState::Rtr => {
            ctx.modify_qp(rec.qpn, QpState::Init, &QpAttrs::default(), now)?;
            walk_rtr(ctx)?;
        }
        QpState::Rts | QpState::Sqd | QpState::Paused | QpState::Sqe => {
            ctx.modify_qp(rec.qpn, QpState::Init, &QpAttrs::default(), now)?;
            walk_rtr(ctx)?;
            ctx.modify_qp(
                rec.qpn,
                QpState::Rts,
                &QpAttrs { next_psn: Some(rec.next_psn), ..Default::default() },
                now,
            )?;
            restore_object(ctx, &ObjectRecord::Qp(rec.clone()), RestoreCommand::Refill, now, out)?;
            match rec.state {
                QpState::Sqd => ctx.force_qp_state(rec.qpn, QpState::Sqd, now),
                QpState::Paused => ctx.force_qp_state(rec.qpn, QpState::Paused, now),
                QpState::Sqe => ctx.force_qp_state(rec.qpn, QpState::Sqe, now),
                _ => {}
            }
        }
        QpState::Error => {
            ctx.force_qp_state(rec.qpn, QpState::Error, now);
        }
        QpState::Stopped => {
            // A re-dumped, still-checkpointed endpoint: recreate it
            // stopped, task state included, without announcing anything.
            install_task_state(ctx, rec);
            ctx.force_qp_state(rec.qpn, QpState::Stopped, now);
        }
    }
    Ok(())
}
