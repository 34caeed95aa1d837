//! Per-QP protocol tasks: requester, responder and completer, plus the
//! retransmission timers and the pause/resume migration machinery.
//!
//! The tasks are plain functions driven by the network scheduler in a
//! deterministic order. They operate on a queue pair detached from its
//! context registry and report side effects through [`TaskOutput`]:
//! packets to transmit and timer wake-ups to schedule. Completions are
//! pushed straight into the context's completion queues.
//!
//! Reliability is go-back-N over 24-bit PSNs: the requester keeps a
//! descriptor for every sent-but-unacked packet and replays the window
//! from the first unacknowledged PSN on a NAK or a timeout. A stopped
//! (checkpointed) QP answers everything with NAK_STOPPED; the partner
//! parks itself in Paused until a resume message carries the migrated
//! endpoint's new address.

pub mod packet;

use crate::addr::Gid;
use crate::verbs::{
    flush_detached, force_state_detached, wc_opcode_for, QpState, QueuePair, RecvQueue,
    VerbsContext, WcOpcode, WcStatus, WorkCompletion, WrOpcode, access, PacketDesc,
    RETRY_INFINITE,
};
use packet::{
    psn_le, psn_lt, psn_next, psn_prev, psn_sub, Opcode, Packet, ResumeInfo, Reth, Syndrome,
    PSN_MASK,
};

/// A middle packet carries the ack-requested flag once every this many
/// segments, bounding how much an unacked long message can outrun its acks.
pub const ACK_REQ_INTERVAL: u64 = 16;

/// Retransmission backoff is capped at 64x the base timeout.
pub const BACKOFF_CAP: u32 = 64;

/// An outgoing packet: destination node and the local QP that emitted it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emit {
    pub dst: Gid,
    pub src_qpn: u32,
    pub packet: Packet,
}

/// Side effects of one task invocation.
#[derive(Debug, Default)]
pub struct TaskOutput {
    pub emits: Vec<Emit>,
    /// Ticks at which the scheduler should wake this QP for timer checks.
    pub wakeups: Vec<u64>,
}

impl TaskOutput {
    fn ack_to(&mut self, qp: &QueuePair, dst: Gid, dest_qpn: u32, psn: u32, syn: Syndrome) {
        self.emits.push(Emit {
            dst,
            src_qpn: qp.qpn,
            packet: Packet::ack(dest_qpn, psn, syn, qp.rsp.msn),
        });
    }

    fn ack_partner(&mut self, qp: &QueuePair, psn: u32, syn: Syndrome) {
        if let Some(partner) = qp.partner {
            self.ack_to(qp, partner.gid, partner.qpn, psn, syn);
        }
    }
}

fn sq_position(qp: &QueuePair, seq: u64) -> Option<usize> {
    qp.sq.binary_search_by(|e| e.seq.cmp(&seq)).ok()
}

/// Would `requester_step` emit a packet right now? Used by the scheduler
/// to decide whether virtual time may skip ahead.
pub fn requester_has_work(qp: &QueuePair) -> bool {
    if !qp.requester_active() || qp.req.awaiting_resume_ack {
        return false;
    }
    if let Some(cur) = qp.req.resend_cursor {
        if cur != qp.req.next_psn && !qp.req.inflight.is_empty() {
            return true;
        }
    }
    if qp.req.inflight.len() >= qp.max_inflight as usize {
        return false;
    }
    if qp.state == QpState::Sqd && qp.req.cur_sr_seq >= qp.sqd_fence {
        return false;
    }
    qp.partner.is_some() && sq_position(qp, qp.req.cur_sr_seq).is_some()
}

fn arm_data_timer(qp: &mut QueuePair, now: u64, out: &mut TaskOutput) {
    let dl = now + (qp.retry.timeout_ticks as u64) * (qp.retry.backoff as u64);
    qp.retry.deadline = Some(dl);
    out.wakeups.push(dl);
}

fn arm_resume_timer(qp: &mut QueuePair, now: u64, out: &mut TaskOutput) {
    let dl = now + (qp.retry.timeout_ticks as u64) * (qp.retry.resume_backoff as u64);
    qp.retry.resume_deadline = Some(dl);
    out.wakeups.push(dl);
}

/// Rebuild the wire packet for an inflight descriptor. Payload bytes come
/// from the memory region at (re)transmission time.
fn packet_from_desc(qp: &QueuePair, ctx: &VerbsContext, desc: &PacketDesc) -> Option<Packet> {
    let pos = sq_position(qp, desc.sr_seq)?;
    let sr = qp.sq[pos].sr;
    let partner = qp.partner?;
    let payload = if desc.len > 0 {
        let mr = ctx.mr_by_lkey(qp.pd, sr.lkey)?;
        mr.slice(sr.addr + desc.offset, desc.len as u64).to_vec()
    } else {
        Vec::new()
    };
    let reth = if desc.opcode.has_reth() {
        let remote = sr.remote?;
        Some(Reth { raddr: remote.raddr, rkey: remote.rkey, dma_len: sr.len as u32 })
    } else {
        None
    };
    Some(Packet::data(desc.opcode, partner.qpn, desc.psn, desc.ack_req, reth, payload))
}

/// Emit at most one packet: a go-back-N replay if one is pending,
/// otherwise the next fresh segment of the send queue.
pub fn requester_step(qp: &mut QueuePair, ctx: &mut VerbsContext, now: u64, out: &mut TaskOutput) {
    if !qp.requester_active() || qp.partner.is_none() {
        return;
    }
    // Until the resume message is acknowledged the window's fate is
    // unknown; hold all data so the replay starts from solid ground.
    if qp.req.awaiting_resume_ack {
        return;
    }
    // Replay path.
    if let Some(mut cur) = qp.req.resend_cursor {
        if psn_lt(cur, qp.req.first_unacked) {
            cur = qp.req.first_unacked;
        }
        if cur == qp.req.next_psn {
            qp.req.resend_cursor = None;
        } else {
            let idx = psn_sub(cur, qp.req.first_unacked) as usize;
            if let Some(desc) = qp.req.inflight.get(idx).copied() {
                if let Some(pkt) = packet_from_desc(qp, ctx, &desc) {
                    qp.req.inflight[idx].last_sent = now;
                    let dst = qp.partner.unwrap().gid;
                    out.emits.push(Emit { dst, src_qpn: qp.qpn, packet: pkt });
                }
                let next = psn_next(cur);
                qp.req.resend_cursor =
                    if next == qp.req.next_psn { None } else { Some(next) };
                arm_data_timer(qp, now, out);
                return;
            }
            qp.req.resend_cursor = None;
        }
    }
    // Fresh path.
    if qp.req.inflight.len() >= qp.max_inflight as usize {
        return;
    }
    let Some(pos) = sq_position(qp, qp.req.cur_sr_seq) else { return };
    if qp.state == QpState::Sqd && qp.req.cur_sr_seq >= qp.sqd_fence {
        return;
    }
    let sr = qp.sq[pos].sr;
    let offset = qp.req.cur_sr_offset;
    let seg = (sr.len - offset).min(qp.mtu as u64) as u32;
    let first = offset == 0;
    let last = offset + seg as u64 == sr.len;
    let opcode = Opcode::for_segment(sr.opcode == WrOpcode::RdmaWrite, first, last);
    let seg_idx = if qp.mtu > 0 { offset / qp.mtu as u64 } else { 0 };
    let ack_req = !first && !last && seg_idx % ACK_REQ_INTERVAL == ACK_REQ_INTERVAL - 1;
    let psn = qp.req.next_psn;
    let desc = PacketDesc {
        psn,
        opcode,
        ack_req,
        sr_seq: qp.req.cur_sr_seq,
        offset,
        len: seg,
        last_sent: now,
    };
    let Some(pkt) = packet_from_desc(qp, ctx, &desc) else { return };
    qp.req.inflight.push_back(desc);
    qp.req.next_psn = psn_next(psn);
    qp.req.cur_sr_offset += seg as u64;
    if last {
        qp.req.cur_sr_seq += 1;
        qp.req.cur_sr_offset = 0;
    }
    if qp.req.inflight.len() == 1 {
        arm_data_timer(qp, now, out);
    }
    let dst = qp.partner.unwrap().gid;
    out.emits.push(Emit { dst, src_qpn: qp.qpn, packet: pkt });
}

/// Process one inbound data packet (SEND_* / WRITE_*).
pub fn responder_handle(
    qp: &mut QueuePair,
    ctx: &mut VerbsContext,
    pkt: &Packet,
    now: u64,
    out: &mut TaskOutput,
) {
    debug_assert!(pkt.opcode.is_data());
    if qp.state == QpState::Stopped {
        // A stopped QP drops the payload and answers NAK_STOPPED.
        out.ack_partner(qp, pkt.psn, Syndrome::NakStopped);
        return;
    }
    if !matches!(
        qp.state,
        QpState::Rtr | QpState::Rts | QpState::Sqd | QpState::Sqe | QpState::Paused
    ) {
        return;
    }
    let expected = qp.rsp.expected_psn;
    if pkt.psn == expected {
        apply_data(qp, ctx, pkt, now, out);
    } else if psn_lt(pkt.psn, expected) {
        // Duplicate: re-acknowledge the last received packet.
        out.ack_partner(qp, psn_prev(expected), Syndrome::AckOk);
    } else if !qp.rsp.nak_outstanding {
        qp.rsp.nak_outstanding = true;
        out.ack_partner(qp, expected, Syndrome::NakPsnSeq);
    }
}

fn apply_data(
    qp: &mut QueuePair,
    ctx: &mut VerbsContext,
    pkt: &Packet,
    now: u64,
    out: &mut TaskOutput,
) {
    let opcode = pkt.opcode;
    if opcode.is_send() {
        if opcode.is_first() || opcode.is_only() {
            if qp.rsp.cur_rr.is_some() {
                return; // message already in progress; drop the stray start
            }
            let rr = match &mut qp.rq {
                RecvQueue::Own(ring) => ring.pop_front(),
                RecvQueue::Shared(h) => {
                    ctx.srqs.get_mut(h).and_then(|s| s.ring.pop_front())
                }
            };
            match rr {
                Some(rr) => {
                    qp.rsp.cur_rr = Some(rr);
                    qp.rsp.cur_rr_offset = 0;
                }
                // No receive request available: drop without advancing;
                // the sender's retransmission will try again later.
                None => return,
            }
        } else if qp.rsp.cur_rr.is_none() {
            return;
        }
        let rr = qp.rsp.cur_rr.unwrap();
        let new_off = qp.rsp.cur_rr_offset + pkt.payload.len() as u64;
        if new_off > rr.maxlen {
            // Receive buffer too small for the message.
            qp.rsp.cur_rr = None;
            qp.rsp.cur_rr_offset = 0;
            ctx.push_wc(
                qp.recv_cq,
                WorkCompletion {
                    wr_id: rr.wr_id,
                    status: WcStatus::LocLenErr,
                    byte_len: 0,
                    opcode: WcOpcode::Recv,
                },
            );
            out.ack_partner(qp, pkt.psn, Syndrome::NakRemOp);
            force_state_detached(qp, ctx, QpState::Error, now);
            flush_detached(qp, ctx);
            return;
        }
        if !pkt.payload.is_empty() {
            let pd = qp.pd;
            match ctx.mr_by_lkey_mut(pd, rr.lkey) {
                Some(mr) if mr.contains(rr.addr + qp.rsp.cur_rr_offset, pkt.payload.len() as u64) => {
                    mr.slice_mut(rr.addr + qp.rsp.cur_rr_offset, pkt.payload.len() as u64)
                        .copy_from_slice(&pkt.payload);
                }
                _ => return, // posted RR no longer backed; drop
            }
        }
        qp.rsp.cur_rr_offset = new_off;
        qp.rsp.expected_psn = psn_next(pkt.psn);
        qp.rsp.nak_outstanding = false;
        if opcode.completes_message() {
            qp.rsp.msn = (qp.rsp.msn + 1) & PSN_MASK;
            ctx.push_wc(
                qp.recv_cq,
                WorkCompletion {
                    wr_id: rr.wr_id,
                    status: WcStatus::Success,
                    byte_len: new_off,
                    opcode: WcOpcode::Recv,
                },
            );
            qp.rsp.cur_rr = None;
            qp.rsp.cur_rr_offset = 0;
            out.ack_partner(qp, pkt.psn, Syndrome::AckOk);
        } else if pkt.ack_requested() {
            out.ack_partner(qp, pkt.psn, Syndrome::AckOk);
        }
    } else {
        // RDMA WRITE path.
        if opcode.has_reth() {
            let Some(reth) = pkt.reth else { return };
            let target = ctx.mr_by_rkey(qp.pd, reth.rkey).and_then(|mr| {
                let writable = mr.access & access::REMOTE_WRITE != 0;
                (writable && mr.contains(reth.raddr, reth.dma_len as u64))
                    .then_some((mr.mrn, reth.raddr))
            });
            match target {
                Some((mrn, addr)) => {
                    qp.rsp.cur_write = Some(crate::verbs::WriteTarget { mrn, addr });
                    qp.rsp.cur_rr_offset = 0;
                }
                None => {
                    out.ack_partner(qp, pkt.psn, Syndrome::NakRemAccess);
                    force_state_detached(qp, ctx, QpState::Error, now);
                    flush_detached(qp, ctx);
                    return;
                }
            }
        }
        let Some(w) = qp.rsp.cur_write else { return };
        if !pkt.payload.is_empty() {
            let dst = ctx.mrs.get_mut(&w.mrn);
            match dst {
                Some(mr)
                    if mr.contains(w.addr + qp.rsp.cur_rr_offset, pkt.payload.len() as u64) =>
                {
                    mr.slice_mut(w.addr + qp.rsp.cur_rr_offset, pkt.payload.len() as u64)
                        .copy_from_slice(&pkt.payload);
                }
                _ => {
                    out.ack_partner(qp, pkt.psn, Syndrome::NakRemAccess);
                    force_state_detached(qp, ctx, QpState::Error, now);
                    flush_detached(qp, ctx);
                    return;
                }
            }
        }
        qp.rsp.cur_rr_offset += pkt.payload.len() as u64;
        qp.rsp.expected_psn = psn_next(pkt.psn);
        qp.rsp.nak_outstanding = false;
        if opcode.completes_message() {
            qp.rsp.msn = (qp.rsp.msn + 1) & PSN_MASK;
            qp.rsp.cur_write = None;
            qp.rsp.cur_rr_offset = 0;
            out.ack_partner(qp, pkt.psn, Syndrome::AckOk);
        } else if pkt.ack_requested() {
            out.ack_partner(qp, pkt.psn, Syndrome::AckOk);
        }
    }
}

fn inflight_index(qp: &QueuePair, psn: u32) -> Option<usize> {
    let idx = psn_sub(psn, qp.req.first_unacked) as usize;
    (idx < qp.req.inflight.len()).then_some(idx)
}

/// Retire inflight descriptors with PSN <= p, completing send requests
/// whose final packet got acknowledged. Returns whether anything retired.
fn retire_through(qp: &mut QueuePair, ctx: &mut VerbsContext, p: u32, now: u64) -> bool {
    let mut progressed = false;
    while let Some(front) = qp.req.inflight.front() {
        if !psn_le(front.psn, p) {
            break;
        }
        let desc = qp.req.inflight.pop_front().unwrap();
        qp.req.first_unacked = psn_next(desc.psn);
        progressed = true;
        if desc.opcode.completes_message() {
            if let Some(pos) = sq_position(qp, desc.sr_seq) {
                let entry = qp.sq.remove(pos).unwrap();
                let lat = now.saturating_sub(entry.posted_tick);
                qp.max_send_latency = qp.max_send_latency.max(lat);
                ctx.push_wc(
                    qp.send_cq,
                    WorkCompletion {
                        wr_id: entry.sr.wr_id,
                        status: WcStatus::Success,
                        byte_len: entry.sr.len,
                        opcode: wc_opcode_for(entry.sr.opcode),
                    },
                );
            }
        }
    }
    progressed
}

fn retry_exhaust(qp: &mut QueuePair, ctx: &mut VerbsContext, now: u64) {
    if let Some(front) = qp.req.inflight.front().copied() {
        if let Some(pos) = sq_position(qp, front.sr_seq) {
            let entry = qp.sq.remove(pos).unwrap();
            ctx.push_wc(
                qp.send_cq,
                WorkCompletion {
                    wr_id: entry.sr.wr_id,
                    status: WcStatus::RetryExcErr,
                    byte_len: 0,
                    opcode: wc_opcode_for(entry.sr.opcode),
                },
            );
        }
    }
    force_state_detached(qp, ctx, QpState::Error, now);
    flush_detached(qp, ctx);
}

/// Process one inbound acknowledgement.
pub fn completer_handle(
    qp: &mut QueuePair,
    ctx: &mut VerbsContext,
    pkt: &Packet,
    now: u64,
    out: &mut TaskOutput,
) {
    debug_assert_eq!(pkt.opcode, Opcode::Ack);
    if !matches!(qp.state, QpState::Rts | QpState::Sqd | QpState::Paused) {
        return;
    }
    let Some(aeth) = pkt.aeth else { return };
    match aeth.syndrome {
        Syndrome::AckOk => {
            let p = pkt.psn;
            if psn_lt(p, psn_prev(qp.req.first_unacked)) {
                return; // entirely before the window: stale
            }
            let progressed = retire_through(qp, ctx, p, now);
            if progressed {
                qp.retry.retries_used = 0;
                qp.retry.backoff = 1;
                if let Some(cur) = qp.req.resend_cursor {
                    if psn_lt(cur, qp.req.first_unacked) {
                        qp.req.resend_cursor = (qp.req.first_unacked != qp.req.next_psn)
                            .then_some(qp.req.first_unacked);
                    }
                }
                if qp.req.inflight.is_empty() {
                    qp.retry.deadline = None;
                } else {
                    arm_data_timer(qp, now, out);
                }
            }
            if qp.req.awaiting_resume_ack {
                // The partner has processed our resume message; anything
                // it did not acknowledge must be replayed.
                qp.req.awaiting_resume_ack = false;
                qp.retry.resume_deadline = None;
                qp.retry.resume_backoff = 1;
                if !qp.req.inflight.is_empty() {
                    qp.req.resend_cursor = Some(qp.req.first_unacked);
                    arm_data_timer(qp, now, out);
                }
            }
        }
        Syndrome::NakPsnSeq => {
            let p = pkt.psn; // partner expects this PSN next
            if retire_through(qp, ctx, psn_prev(p), now) {
                qp.retry.retries_used = 0;
                qp.retry.backoff = 1;
            }
            if qp.req.inflight.is_empty() {
                return;
            }
            qp.retry.retries_used += 1;
            if qp.retry.max_retries != RETRY_INFINITE
                && qp.retry.retries_used > qp.retry.max_retries
            {
                retry_exhaust(qp, ctx, now);
                return;
            }
            qp.req.resend_cursor = Some(qp.req.first_unacked);
            arm_data_timer(qp, now, out);
        }
        Syndrome::NakStopped => {
            // Only a NAK provoked by something we sent after the last
            // resume may pause us; late NAKs from a node the partner has
            // already left are ignored.
            let fresh = if let Some(idx) = inflight_index(qp, pkt.psn) {
                let desc = qp.req.inflight[idx];
                qp.last_resume_tick.is_none_or(|t| desc.last_sent > t)
            } else {
                qp.req.awaiting_resume_ack && pkt.psn == qp.req.first_unacked
            };
            if !fresh {
                return;
            }
            if matches!(qp.state, QpState::Rts | QpState::Sqd) {
                force_state_detached(qp, ctx, QpState::Paused, now);
            }
            // Freeze the data timer; pausing never burns retry budget.
            qp.retry.deadline = None;
        }
        Syndrome::NakRemAccess | Syndrome::NakRemOp => {
            let p = pkt.psn;
            retire_through(qp, ctx, psn_prev(p), now);
            if let Some(front) = qp.req.inflight.front().copied() {
                if let Some(pos) = sq_position(qp, front.sr_seq) {
                    let entry = qp.sq.remove(pos).unwrap();
                    ctx.push_wc(
                        qp.send_cq,
                        WorkCompletion {
                            wr_id: entry.sr.wr_id,
                            status: WcStatus::RemAccessErr,
                            byte_len: 0,
                            opcode: wc_opcode_for(entry.sr.opcode),
                        },
                    );
                }
            }
            qp.req.inflight.clear();
            qp.req.resend_cursor = None;
            qp.retry.deadline = None;
            force_state_detached(qp, ctx, QpState::Sqe, now);
        }
    }
}

/// Process an inbound resume message: adopt the sender's new address,
/// leave Paused if applicable, replay anything unacknowledged, and answer
/// with an acknowledgement of the last successfully received packet.
pub fn handle_resume(
    qp: &mut QueuePair,
    ctx: &mut VerbsContext,
    pkt: &Packet,
    now: u64,
    out: &mut TaskOutput,
) {
    let Some(info) = pkt.resume else { return };
    if qp.state == QpState::Stopped {
        // Simultaneous migration: this endpoint is checkpointed itself.
        out.ack_to(qp, info.src_gid, info.src_qpn, pkt.psn, Syndrome::NakStopped);
        return;
    }
    if !matches!(
        qp.state,
        QpState::Rtr | QpState::Rts | QpState::Sqd | QpState::Sqe | QpState::Paused
    ) {
        return;
    }
    qp.partner = Some(crate::verbs::PartnerAddr { gid: info.src_gid, qpn: info.src_qpn });
    qp.last_resume_tick = Some(now);
    if qp.state == QpState::Paused {
        force_state_detached(qp, ctx, QpState::Rts, now);
    }
    if !qp.req.inflight.is_empty() && qp.requester_active() {
        // Packets sent into the partner's stopped window were dropped
        // there; replay the window toward the new location.
        qp.req.resend_cursor = Some(qp.req.first_unacked);
        arm_data_timer(qp, now, out);
    }
    out.ack_to(
        qp,
        info.src_gid,
        info.src_qpn,
        psn_prev(qp.rsp.expected_psn),
        Syndrome::AckOk,
    );
}

/// Build and send the resume message announcing this QP's new location,
/// and start the resume retransmission timer.
pub fn send_resume(qp: &mut QueuePair, ctx: &VerbsContext, now: u64, out: &mut TaskOutput) {
    let Some(partner) = qp.partner else { return };
    qp.req.awaiting_resume_ack = true;
    qp.retry.resume_backoff = 1;
    out.emits.push(Emit {
        dst: partner.gid,
        src_qpn: qp.qpn,
        packet: Packet::resume(
            partner.qpn,
            ResumeInfo {
                src_gid: ctx.node.gid,
                src_qpn: qp.qpn,
                first_unacked_psn: qp.req.first_unacked,
            },
        ),
    });
    arm_resume_timer_pub(qp, now, out);
}

fn arm_resume_timer_pub(qp: &mut QueuePair, now: u64, out: &mut TaskOutput) {
    arm_resume_timer(qp, now, out);
}

/// Fire due timers: go-back-N retransmission on the data path and resume
/// retransmission while a resume ack is outstanding. The data timer is
/// frozen in Paused and Stopped; the resume timer keeps running in Paused
/// so that overlapping migrations of both endpoints still converge.
pub fn timers_fire(qp: &mut QueuePair, ctx: &mut VerbsContext, now: u64, out: &mut TaskOutput) {
    if matches!(qp.state, QpState::Rts | QpState::Sqd) {
        if let Some(dl) = qp.retry.deadline {
            if dl <= now {
                if qp.req.inflight.is_empty() {
                    qp.retry.deadline = None;
                } else {
                    qp.retry.retries_used += 1;
                    if qp.retry.max_retries != RETRY_INFINITE
                        && qp.retry.retries_used > qp.retry.max_retries
                    {
                        retry_exhaust(qp, ctx, now);
                        return;
                    }
                    qp.req.resend_cursor = Some(qp.req.first_unacked);
                    qp.retry.backoff = (qp.retry.backoff * 2).min(BACKOFF_CAP);
                    arm_data_timer(qp, now, out);
                }
            }
        }
    }
    if qp.req.awaiting_resume_ack
        && matches!(qp.state, QpState::Rts | QpState::Sqd | QpState::Paused)
    {
        if let Some(dl) = qp.retry.resume_deadline {
            if dl <= now {
                if let Some(partner) = qp.partner {
                    out.emits.push(Emit {
                        dst: partner.gid,
                        src_qpn: qp.qpn,
                        packet: Packet::resume(
                            partner.qpn,
                            ResumeInfo {
                                src_gid: ctx.node.gid,
                                src_qpn: qp.qpn,
                                first_unacked_psn: qp.req.first_unacked,
                            },
                        ),
                    });
                }
                qp.retry.resume_backoff = (qp.retry.resume_backoff * 2).min(BACKOFF_CAP);
                arm_resume_timer(qp, now, out);
            }
        }
    }
}
