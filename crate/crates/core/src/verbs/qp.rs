//! Queue pair state: the user-visible state machine plus the internal
//! requester/responder task state that the transport tasks operate on.

use super::objects::{ReceiveRequest, SendRequest};
use crate::addr::Gid;
use crate::transport::packet::Opcode;
use std::collections::VecDeque;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QpState {
    Reset,
    Init,
    Rtr,
    Rts,
    Sqd,
    Sqe,
    Error,
    /// Endpoint checkpointed; replies NAK_STOPPED to anything inbound.
    Stopped,
    /// Partner is stopped; sending is suspended until a resume arrives.
    Paused,
}

impl fmt::Display for QpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QpState::Reset => "RESET",
            QpState::Init => "INIT",
            QpState::Rtr => "RTR",
            QpState::Rts => "RTS",
            QpState::Sqd => "SQD",
            QpState::Sqe => "SQE",
            QpState::Error => "ERROR",
            QpState::Stopped => "STOPPED",
            QpState::Paused => "PAUSED",
        };
        f.write_str(s)
    }
}

/// Remote endpoint of an RC connection. Only the GID and QPN are carried
/// by resume messages, so only they can survive a partner migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartnerAddr {
    pub gid: Gid,
    pub qpn: u32,
}

/// A send request queued on the SQ. `seq` is a per-QP monotone counter
/// that lets inflight packet descriptors name their request without
/// relying on application wr_ids being unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqEntry {
    pub seq: u64,
    pub posted_tick: u64,
    pub sr: SendRequest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecvQueue {
    Own(VecDeque<ReceiveRequest>),
    Shared(u32),
}

/// Descriptor of one sent-but-unacknowledged packet. Enough is recorded
/// to rebuild the exact packet bytes for go-back-N retransmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketDesc {
    pub psn: u32,
    pub opcode: Opcode,
    pub ack_req: bool,
    pub sr_seq: u64,
    pub offset: u64,
    pub len: u32,
    pub last_sent: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequesterState {
    pub next_psn: u32,
    pub first_unacked: u32,
    /// PSNs held here are exactly the interval [first_unacked, next_psn).
    pub inflight: VecDeque<PacketDesc>,
    /// Sequence number of the SQ entry currently being segmented.
    pub cur_sr_seq: u64,
    pub cur_sr_offset: u64,
    pub next_sr_seq: u64,
    /// Go-back-N replay position within `inflight`, if a replay is due.
    pub resend_cursor: Option<u32>,
    /// Set from REFILL until the partner acknowledges the resume message.
    pub awaiting_resume_ack: bool,
}

/// Target of an in-progress inbound RDMA WRITE (between FIRST and LAST).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteTarget {
    pub mrn: u32,
    pub addr: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponderState {
    pub expected_psn: u32,
    pub msn: u32,
    /// Receive request claimed for the message currently being assembled.
    pub cur_rr: Option<ReceiveRequest>,
    pub cur_rr_offset: u64,
    pub cur_write: Option<WriteTarget>,
    /// One NAK_PSN_SEQ per gap episode; cleared when expected_psn advances.
    pub nak_outstanding: bool,
}

/// `max_retries == u32::MAX` means retry forever.
pub const RETRY_INFINITE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryState {
    pub timeout_ticks: u32,
    pub max_retries: u32,
    pub retries_used: u32,
    /// Current backoff multiplier, doubled per timeout, capped at 64.
    pub backoff: u32,
    /// Data retransmission deadline; None while frozen or idle.
    pub deadline: Option<u64>,
    /// Resume retransmission deadline; survives the Paused state.
    pub resume_deadline: Option<u64>,
    pub resume_backoff: u32,
}

impl RetryState {
    pub fn new(timeout_ticks: u32, max_retries: u32) -> Self {
        RetryState {
            timeout_ticks,
            max_retries,
            retries_used: 0,
            backoff: 1,
            deadline: None,
            resume_deadline: None,
            resume_backoff: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpCaps {
    pub max_send_wr: u32,
    pub max_recv_wr: u32,
}

impl Default for QpCaps {
    fn default() -> Self {
        QpCaps { max_send_wr: 1 << 14, max_recv_wr: 1 << 14 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuePair {
    pub qpn: u32,
    pub pd: u32,
    pub state: QpState,
    pub partner: Option<PartnerAddr>,
    pub mtu: u32,
    pub sq: VecDeque<SqEntry>,
    pub rq: RecvQueue,
    pub send_cq: u32,
    pub recv_cq: u32,
    pub caps: QpCaps,
    pub max_inflight: u32,
    /// SQ entries with seq >= this fence are not transmitted while in SQD.
    pub sqd_fence: u64,
    pub req: RequesterState,
    pub rsp: ResponderState,
    pub retry: RetryState,
    /// Tick of the most recently processed resume message, used to ignore
    /// stale NAK_STOPPED replies that were generated before the resume.
    pub last_resume_tick: Option<u64>,
    /// Largest post-to-completion latency seen on this QP's send side.
    pub max_send_latency: u64,
}

impl QueuePair {
    /// Edges of the user-controlled state graph. Stopped and Paused are
    /// internal states and are never legal modify targets.
    pub fn user_transition_allowed(from: QpState, to: QpState) -> bool {
        use QpState::*;
        matches!(
            (from, to),
            (Reset, Init)
                | (Init, Rtr)
                | (Rtr, Rts)
                | (Rts, Sqd)
                | (Sqd, Rts)
                | (_, Error)
                | (_, Reset)
        ) && !matches!(to, Stopped | Paused | Sqe)
    }

    pub fn requester_active(&self) -> bool {
        matches!(self.state, QpState::Rts | QpState::Sqd)
    }
}
