//! Verbs object model and the application-facing API: contexts, protection
//! domains, memory regions, completion queues, shared receive queues and
//! queue pairs, plus create/modify/post/poll.

pub mod objects;
pub mod qp;

pub use objects::*;
pub use qp::*;

use crate::addr::NodeAddress;
use crate::error::VerbsError;
use crate::rng::XorShift64Star;
use crate::transport::packet::PSN_MASK;
use std::collections::BTreeMap;

/// Identifier allocation state of the simulated device. `last_qpn` and
/// `last_mrn` start one below the range so the first assignment lands on
/// the range start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceState {
    pub last_qpn: u32,
    pub qpn_range: (u32, u32),
    pub last_mrn: u32,
    pub mrn_range: (u32, u32),
}

impl DeviceState {
    pub fn new(qpn_range: (u32, u32), mrn_range: (u32, u32)) -> Self {
        DeviceState {
            last_qpn: qpn_range.0.wrapping_sub(1),
            qpn_range,
            last_mrn: mrn_range.0.wrapping_sub(1),
            mrn_range,
        }
    }
}

/// A QP state change, recorded for the timeline output and the trace
/// assertions. Buffered per context and drained by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub tick: u64,
    pub qpn: u32,
    pub from: QpState,
    pub to: QpState,
}

/// Attributes supplied to `modify_qp`. Which fields are required depends
/// on the target state: partner and expected_psn at RTR, next_psn at RTS.
#[derive(Debug, Clone, Default)]
pub struct QpAttrs {
    pub partner: Option<PartnerAddr>,
    pub mtu: Option<u32>,
    pub expected_psn: Option<u32>,
    pub next_psn: Option<u32>,
    pub retry: Option<(u32, u32)>,
    pub max_inflight: Option<u32>,
}

/// One verbs context: the set of objects belonging to a single simulated
/// process, movable between nodes as a unit.
#[derive(Debug, Clone)]
pub struct VerbsContext {
    pub ctx_id: u32,
    pub node: NodeAddress,
    pub device: DeviceState,
    pub pds: BTreeMap<u32, ProtectionDomain>,
    pub mrs: BTreeMap<u32, MemoryRegion>,
    pub cqs: BTreeMap<u32, CompletionQueue>,
    pub srqs: BTreeMap<u32, SharedReceiveQueue>,
    pub qps: BTreeMap<u32, QueuePair>,
    pub next_pd: u32,
    pub next_cq: u32,
    pub next_srq: u32,
    pub key_rng: XorShift64Star,
    pub transitions: Vec<Transition>,
}

impl VerbsContext {
    pub fn new(
        ctx_id: u32,
        node: NodeAddress,
        key_seed: u64,
        qpn_range: (u32, u32),
        mrn_range: (u32, u32),
    ) -> Self {
        assert!(qpn_range.0 < qpn_range.1 && qpn_range.1 <= PSN_MASK + 1);
        assert!(mrn_range.0 < mrn_range.1);
        VerbsContext {
            ctx_id,
            node,
            device: DeviceState::new(qpn_range, mrn_range),
            pds: BTreeMap::new(),
            mrs: BTreeMap::new(),
            cqs: BTreeMap::new(),
            srqs: BTreeMap::new(),
            qps: BTreeMap::new(),
            next_pd: 1,
            next_cq: 1,
            next_srq: 1,
            key_rng: XorShift64Star::new(key_seed),
            transitions: Vec::new(),
        }
    }

    pub fn alloc_pd(&mut self) -> u32 {
        let handle = self.next_pd;
        self.next_pd += 1;
        self.pds.insert(handle, ProtectionDomain { handle });
        handle
    }

    pub fn create_cq(&mut self, depth: u32) -> Result<u32, VerbsError> {
        if depth == 0 {
            return Err(VerbsError::InvalidArgument("cq depth must be > 0".into()));
        }
        let handle = self.next_cq;
        self.next_cq += 1;
        self.cqs.insert(handle, CompletionQueue::new(handle, depth));
        Ok(handle)
    }

    pub fn create_srq(&mut self, pd: u32, depth: u32) -> Result<u32, VerbsError> {
        self.check_pd(pd)?;
        if depth == 0 {
            return Err(VerbsError::InvalidArgument("srq depth must be > 0".into()));
        }
        let handle = self.next_srq;
        self.next_srq += 1;
        self.srqs.insert(handle, SharedReceiveQueue::new(handle, pd, depth));
        Ok(handle)
    }

    pub fn reg_mr(
        &mut self,
        pd: u32,
        base: u64,
        length: u64,
        access: u8,
    ) -> Result<u32, VerbsError> {
        self.check_pd(pd)?;
        if length == 0 {
            return Err(VerbsError::InvalidArgument("mr length must be > 0".into()));
        }
        let mrn = self
            .next_free_mrn()
            .ok_or(VerbsError::ResourceExhausted("mrn range"))?;
        let lkey = self.gen_key();
        let rkey = self.gen_key();
        self.device.last_mrn = mrn;
        self.mrs.insert(
            mrn,
            MemoryRegion {
                mrn,
                pd,
                lkey,
                rkey,
                base,
                length,
                access,
                buffer: vec![0u8; length as usize],
            },
        );
        Ok(mrn)
    }

    pub fn create_qp(
        &mut self,
        pd: u32,
        send_cq: u32,
        recv_cq: u32,
        srq: Option<u32>,
        caps: QpCaps,
    ) -> Result<u32, VerbsError> {
        self.check_pd(pd)?;
        self.check_cq(send_cq)?;
        self.check_cq(recv_cq)?;
        if let Some(srq) = srq {
            let s = self
                .srqs
                .get(&srq)
                .ok_or(VerbsError::UnknownHandle { kind: "srq", id: srq })?;
            if s.pd != pd {
                return Err(VerbsError::InvalidArgument(
                    "srq belongs to a different pd".into(),
                ));
            }
        }
        let qpn = self
            .next_free_qpn()
            .ok_or(VerbsError::ResourceExhausted("qpn range"))?;
        self.device.last_qpn = qpn;
        self.qps.insert(qpn, Self::blank_qp(qpn, pd, send_cq, recv_cq, srq, caps));
        Ok(qpn)
    }

    /// Recreate a QP under a specific QPN; used by the restore path. Fails
    /// with a collision error when the identifier is taken.
    pub fn create_qp_with_qpn(
        &mut self,
        qpn: u32,
        pd: u32,
        send_cq: u32,
        recv_cq: u32,
        srq: Option<u32>,
        caps: QpCaps,
    ) -> Result<(), VerbsError> {
        let (lo, hi) = self.device.qpn_range;
        if qpn < lo || qpn >= hi {
            return Err(VerbsError::InvalidArgument(format!(
                "qpn {qpn:#x} outside device range"
            )));
        }
        if self.qps.contains_key(&qpn) {
            return Err(VerbsError::Collision { kind: "qpn", id: qpn });
        }
        self.check_pd(pd)?;
        self.check_cq(send_cq)?;
        self.check_cq(recv_cq)?;
        self.device.last_qpn = qpn;
        self.qps.insert(qpn, Self::blank_qp(qpn, pd, send_cq, recv_cq, srq, caps));
        Ok(())
    }

    /// Recreate an MR under a specific MRN; used by the restore path.
    pub fn reg_mr_with_mrn(
        &mut self,
        mrn: u32,
        pd: u32,
        base: u64,
        length: u64,
        access: u8,
    ) -> Result<(), VerbsError> {
        let (lo, hi) = self.device.mrn_range;
        if mrn < lo || mrn >= hi {
            return Err(VerbsError::InvalidArgument(format!(
                "mrn {mrn:#x} outside device range"
            )));
        }
        if self.mrs.contains_key(&mrn) {
            return Err(VerbsError::Collision { kind: "mrn", id: mrn });
        }
        self.check_pd(pd)?;
        if length == 0 {
            return Err(VerbsError::InvalidArgument("mr length must be > 0".into()));
        }
        let lkey = self.gen_key();
        let rkey = self.gen_key();
        self.device.last_mrn = mrn;
        self.mrs.insert(
            mrn,
            MemoryRegion {
                mrn,
                pd,
                lkey,
                rkey,
                base,
                length,
                access,
                buffer: vec![0u8; length as usize],
            },
        );
        Ok(())
    }

    pub fn alloc_pd_with_handle(&mut self, handle: u32) -> Result<(), VerbsError> {
        if self.pds.contains_key(&handle) {
            return Err(VerbsError::Collision { kind: "pd", id: handle });
        }
        self.pds.insert(handle, ProtectionDomain { handle });
        self.next_pd = self.next_pd.max(handle + 1);
        Ok(())
    }

    pub fn create_cq_with_handle(&mut self, handle: u32, depth: u32) -> Result<(), VerbsError> {
        if self.cqs.contains_key(&handle) {
            return Err(VerbsError::Collision { kind: "cq", id: handle });
        }
        self.cqs.insert(handle, CompletionQueue::new(handle, depth));
        self.next_cq = self.next_cq.max(handle + 1);
        Ok(())
    }

    pub fn create_srq_with_handle(
        &mut self,
        handle: u32,
        pd: u32,
        depth: u32,
    ) -> Result<(), VerbsError> {
        if self.srqs.contains_key(&handle) {
            return Err(VerbsError::Collision { kind: "srq", id: handle });
        }
        self.check_pd(pd)?;
        self.srqs.insert(handle, SharedReceiveQueue::new(handle, pd, depth));
        self.next_srq = self.next_srq.max(handle + 1);
        Ok(())
    }

    pub fn set_last_qpn(&mut self, v: u32) -> Result<(), VerbsError> {
        let (lo, hi) = self.device.qpn_range;
        if v < lo || v >= hi {
            return Err(VerbsError::InvalidArgument(format!(
                "last qpn {v:#x} outside range [{lo:#x},{hi:#x})"
            )));
        }
        self.device.last_qpn = v;
        Ok(())
    }

    pub fn set_last_mrn(&mut self, v: u32) -> Result<(), VerbsError> {
        let (lo, hi) = self.device.mrn_range;
        if v < lo || v >= hi {
            return Err(VerbsError::InvalidArgument(format!(
                "last mrn {v:#x} outside range [{lo:#x},{hi:#x})"
            )));
        }
        self.device.last_mrn = v;
        Ok(())
    }

    pub fn modify_qp(
        &mut self,
        qpn: u32,
        target: QpState,
        attrs: &QpAttrs,
        now: u64,
    ) -> Result<(), VerbsError> {
        let qp = self
            .qps
            .get_mut(&qpn)
            .ok_or(VerbsError::UnknownHandle { kind: "qp", id: qpn })?;
        let from = qp.state;
        if !QueuePair::user_transition_allowed(from, target) {
            return Err(VerbsError::InvalidState(format!("{from} -> {target}")));
        }
        match target {
            QpState::Rtr => {
                let partner = attrs
                    .partner
                    .ok_or_else(|| VerbsError::InvalidArgument("rtr requires partner".into()))?;
                let expected = attrs.expected_psn.ok_or_else(|| {
                    VerbsError::InvalidArgument("rtr requires expected_psn".into())
                })?;
                qp.partner = Some(partner);
                qp.rsp.expected_psn = expected & PSN_MASK;
            }
            QpState::Rts if from == QpState::Rtr => {
                let next = attrs
                    .next_psn
                    .ok_or_else(|| VerbsError::InvalidArgument("rts requires next_psn".into()))?;
                qp.req.next_psn = next & PSN_MASK;
                qp.req.first_unacked = next & PSN_MASK;
            }
            QpState::Sqd => {
                qp.sqd_fence = qp.req.next_sr_seq;
            }
            QpState::Reset => {
                Self::reset_qp(qp);
            }
            _ => {}
        }
        if let Some(mtu) = attrs.mtu {
            if mtu == 0 {
                return Err(VerbsError::InvalidArgument("mtu must be > 0".into()));
            }
            qp.mtu = mtu;
        }
        if let Some((timeout, max)) = attrs.retry {
            qp.retry.timeout_ticks = timeout.max(1);
            qp.retry.max_retries = max;
        }
        if let Some(w) = attrs.max_inflight {
            qp.max_inflight = w.max(1);
        }
        qp.state = target;
        self.transitions.push(Transition { tick: now, qpn, from, to: target });
        if target == QpState::Error {
            self.flush_qp(qpn);
        }
        Ok(())
    }

    /// Move a QP to an internal state (Stopped, Paused, back to Rts, ...).
    /// Not reachable through `modify_qp`.
    pub fn force_qp_state(&mut self, qpn: u32, to: QpState, now: u64) {
        if let Some(qp) = self.qps.get_mut(&qpn) {
            let from = qp.state;
            if from != to {
                qp.state = to;
                self.transitions.push(Transition { tick: now, qpn, from, to });
            }
        }
    }

    pub fn post_send(&mut self, qpn: u32, sr: SendRequest, now: u64) -> Result<(), VerbsError> {
        let qp = self
            .qps
            .get(&qpn)
            .ok_or(VerbsError::UnknownHandle { kind: "qp", id: qpn })?;
        if matches!(qp.state, QpState::Reset | QpState::Error) {
            return Err(VerbsError::InvalidState(format!(
                "post_send in {}",
                qp.state
            )));
        }
        if qp.sq.len() as u32 >= qp.caps.max_send_wr {
            return Err(VerbsError::ResourceExhausted("send queue"));
        }
        if sr.opcode == WrOpcode::RdmaWrite {
            if sr.remote.is_none() {
                return Err(VerbsError::InvalidArgument(
                    "rdma write requires remote target".into(),
                ));
            }
            if sr.len > u32::MAX as u64 {
                return Err(VerbsError::InvalidArgument(
                    "rdma write length exceeds 32 bits".into(),
                ));
            }
        }
        let pd = qp.pd;
        let send_cq = qp.send_cq;
        if sr.len > 0 {
            let ok = self
                .mr_by_lkey(pd, sr.lkey)
                .map(|mr| mr.contains(sr.addr, sr.len))
                .unwrap_or(false);
            if !ok {
                // Local protection failure completes immediately in error.
                let wc = WorkCompletion {
                    wr_id: sr.wr_id,
                    status: WcStatus::LocLenErr,
                    byte_len: 0,
                    opcode: wc_opcode_for(sr.opcode),
                };
                self.push_wc(send_cq, wc);
                return Ok(());
            }
        }
        let qp = self.qps.get_mut(&qpn).unwrap();
        let seq = qp.req.next_sr_seq;
        qp.req.next_sr_seq += 1;
        qp.sq.push_back(SqEntry { seq, posted_tick: now, sr });
        Ok(())
    }

    pub fn post_recv(&mut self, qpn: u32, rr: ReceiveRequest) -> Result<(), VerbsError> {
        let qp = self
            .qps
            .get(&qpn)
            .ok_or(VerbsError::UnknownHandle { kind: "qp", id: qpn })?;
        if matches!(qp.state, QpState::Reset | QpState::Error) {
            return Err(VerbsError::InvalidState(format!(
                "post_recv in {}",
                qp.state
            )));
        }
        let pd = qp.pd;
        let max = qp.caps.max_recv_wr;
        match &qp.rq {
            RecvQueue::Shared(_) => Err(VerbsError::InvalidArgument(
                "qp receives through an srq".into(),
            )),
            RecvQueue::Own(ring) if ring.len() as u32 >= max => {
                Err(VerbsError::ResourceExhausted("receive queue"))
            }
            RecvQueue::Own(_) => {
                self.check_rr(pd, &rr)?;
                match &mut self.qps.get_mut(&qpn).unwrap().rq {
                    RecvQueue::Own(ring) => ring.push_back(rr),
                    RecvQueue::Shared(_) => unreachable!(),
                }
                Ok(())
            }
        }
    }

    pub fn post_srq_recv(&mut self, srq: u32, rr: ReceiveRequest) -> Result<(), VerbsError> {
        let s = self
            .srqs
            .get(&srq)
            .ok_or(VerbsError::UnknownHandle { kind: "srq", id: srq })?;
        if s.ring.len() as u32 >= s.depth {
            return Err(VerbsError::ResourceExhausted("shared receive queue"));
        }
        let pd = s.pd;
        self.check_rr(pd, &rr)?;
        self.srqs.get_mut(&srq).unwrap().ring.push_back(rr);
        Ok(())
    }

    pub fn poll_cq(&mut self, cq: u32, max: u32) -> Result<Vec<WorkCompletion>, VerbsError> {
        let cq = self
            .cqs
            .get_mut(&cq)
            .ok_or(VerbsError::UnknownHandle { kind: "cq", id: cq })?;
        let n = (max as usize).min(cq.ring.len());
        Ok(cq.ring.drain(..n).collect())
    }

    pub fn push_wc(&mut self, cq: u32, wc: WorkCompletion) {
        if let Some(cq) = self.cqs.get_mut(&cq) {
            cq.push(wc);
        }
    }

    pub fn mr_by_lkey(&self, pd: u32, lkey: u32) -> Option<&MemoryRegion> {
        self.mrs.values().find(|mr| mr.pd == pd && mr.lkey == lkey)
    }

    pub fn mr_by_lkey_mut(&mut self, pd: u32, lkey: u32) -> Option<&mut MemoryRegion> {
        self.mrs.values_mut().find(|mr| mr.pd == pd && mr.lkey == lkey)
    }

    pub fn mr_by_rkey(&self, pd: u32, rkey: u32) -> Option<&MemoryRegion> {
        self.mrs.values().find(|mr| mr.pd == pd && mr.rkey == rkey)
    }

    /// Flush all outstanding work on a QP with WR_FLUSH_ERR completions.
    pub fn flush_qp(&mut self, qpn: u32) {
        if let Some(mut qp) = self.qps.remove(&qpn) {
            flush_detached(&mut qp, self);
            self.qps.insert(qpn, qp);
        }
    }

    fn reset_qp(qp: &mut QueuePair) {
        qp.sq.clear();
        if let RecvQueue::Own(ring) = &mut qp.rq {
            ring.clear();
        }
        qp.req = RequesterState::default();
        qp.rsp = ResponderState::default();
        qp.retry.retries_used = 0;
        qp.retry.backoff = 1;
        qp.retry.deadline = None;
        qp.retry.resume_deadline = None;
        qp.retry.resume_backoff = 1;
        qp.sqd_fence = 0;
        qp.last_resume_tick = None;
    }

    fn blank_qp(
        qpn: u32,
        pd: u32,
        send_cq: u32,
        recv_cq: u32,
        srq: Option<u32>,
        caps: QpCaps,
    ) -> QueuePair {
        QueuePair {
            qpn,
            pd,
            state: QpState::Reset,
            partner: None,
            mtu: 1024,
            sq: std::collections::VecDeque::new(),
            rq: match srq {
                Some(h) => RecvQueue::Shared(h),
                None => RecvQueue::Own(std::collections::VecDeque::new()),
            },
            send_cq,
            recv_cq,
            caps,
            max_inflight: 64,
            sqd_fence: 0,
            req: RequesterState::default(),
            rsp: ResponderState::default(),
            retry: RetryState::new(32, RETRY_INFINITE),
            last_resume_tick: None,
            max_send_latency: 0,
        }
    }

    fn check_pd(&self, pd: u32) -> Result<(), VerbsError> {
        if self.pds.contains_key(&pd) {
            Ok(())
        } else {
            Err(VerbsError::UnknownHandle { kind: "pd", id: pd })
        }
    }

    fn check_cq(&self, cq: u32) -> Result<(), VerbsError> {
        if self.cqs.contains_key(&cq) {
            Ok(())
        } else {
            Err(VerbsError::UnknownHandle { kind: "cq", id: cq })
        }
    }

    fn check_rr(&self, pd: u32, rr: &ReceiveRequest) -> Result<(), VerbsError> {
        if rr.maxlen == 0 {
            return Ok(());
        }
        let ok = self
            .mr_by_lkey(pd, rr.lkey)
            .map(|mr| mr.contains(rr.addr, rr.maxlen))
            .unwrap_or(false);
        if ok {
            Ok(())
        } else {
            Err(VerbsError::InvalidArgument(
                "receive request lkey/bounds invalid".into(),
            ))
        }
    }

    fn next_free_qpn(&self) -> Option<u32> {
        let (lo, hi) = self.device.qpn_range;
        let len = hi - lo;
        let start = self.device.last_qpn.wrapping_add(1).wrapping_sub(lo);
        (0..len)
            .map(|k| lo + (start.wrapping_add(k) % len))
            .find(|cand| !self.qps.contains_key(cand))
    }

    fn next_free_mrn(&self) -> Option<u32> {
        let (lo, hi) = self.device.mrn_range;
        let len = hi - lo;
        let start = self.device.last_mrn.wrapping_add(1).wrapping_sub(lo);
        (0..len)
            .map(|k| lo + (start.wrapping_add(k) % len))
            .find(|cand| !self.mrs.contains_key(cand))
    }

    /// Protection keys are nonzero and unique within the context so that
    /// rkey lookup is unambiguous.
    fn gen_key(&mut self) -> u32 {
        loop {
            let k = self.key_rng.next_u32();
            if k == 0 {
                continue;
            }
            if self.mrs.values().any(|mr| mr.lkey == k || mr.rkey == k) {
                continue;
            }
            return k;
        }
    }
}

pub fn wc_opcode_for(op: WrOpcode) -> WcOpcode {
    match op {
        WrOpcode::Send => WcOpcode::Send,
        WrOpcode::RdmaWrite => WcOpcode::RdmaWrite,
    }
}

/// State change on a QP that is temporarily detached from its context
/// registry (the transport tasks work on detached QPs).
pub fn force_state_detached(qp: &mut QueuePair, ctx: &mut VerbsContext, to: QpState, now: u64) {
    if qp.state != to {
        ctx.transitions.push(Transition { tick: now, qpn: qp.qpn, from: qp.state, to });
        qp.state = to;
    }
}

/// Flush variant for a detached QP. Shared receive queue entries stay
/// put; only an already-claimed one flushes with the QP.
pub fn flush_detached(qp: &mut QueuePair, ctx: &mut VerbsContext) {
    let send_cq = qp.send_cq;
    let recv_cq = qp.recv_cq;
    for entry in qp.sq.drain(..) {
        ctx.push_wc(
            send_cq,
            WorkCompletion {
                wr_id: entry.sr.wr_id,
                status: WcStatus::WrFlushErr,
                byte_len: 0,
                opcode: wc_opcode_for(entry.sr.opcode),
            },
        );
    }
    if let Some(rr) = qp.rsp.cur_rr.take() {
        ctx.push_wc(
            recv_cq,
            WorkCompletion {
                wr_id: rr.wr_id,
                status: WcStatus::WrFlushErr,
                byte_len: 0,
                opcode: WcOpcode::Recv,
            },
        );
    }
    if let RecvQueue::Own(ring) = &mut qp.rq {
        let drained: Vec<ReceiveRequest> = ring.drain(..).collect();
        for rr in drained {
            ctx.push_wc(
                recv_cq,
                WorkCompletion {
                    wr_id: rr.wr_id,
                    status: WcStatus::WrFlushErr,
                    byte_len: 0,
                    opcode: WcOpcode::Recv,
                },
            );
        }
    }
    qp.req.inflight.clear();
    qp.req.resend_cursor = None;
    qp.req.awaiting_resume_ack = false;
    qp.rsp.cur_write = None;
    qp.retry.deadline = None;
    qp.retry.resume_deadline = None;
}
