//! Context checkpoint images and the dump/restore API.
//!
//! A dump is atomic: within one scheduler tick every QP of the context is
//! moved to Stopped and all objects are serialized. The image is
//! big-endian and fully self-contained (memory region bytes travel inside
//! it); records appear in dependency order (PDs, MRs, CQs, SRQs, QPs)
//! so a restore can recreate objects one by one. `encode` and `decode`
//! are exact inverses at the byte level; see docs/wire.md.

pub mod restore;

pub use restore::{restore_context, restore_object, RestoreCommand};

use crate::addr::Gid;
use crate::error::ImageError;
use crate::verbs::{
    PacketDesc, QpState, ReceiveRequest, RecvQueue, SendRequest, SqEntry, VerbsContext,
    WcOpcode, WcStatus, WorkCompletion, WrOpcode, WriteTarget,
};
use crate::transport::packet::Opcode;

pub const IMAGE_MAGIC: [u8; 4] = *b"MGRD";
pub const IMAGE_VERSION: u16 = 1;

const REC_PD: u8 = 1;
const REC_MR: u8 = 2;
const REC_CQ: u8 = 3;
const REC_SRQ: u8 = 4;
const REC_QP: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub node_gid: Gid,
    pub qpn_range: (u32, u32),
    pub mrn_range: (u32, u32),
    pub last_qpn: u32,
    pub last_mrn: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdRecord {
    pub handle: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MrRecord {
    pub mrn: u32,
    pub pd: u32,
    pub lkey: u32,
    pub rkey: u32,
    pub base: u64,
    pub length: u64,
    pub access: u8,
    pub buffer: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CqRecord {
    pub handle: u32,
    pub depth: u32,
    pub ring: Vec<WorkCompletion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrqRecord {
    pub handle: u32,
    pub pd: u32,
    pub depth: u32,
    pub ring: Vec<ReceiveRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QpRecord {
    pub qpn: u32,
    pub pd: u32,
    /// State the QP held immediately before the dump stopped it.
    pub state: QpState,
    pub partner: Option<(Gid, u32)>,
    pub mtu: u32,
    pub max_inflight: u32,
    pub max_send_wr: u32,
    pub max_recv_wr: u32,
    pub send_cq: u32,
    pub recv_cq: u32,
    pub sqd_fence: u64,
    pub sq: Vec<SqEntry>,
    pub rq: RqRecord,
    pub next_psn: u32,
    pub first_unacked: u32,
    pub cur_sr_seq: u64,
    pub cur_sr_offset: u64,
    pub next_sr_seq: u64,
    pub awaiting_resume_ack: bool,
    pub resend_cursor: Option<u32>,
    pub inflight: Vec<PacketDesc>,
    pub expected_psn: u32,
    pub msn: u32,
    pub nak_outstanding: bool,
    pub cur_rr: Option<ReceiveRequest>,
    pub cur_rr_offset: u64,
    pub cur_write: Option<WriteTarget>,
    pub timeout_ticks: u32,
    pub max_retries: u32,
    pub retries_used: u32,
    pub backoff: u32,
    pub last_resume_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RqRecord {
    Own(Vec<ReceiveRequest>),
    Shared(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectRecord {
    Pd(PdRecord),
    Mr(MrRecord),
    Cq(CqRecord),
    Srq(SrqRecord),
    Qp(QpRecord),
}

impl ObjectRecord {
    fn type_tag(&self) -> u8 {
        match self {
            ObjectRecord::Pd(_) => REC_PD,
            ObjectRecord::Mr(_) => REC_MR,
            ObjectRecord::Cq(_) => REC_CQ,
            ObjectRecord::Srq(_) => REC_SRQ,
            ObjectRecord::Qp(_) => REC_QP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextImage {
    pub header: ImageHeader,
    pub records: Vec<ObjectRecord>,
}

/// Atomically checkpoint a context: every QP transitions to Stopped, then
/// all objects serialize. The QPs stay Stopped until the context is
/// destroyed. A QP already in Error is dumped with Error preserved.
pub fn dump_context(ctx: &mut VerbsContext, now: u64) -> ContextImage {
    let mut records = Vec::new();
    for pd in ctx.pds.values() {
        records.push(ObjectRecord::Pd(PdRecord { handle: pd.handle }));
    }
    for mr in ctx.mrs.values() {
        records.push(ObjectRecord::Mr(MrRecord {
            mrn: mr.mrn,
            pd: mr.pd,
            lkey: mr.lkey,
            rkey: mr.rkey,
            base: mr.base,
            length: mr.length,
            access: mr.access,
            buffer: mr.buffer.clone(),
        }));
    }
    for cq in ctx.cqs.values() {
        records.push(ObjectRecord::Cq(CqRecord {
            handle: cq.handle,
            depth: cq.depth,
            ring: cq.ring.iter().copied().collect(),
        }));
    }
    for srq in ctx.srqs.values() {
        records.push(ObjectRecord::Srq(SrqRecord {
            handle: srq.handle,
            pd: srq.pd,
            depth: srq.depth,
            ring: srq.ring.iter().copied().collect(),
        }));
    }
    let qpns: Vec<u32> = ctx.qps.keys().copied().collect();
    for qpn in qpns {
        let pre_stop = ctx.qps[&qpn].state;
        // Stop first: from here on the QP answers only NAK_STOPPED.
        if pre_stop != QpState::Stopped {
            ctx.force_qp_state(qpn, QpState::Stopped, now);
        }
        let qp = ctx.qps.get_mut(&qpn).unwrap();
        qp.retry.deadline = None;
        qp.retry.resume_deadline = None;
        let qp = &ctx.qps[&qpn];
        records.push(ObjectRecord::Qp(QpRecord {
            qpn: qp.qpn,
            pd: qp.pd,
            state: pre_stop,
            partner: qp.partner.map(|p| (p.gid, p.qpn)),
            mtu: qp.mtu,
            max_inflight: qp.max_inflight,
            max_send_wr: qp.caps.max_send_wr,
            max_recv_wr: qp.caps.max_recv_wr,
            send_cq: qp.send_cq,
            recv_cq: qp.recv_cq,
            sqd_fence: qp.sqd_fence,
            sq: qp.sq.iter().cloned().collect(),
            rq: match &qp.rq {
                RecvQueue::Own(ring) => RqRecord::Own(ring.iter().copied().collect()),
                RecvQueue::Shared(h) => RqRecord::Shared(*h),
            },
            next_psn: qp.req.next_psn,
            first_unacked: qp.req.first_unacked,
            cur_sr_seq: qp.req.cur_sr_seq,
            cur_sr_offset: qp.req.cur_sr_offset,
            next_sr_seq: qp.req.next_sr_seq,
            awaiting_resume_ack: qp.req.awaiting_resume_ack,
            resend_cursor: qp.req.resend_cursor,
            inflight: qp.req.inflight.iter().copied().collect(),
            expected_psn: qp.rsp.expected_psn,
            msn: qp.rsp.msn,
            nak_outstanding: qp.rsp.nak_outstanding,
            cur_rr: qp.rsp.cur_rr,
            cur_rr_offset: qp.rsp.cur_rr_offset,
            cur_write: qp.rsp.cur_write,
            timeout_ticks: qp.retry.timeout_ticks,
            max_retries: qp.retry.max_retries,
            retries_used: qp.retry.retries_used,
            backoff: qp.retry.backoff,
            last_resume_tick: qp.last_resume_tick,
        }));
    }
    ContextImage {
        header: ImageHeader {
            node_gid: ctx.node.gid,
            qpn_range: ctx.device.qpn_range,
            mrn_range: ctx.device.mrn_range,
            last_qpn: ctx.device.last_qpn,
            last_mrn: ctx.device.last_mrn,
        },
        records,
    }
}

// ---------------------------------------------------------------------
// Byte codec
// ---------------------------------------------------------------------

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn opt_u64(&mut self, v: Option<u64>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.u64(x);
            }
            None => self.u8(0),
        }
    }
    fn opt_u32(&mut self, v: Option<u32>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.u32(x);
            }
            None => self.u8(0),
        }
    }
    fn rr(&mut self, rr: &ReceiveRequest) {
        self.u64(rr.wr_id);
        self.u32(rr.lkey);
        self.u64(rr.addr);
        self.u64(rr.maxlen);
    }
}

fn qp_state_tag(s: QpState) -> u8 {
    match s {
        QpState::Reset => 0,
        QpState::Init => 1,
        QpState::Rtr => 2,
        QpState::Rts => 3,
        QpState::Sqd => 4,
        QpState::Sqe => 5,
        QpState::Error => 6,
        QpState::Stopped => 7,
        QpState::Paused => 8,
    }
}

fn qp_state_from(v: u8) -> Result<QpState, ImageError> {
    Ok(match v {
        0 => QpState::Reset,
        1 => QpState::Init,
        2 => QpState::Rtr,
        3 => QpState::Rts,
        4 => QpState::Sqd,
        5 => QpState::Sqe,
        6 => QpState::Error,
        7 => QpState::Stopped,
        8 => QpState::Paused,
        other => return Err(ImageError::BadEnum { field: "qp state", value: other }),
    })
}

fn wr_opcode_tag(op: WrOpcode) -> u8 {
    match op {
        WrOpcode::Send => 0,
        WrOpcode::RdmaWrite => 1,
    }
}

fn wr_opcode_from(v: u8) -> Result<WrOpcode, ImageError> {
    Ok(match v {
        0 => WrOpcode::Send,
        1 => WrOpcode::RdmaWrite,
        other => return Err(ImageError::BadEnum { field: "wr opcode", value: other }),
    })
}

fn wc_status_tag(s: WcStatus) -> u8 {
    match s {
        WcStatus::Success => 0,
        WcStatus::LocLenErr => 1,
        WcStatus::RemAccessErr => 2,
        WcStatus::RetryExcErr => 3,
        WcStatus::WrFlushErr => 4,
    }
}

fn wc_status_from(v: u8) -> Result<WcStatus, ImageError> {
    Ok(match v {
        0 => WcStatus::Success,
        1 => WcStatus::LocLenErr,
        2 => WcStatus::RemAccessErr,
        3 => WcStatus::RetryExcErr,
        4 => WcStatus::WrFlushErr,
        other => return Err(ImageError::BadEnum { field: "wc status", value: other }),
    })
}

fn wc_opcode_tag(op: WcOpcode) -> u8 {
    match op {
        WcOpcode::Send => 0,
        WcOpcode::RdmaWrite => 1,
        WcOpcode::Recv => 2,
    }
}

fn wc_opcode_from(v: u8) -> Result<WcOpcode, ImageError> {
    Ok(match v {
        0 => WcOpcode::Send,
        1 => WcOpcode::RdmaWrite,
        2 => WcOpcode::Recv,
        other => return Err(ImageError::BadEnum { field: "wc opcode", value: other }),
    })
}

impl ContextImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc { buf: Vec::new() };
        e.bytes(&IMAGE_MAGIC);
        e.u16(IMAGE_VERSION);
        e.bytes(&self.header.node_gid.0);
        e.u32(self.header.qpn_range.0);
        e.u32(self.header.qpn_range.1);
        e.u32(self.header.mrn_range.0);
        e.u32(self.header.mrn_range.1);
        e.u32(self.header.last_qpn);
        e.u32(self.header.last_mrn);
        e.u32(self.records.len() as u32);
        for rec in &self.records {
            let mut body = Enc { buf: Vec::new() };
            encode_record(rec, &mut body);
            e.u8(rec.type_tag());
            e.u32(body.buf.len() as u32);
            e.bytes(&body.buf);
        }
        e.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<ContextImage, ImageError> {
        let mut d = Dec { bytes, pos: 0 };
        if d.take(4)? != IMAGE_MAGIC {
            return Err(ImageError::BadMagic);
        }
        let version = d.u16()?;
        if version != IMAGE_VERSION {
            return Err(ImageError::BadVersion(version));
        }
        let mut gid = [0u8; 16];
        gid.copy_from_slice(d.take(16)?);
        let header = ImageHeader {
            node_gid: Gid(gid),
            qpn_range: (d.u32()?, d.u32()?),
            mrn_range: (d.u32()?, d.u32()?),
            last_qpn: d.u32()?,
            last_mrn: d.u32()?,
        };
        let count = d.u32()?;
        let mut records = Vec::with_capacity(count as usize);
        let mut last_tag = 0u8;
        for _ in 0..count {
            let tag = d.u8()?;
            let len = d.u32()? as usize;
            let body = d.take(len)?;
            if tag < last_tag {
                return Err(ImageError::RecordOrder);
            }
            last_tag = tag;
            let mut bd = Dec { bytes: body, pos: 0 };
            let rec = decode_record(tag, &mut bd)?;
            if bd.pos != body.len() {
                return Err(ImageError::RecordLength(tag));
            }
            records.push(rec);
        }
        if d.pos != bytes.len() {
            return Err(ImageError::Truncated);
        }
        if records.len() != count as usize {
            return Err(ImageError::CountMismatch { header: count, found: records.len() as u32 });
        }
        Ok(ContextImage { header, records })
    }

    pub fn object_count(&self) -> u32 {
        self.records.len() as u32
    }
}

fn encode_record(rec: &ObjectRecord, e: &mut Enc) {
    match rec {
        ObjectRecord::Pd(pd) => {
            e.u32(pd.handle);
        }
        ObjectRecord::Mr(mr) => {
            e.u32(mr.mrn);
            e.u32(mr.pd);
            e.u32(mr.lkey);
            e.u32(mr.rkey);
            e.u64(mr.base);
            e.u64(mr.length);
            e.u8(mr.access);
            e.bytes(&mr.buffer);
        }
        ObjectRecord::Cq(cq) => {
            e.u32(cq.handle);
            e.u32(cq.depth);
            e.u32(cq.ring.len() as u32);
            for wc in &cq.ring {
                e.u64(wc.wr_id);
                e.u8(wc_status_tag(wc.status));
                e.u8(wc_opcode_tag(wc.opcode));
                e.u64(wc.byte_len);
            }
        }
        ObjectRecord::Srq(srq) => {
            e.u32(srq.handle);
            e.u32(srq.pd);
            e.u32(srq.depth);
            e.u32(srq.ring.len() as u32);
            for rr in &srq.ring {
                e.rr(rr);
            }
        }
        ObjectRecord::Qp(qp) => {
            e.u32(qp.qpn);
            e.u32(qp.pd);
            e.u8(qp_state_tag(qp.state));
            match qp.partner {
                Some((gid, qpn)) => {
                    e.u8(1);
                    e.bytes(&gid.0);
                    e.u32(qpn);
                }
                None => e.u8(0),
            }
            e.u32(qp.mtu);
            e.u32(qp.max_inflight);
            e.u32(qp.max_send_wr);
            e.u32(qp.max_recv_wr);
            e.u32(qp.send_cq);
            e.u32(qp.recv_cq);
            e.u64(qp.sqd_fence);
            e.u32(qp.sq.len() as u32);
            for entry in &qp.sq {
                e.u64(entry.seq);
                e.u64(entry.posted_tick);
                e.u64(entry.sr.wr_id);
                e.u8(wr_opcode_tag(entry.sr.opcode));
                e.u32(entry.sr.lkey);
                e.u64(entry.sr.addr);
                e.u64(entry.sr.len);
                match entry.sr.remote {
                    Some(r) => {
                        e.u8(1);
                        e.u32(r.rkey);
                        e.u64(r.raddr);
                    }
                    None => e.u8(0),
                }
            }
            match &qp.rq {
                RqRecord::Own(ring) => {
                    e.u8(0);
                    e.u32(ring.len() as u32);
                    for rr in ring {
                        e.rr(rr);
                    }
                }
                RqRecord::Shared(h) => {
                    e.u8(1);
                    e.u32(*h);
                }
            }
            e.u32(qp.next_psn);
            e.u32(qp.first_unacked);
            e.u64(qp.cur_sr_seq);
            e.u64(qp.cur_sr_offset);
            e.u64(qp.next_sr_seq);
            e.u8(qp.awaiting_resume_ack as u8);
            e.opt_u32(qp.resend_cursor);
            e.u32(qp.inflight.len() as u32);
            for desc in &qp.inflight {
                e.u32(desc.psn);
                e.u8(desc.opcode as u8);
                e.u8(desc.ack_req as u8);
                e.u64(desc.sr_seq);
                e.u64(desc.offset);
                e.u32(desc.len);
                e.u64(desc.last_sent);
            }
            e.u32(qp.expected_psn);
            e.u32(qp.msn);
            e.u8(qp.nak_outstanding as u8);
            match &qp.cur_rr {
                Some(rr) => {
                    e.u8(1);
                    e.rr(rr);
                }
                None => e.u8(0),
            }
            e.u64(qp.cur_rr_offset);
            match qp.cur_write {
                Some(w) => {
                    e.u8(1);
                    e.u32(w.mrn);
                    e.u64(w.addr);
                }
                None => e.u8(0),
            }
            e.u32(qp.timeout_ticks);
            e.u32(qp.max_retries);
            e.u32(qp.retries_used);
            e.u32(qp.backoff);
            e.opt_u64(qp.last_resume_tick);
        }
    }
}

struct Dec<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        if self.pos + n > self.bytes.len() {
            return Err(ImageError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ImageError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ImageError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ImageError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ImageError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn flag(&mut self) -> Result<bool, ImageError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(ImageError::BadEnum { field: "flag", value: other }),
        }
    }
    fn opt_u64(&mut self) -> Result<Option<u64>, ImageError> {
        Ok(if self.flag()? { Some(self.u64()?) } else { None })
    }
    fn opt_u32(&mut self) -> Result<Option<u32>, ImageError> {
        Ok(if self.flag()? { Some(self.u32()?) } else { None })
    }
    fn rr(&mut self) -> Result<ReceiveRequest, ImageError> {
        Ok(ReceiveRequest {
            wr_id: self.u64()?,
            lkey: self.u32()?,
            addr: self.u64()?,
            maxlen: self.u64()?,
        })
    }
}

fn decode_record(tag: u8, d: &mut Dec) -> Result<ObjectRecord, ImageError> {
    match tag {
        REC_PD => Ok(ObjectRecord::Pd(PdRecord { handle: d.u32()? })),
        REC_MR => {
            let mrn = d.u32()?;
            let pd = d.u32()?;
            let lkey = d.u32()?;
            let rkey = d.u32()?;
            let base = d.u64()?;
            let length = d.u64()?;
            let access = d.u8()?;
            let buffer = d.take(length as usize)?.to_vec();
            Ok(ObjectRecord::Mr(MrRecord { mrn, pd, lkey, rkey, base, length, access, buffer }))
        }
        REC_CQ => {
            let handle = d.u32()?;
            let depth = d.u32()?;
            let n = d.u32()?;
            let mut ring = Vec::with_capacity(n as usize);
            for _ in 0..n {
                ring.push(WorkCompletion {
                    wr_id: d.u64()?,
                    status: wc_status_from(d.u8()?)?,
                    opcode: wc_opcode_from(d.u8()?)?,
                    byte_len: d.u64()?,
                });
            }
            Ok(ObjectRecord::Cq(CqRecord { handle, depth, ring }))
        }
        REC_SRQ => {
            let handle = d.u32()?;
            let pd = d.u32()?;
            let depth = d.u32()?;
            let n = d.u32()?;
            let mut ring = Vec::with_capacity(n as usize);
            for _ in 0..n {
                ring.push(d.rr()?);
            }
            Ok(ObjectRecord::Srq(SrqRecord { handle, pd, depth, ring }))
        }
        REC_QP => {
            let qpn = d.u32()?;
            let pd = d.u32()?;
            let state = qp_state_from(d.u8()?)?;
            let partner = if d.flag()? {
                let mut gid = [0u8; 16];
                gid.copy_from_slice(d.take(16)?);
                Some((Gid(gid), d.u32()?))
            } else {
                None
            };
            let mtu = d.u32()?;
            let max_inflight = d.u32()?;
            let max_send_wr = d.u32()?;
            let max_recv_wr = d.u32()?;
            let send_cq = d.u32()?;
            let recv_cq = d.u32()?;
            let sqd_fence = d.u64()?;
            let n_sq = d.u32()?;
            let mut sq = Vec::with_capacity(n_sq as usize);
            for _ in 0..n_sq {
                let seq = d.u64()?;
                let posted_tick = d.u64()?;
                let wr_id = d.u64()?;
                let opcode = wr_opcode_from(d.u8()?)?;
                let lkey = d.u32()?;
                let addr = d.u64()?;
                let len = d.u64()?;
                let remote = if d.flag()? {
                    Some(crate::verbs::RemoteTarget { rkey: d.u32()?, raddr: d.u64()? })
                } else {
                    None
                };
                sq.push(SqEntry {
                    seq,
                    posted_tick,
                    sr: SendRequest { wr_id, opcode, lkey, addr, len, remote },
                });
            }
            let rq = if d.flag()? {
                RqRecord::Shared(d.u32()?)
            } else {
                let n = d.u32()?;
                let mut ring = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    ring.push(d.rr()?);
                }
                RqRecord::Own(ring)
            };
            let next_psn = d.u32()?;
            let first_unacked = d.u32()?;
            let cur_sr_seq = d.u64()?;
            let cur_sr_offset = d.u64()?;
            let next_sr_seq = d.u64()?;
            let awaiting_resume_ack = d.flag()?;
            let resend_cursor = d.opt_u32()?;
            let n_inflight = d.u32()?;
            let mut inflight = Vec::with_capacity(n_inflight as usize);
            for _ in 0..n_inflight {
                let psn = d.u32()?;
                let opcode = Opcode::from_u8(d.u8()?)
                    .map_err(|_| ImageError::BadEnum { field: "desc opcode", value: 0 })?;
                let ack_req = d.flag()?;
                let sr_seq = d.u64()?;
                let offset = d.u64()?;
                let len = d.u32()?;
                let last_sent = d.u64()?;
                inflight.push(PacketDesc { psn, opcode, ack_req, sr_seq, offset, len, last_sent });
            }
            let expected_psn = d.u32()?;
            let msn = d.u32()?;
            let nak_outstanding = d.flag()?;
            let cur_rr = if d.flag()? { Some(d.rr()?) } else { None };
            let cur_rr_offset = d.u64()?;
            let cur_write = if d.flag()? {
                Some(WriteTarget { mrn: d.u32()?, addr: d.u64()? })
            } else {
                None
            };
            let timeout_ticks = d.u32()?;
            let max_retries = d.u32()?;
            let retries_used = d.u32()?;
            let backoff = d.u32()?;
            let last_resume_tick = d.opt_u64()?;
            Ok(ObjectRecord::Qp(QpRecord {
                qpn,
                pd,
                state,
                partner,
                mtu,
                max_inflight,
                max_send_wr,
                max_recv_wr,
                send_cq,
                recv_cq,
                sqd_fence,
                sq,
                rq,
                next_psn,
                first_unacked,
                cur_sr_seq,
                cur_sr_offset,
                next_sr_seq,
                awaiting_resume_ack,
                resend_cursor,
                inflight,
                expected_psn,
                msn,
                nak_outstanding,
                cur_rr,
                cur_rr_offset,
                cur_write,
                timeout_ticks,
                max_retries,
                retries_used,
                backoff,
                last_resume_tick,
            }))
        }
        other => Err(ImageError::BadRecordType(other)),
    }
}

