//! Packet wire format and 24-bit PSN arithmetic.
//!
//! All header fields are big-endian. The fixed header is 14 bytes:
//!
//! ```text
//! version u8 | opcode u8 | flags u8 | reserved u8
//! dest_qpn u32 (24-bit used) | psn u32 (24-bit used) | payload_len u16
//! ```
//!
//! followed by the extension implied by the opcode (RETH on
//! WRITE_FIRST/WRITE_ONLY, AETH on ACK, the resume payload on RESUME) and
//! then `payload_len` payload bytes. See docs/wire.md for the frozen
//! layout and worked examples.

use crate::addr::Gid;
use crate::error::WireError;

pub const WIRE_VERSION: u8 = 0x01;
pub const FLAG_ACK_REQ: u8 = 0x01;

pub const PSN_MASK: u32 = 0x00FF_FFFF;
const PSN_HALF: u32 = 1 << 23;

/// (a - b) mod 2^24.
pub fn psn_sub(a: u32, b: u32) -> u32 {
    a.wrapping_sub(b) & PSN_MASK
}

pub fn psn_add(a: u32, n: u32) -> u32 {
    a.wrapping_add(n) & PSN_MASK
}

pub fn psn_next(a: u32) -> u32 {
    psn_add(a, 1)
}

pub fn psn_prev(a: u32) -> u32 {
    a.wrapping_sub(1) & PSN_MASK
}

/// a >= b under a 2^23 modular half-window.
pub fn psn_ge(a: u32, b: u32) -> bool {
    psn_sub(a, b) < PSN_HALF
}

pub fn psn_gt(a: u32, b: u32) -> bool {
    a != b && psn_ge(a, b)
}

pub fn psn_lt(a: u32, b: u32) -> bool {
    !psn_ge(a, b)
}

pub fn psn_le(a: u32, b: u32) -> bool {
    a == b || psn_lt(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    SendFirst = 0x00,
    SendMiddle = 0x01,
    SendLast = 0x02,
    SendOnly = 0x03,
    WriteFirst = 0x06,
    WriteMiddle = 0x07,
    WriteLast = 0x08,
    WriteOnly = 0x0A,
    Ack = 0x11,
    Resume = 0x14,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x00 => Opcode::SendFirst,
            0x01 => Opcode::SendMiddle,
            0x02 => Opcode::SendLast,
            0x03 => Opcode::SendOnly,
            0x06 => Opcode::WriteFirst,
            0x07 => Opcode::WriteMiddle,
            0x08 => Opcode::WriteLast,
            0x0A => Opcode::WriteOnly,
            0x11 => Opcode::Ack,
            0x14 => Opcode::Resume,
            other => return Err(WireError::BadOpcode(other)),
        })
    }

    pub fn is_send(self) -> bool {
        matches!(
            self,
            Opcode::SendFirst | Opcode::SendMiddle | Opcode::SendLast | Opcode::SendOnly
        )
    }

    pub fn is_write(self) -> bool {
        matches!(
            self,
            Opcode::WriteFirst | Opcode::WriteMiddle | Opcode::WriteLast | Opcode::WriteOnly
        )
    }

    pub fn is_data(self) -> bool {
        self.is_send() || self.is_write()
    }

    pub fn is_first(self) -> bool {
        matches!(self, Opcode::SendFirst | Opcode::WriteFirst)
    }

    pub fn is_only(self) -> bool {
        matches!(self, Opcode::SendOnly | Opcode::WriteOnly)
    }

    pub fn is_last(self) -> bool {
        matches!(self, Opcode::SendLast | Opcode::WriteLast)
    }

    /// Ends a message: LAST or ONLY.
    pub fn completes_message(self) -> bool {
        self.is_last() || self.is_only()
    }

    /// Carries a RETH extension.
    pub fn has_reth(self) -> bool {
        matches!(self, Opcode::WriteFirst | Opcode::WriteOnly)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::SendFirst => "SEND_FIRST",
            Opcode::SendMiddle => "SEND_MIDDLE",
            Opcode::SendLast => "SEND_LAST",
            Opcode::SendOnly => "SEND_ONLY",
            Opcode::WriteFirst => "WRITE_FIRST",
            Opcode::WriteMiddle => "WRITE_MIDDLE",
            Opcode::WriteLast => "WRITE_LAST",
            Opcode::WriteOnly => "WRITE_ONLY",
            Opcode::Ack => "ACK",
            Opcode::Resume => "RESUME",
        }
    }

    /// Opcode for segment position within a message.
    pub fn for_segment(write: bool, first: bool, last: bool) -> Opcode {
        match (write, first, last) {
            (false, true, true) => Opcode::SendOnly,
            (false, true, false) => Opcode::SendFirst,
            (false, false, false) => Opcode::SendMiddle,
            (false, false, true) => Opcode::SendLast,
            (true, true, true) => Opcode::WriteOnly,
            (true, true, false) => Opcode::WriteFirst,
            (true, false, false) => Opcode::WriteMiddle,
            (true, false, true) => Opcode::WriteLast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Syndrome {
    AckOk = 0x00,
    NakPsnSeq = 0x60,
    NakRemAccess = 0x61,
    NakRemOp = 0x62,
    NakStopped = 0x6F,
}

impl Syndrome {
    pub fn from_u8(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x00 => Syndrome::AckOk,
            0x60 => Syndrome::NakPsnSeq,
            0x61 => Syndrome::NakRemAccess,
            0x62 => Syndrome::NakRemOp,
            0x6F => Syndrome::NakStopped,
            other => return Err(WireError::BadSyndrome(other)),
        })
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Syndrome::AckOk => "ACK_OK",
            Syndrome::NakPsnSeq => "NAK_PSN_SEQ",
            Syndrome::NakRemAccess => "NAK_REM_ACCESS",
            Syndrome::NakRemOp => "NAK_REM_OP",
            Syndrome::NakStopped => "NAK_STOPPED",
        }
    }
}

/// RDMA extended transport header, on WRITE_FIRST / WRITE_ONLY.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reth {
    pub raddr: u64,
    pub rkey: u32,
    pub dma_len: u32,
}

/// Ack extended transport header, on ACK. `msn` uses 24 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aeth {
    pub syndrome: Syndrome,
    pub msn: u32,
}

/// Resume payload: new address of the migrated endpoint plus the PSN of
/// its first unacknowledged packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResumeInfo {
    pub src_gid: Gid,
    pub src_qpn: u32,
    pub first_unacked_psn: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub opcode: Opcode,
    pub flags: u8,
    pub dest_qpn: u32,
    pub psn: u32,
    pub reth: Option<Reth>,
    pub aeth: Option<Aeth>,
    pub resume: Option<ResumeInfo>,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn data(
        opcode: Opcode,
        dest_qpn: u32,
        psn: u32,
        ack_req: bool,
        reth: Option<Reth>,
        payload: Vec<u8>,
    ) -> Packet {
        debug_assert_eq!(opcode.has_reth(), reth.is_some());
        Packet {
            opcode,
            flags: if ack_req { FLAG_ACK_REQ } else { 0 },
            dest_qpn,
            psn,
            reth,
            aeth: None,
            resume: None,
            payload,
        }
    }

    pub fn ack(dest_qpn: u32, psn: u32, syndrome: Syndrome, msn: u32) -> Packet {
        Packet {
            opcode: Opcode::Ack,
            flags: 0,
            dest_qpn,
            psn,
            reth: None,
            aeth: Some(Aeth { syndrome, msn: msn & PSN_MASK }),
            resume: None,
            payload: Vec::new(),
        }
    }

    pub fn resume(dest_qpn: u32, info: ResumeInfo) -> Packet {
        Packet {
            opcode: Opcode::Resume,
            flags: 0,
            dest_qpn,
            psn: info.first_unacked_psn,
            reth: None,
            aeth: None,
            resume: Some(info),
            payload: Vec::new(),
        }
    }

    pub fn ack_requested(&self) -> bool {
        self.flags & FLAG_ACK_REQ != 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 24 + self.payload.len());
        out.push(WIRE_VERSION);
        out.push(self.opcode as u8);
        out.push(self.flags);
        out.push(0); // reserved
        out.extend_from_slice(&(self.dest_qpn & PSN_MASK).to_be_bytes());
        out.extend_from_slice(&(self.psn & PSN_MASK).to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        if let Some(reth) = &self.reth {
            out.extend_from_slice(&reth.raddr.to_be_bytes());
            out.extend_from_slice(&reth.rkey.to_be_bytes());
            out.extend_from_slice(&reth.dma_len.to_be_bytes());
        }
        if let Some(aeth) = &self.aeth {
            out.push(aeth.syndrome as u8);
            out.extend_from_slice(&(aeth.msn & PSN_MASK).to_be_bytes());
        }
        if let Some(resume) = &self.resume {
            out.extend_from_slice(&resume.src_gid.0);
            out.extend_from_slice(&(resume.src_qpn & PSN_MASK).to_be_bytes());
            out.extend_from_slice(&(resume.first_unacked_psn & PSN_MASK).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let version = cur.u8()?;
        if version != WIRE_VERSION {
            return Err(WireError::BadVersion(version));
        }
        let opcode = Opcode::from_u8(cur.u8()?)?;
        let flags = cur.u8()?;
        let _reserved = cur.u8()?;
        let dest_qpn = cur.u32()?;
        let psn = cur.u32()?;
        if dest_qpn > PSN_MASK {
            return Err(WireError::FieldOverflow("dest_qpn"));
        }
        if psn > PSN_MASK {
            return Err(WireError::FieldOverflow("psn"));
        }
        let payload_len = cur.u16()? as usize;
        let reth = if opcode.has_reth() {
            Some(Reth { raddr: cur.u64()?, rkey: cur.u32()?, dma_len: cur.u32()? })
        } else {
            None
        };
        let aeth = if opcode == Opcode::Ack {
            let syndrome = Syndrome::from_u8(cur.u8()?)?;
            let msn = cur.u32()?;
            if msn > PSN_MASK {
                return Err(WireError::FieldOverflow("msn"));
            }
            Some(Aeth { syndrome, msn })
        } else {
            None
        };
        let resume = if opcode == Opcode::Resume {
            let mut gid = [0u8; 16];
            gid.copy_from_slice(cur.take(16)?);
            let src_qpn = cur.u32()?;
            let first = cur.u32()?;
            if src_qpn > PSN_MASK {
                return Err(WireError::FieldOverflow("src_qpn"));
            }
            if first > PSN_MASK {
                return Err(WireError::FieldOverflow("first_unacked_psn"));
            }
            Some(ResumeInfo { src_gid: Gid(gid), src_qpn, first_unacked_psn: first })
        } else {
            None
        };
        let payload = cur.take(payload_len)?.to_vec();
        if cur.pos != bytes.len() {
            return Err(WireError::TrailingBytes);
        }
        Ok(Packet { opcode, flags, dest_qpn, psn, reth, aeth, resume, payload })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}
