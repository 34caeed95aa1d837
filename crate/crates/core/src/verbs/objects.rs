//! Verbs objects other than the queue pair: protection domains, memory
//! regions, completion queues, shared receive queues, and the work
//! request / work completion types.

use std::collections::VecDeque;

/// MR access flags, stored as a bitmask so they travel through the image
/// format unchanged.
pub mod access {
    pub const LOCAL_WRITE: u8 = 0x1;
    pub const REMOTE_WRITE: u8 = 0x2;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtectionDomain {
    pub handle: u32,
}

/// Registered buffer. `base` is a plain virtual address; the backing bytes
/// live in `buffer` and `buffer.len() == length`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRegion {
    pub mrn: u32,
    pub pd: u32,
    pub lkey: u32,
    pub rkey: u32,
    pub base: u64,
    pub length: u64,
    pub access: u8,
    pub buffer: Vec<u8>,
}

impl MemoryRegion {
    pub fn contains(&self, addr: u64, len: u64) -> bool {
        addr >= self.base
            && len <= self.length
            && addr - self.base <= self.length - len
    }

    pub fn slice(&self, addr: u64, len: u64) -> &[u8] {
        let off = (addr - self.base) as usize;
        &self.buffer[off..off + len as usize]
    }

    pub fn slice_mut(&mut self, addr: u64, len: u64) -> &mut [u8] {
        let off = (addr - self.base) as usize;
        &mut self.buffer[off..off + len as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WrOpcode {
    Send,
    RdmaWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemoteTarget {
    pub rkey: u32,
    pub raddr: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendRequest {
    pub wr_id: u64,
    pub opcode: WrOpcode,
    pub lkey: u32,
    pub addr: u64,
    pub len: u64,
    /// Present on RDMA_WRITE requests only.
    pub remote: Option<RemoteTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceiveRequest {
    pub wr_id: u64,
    pub lkey: u32,
    pub addr: u64,
    pub maxlen: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WcStatus {
    Success,
    LocLenErr,
    RemAccessErr,
    RetryExcErr,
    WrFlushErr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WcOpcode {
    Send,
    RdmaWrite,
    Recv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkCompletion {
    pub wr_id: u64,
    pub status: WcStatus,
    pub byte_len: u64,
    pub opcode: WcOpcode,
}

/// Completion ring. Completions are polled in insertion order; occupancy
/// never exceeds `depth` (a push onto a full ring is dropped and counted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionQueue {
    pub handle: u32,
    pub depth: u32,
    pub ring: VecDeque<WorkCompletion>,
    pub dropped: u64,
}

impl CompletionQueue {
    pub fn new(handle: u32, depth: u32) -> Self {
        CompletionQueue { handle, depth, ring: VecDeque::new(), dropped: 0 }
    }

    pub fn push(&mut self, wc: WorkCompletion) {
        if self.ring.len() as u32 >= self.depth {
            self.dropped += 1;
            return;
        }
        self.ring.push_back(wc);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedReceiveQueue {
    pub handle: u32,
    pub pd: u32,
    pub depth: u32,
    pub ring: VecDeque<ReceiveRequest>,
}

impl SharedReceiveQueue {
    pub fn new(handle: u32, pd: u32, depth: u32) -> Self {
        SharedReceiveQueue { handle, pd, depth, ring: VecDeque::new() }
    }
}
