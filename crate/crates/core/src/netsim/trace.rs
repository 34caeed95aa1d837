//! Packet trace: one record per network-visible event, in processing
//! order. The rendered form is newline-delimited
//! `tick dir node qpn opcode psn syndrome len` (see docs/trace.md) and is
//! byte-identical across runs with the same configuration and seed.

use crate::transport::packet::{Opcode, Packet, Syndrome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    /// Emitted by a QP on this node.
    Snd,
    /// Delivered to this node.
    Rcv,
    /// Dropped: by simulated loss (at the sender) or lack of a route.
    Drp,
    /// Forwarded by a node the destination QP migrated away from.
    Fwd,
}

impl Dir {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Dir::Snd => "snd",
            Dir::Rcv => "rcv",
            Dir::Drp => "drp",
            Dir::Fwd => "fwd",
        }
    }
}

/// Either an RDMA packet opcode or a migration image chunk arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Pkt(Opcode),
    Xfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub tick: u64,
    pub dir: Dir,
    /// Index into the simulator's node table; None when no node routes
    /// the destination address.
    pub node: Option<usize>,
    pub qpn: u32,
    pub op: TraceOp,
    pub psn: u32,
    pub syndrome: Option<Syndrome>,
    pub len: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push_packet(
        &mut self,
        tick: u64,
        dir: Dir,
        node: Option<usize>,
        qpn: u32,
        pkt: &Packet,
    ) {
        self.records.push(TraceRecord {
            tick,
            dir,
            node,
            qpn,
            op: TraceOp::Pkt(pkt.opcode),
            psn: pkt.psn,
            syndrome: pkt.aeth.map(|a| a.syndrome),
            len: pkt.payload.len() as u32,
        });
    }

    pub fn push_xfer(&mut self, tick: u64, dir: Dir, node: Option<usize>, index: u32, len: u32) {
        self.records.push(TraceRecord {
            tick,
            dir,
            node,
            qpn: 0,
            op: TraceOp::Xfer,
            psn: index,
            syndrome: None,
            len,
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Render the whole trace with node indices resolved to names.
    pub fn render(&self, names: &[String]) -> String {
        let mut out = String::with_capacity(self.records.len() * 32);
        for r in &self.records {
            let node = r.node.map(|i| names[i].as_str()).unwrap_or("?");
            let op = match r.op {
                TraceOp::Pkt(op) => op.mnemonic(),
                TraceOp::Xfer => "XFER",
            };
            let syn = r.syndrome.map(|s| s.mnemonic()).unwrap_or("-");
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                r.tick,
                r.dir.mnemonic(),
                node,
                r.qpn,
                op,
                r.psn,
                syn,
                r.len
            ));
        }
        out
    }
}
