//! Scenario file schema and validation.
//!
//! Scenarios are TOML; the schema (keys, types, defaults) is normative
//! and documented in docs/scenario.md. Validation failures carry the
//! offending key path so the CLI can print line-anchored diagnostics.

use migrsim_core::netsim::NetConfig;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_true")]
    pub migration_enabled: bool,
    pub net: Net,
    pub nodes: Vec<NodeDef>,
    pub contexts: Vec<ContextDef>,
    #[serde(default)]
    pub traffic: Vec<TrafficDef>,
    #[serde(default)]
    pub migrations: Vec<MigrationDef>,
    #[serde(default)]
    pub assertions: Assertions,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Net {
    pub latency_ticks: u32,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub dup_rate: f64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
}

fn default_max_ticks() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDef {
    pub name: String,
    pub gid_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextDef {
    pub node: String,
    #[serde(default = "default_one")]
    pub pds: u32,
    pub qpn_range: Option<[u32; 2]>,
    pub mrn_range: Option<[u32; 2]>,
    #[serde(default)]
    pub mrs: Vec<MrDef>,
    #[serde(default)]
    pub cqs: Vec<CqDef>,
    #[serde(default)]
    pub srqs: Vec<SrqDef>,
    #[serde(default)]
    pub qps: Vec<QpDef>,
}

fn default_one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrDef {
    pub size: u64,
    #[serde(default)]
    pub access: MrAccess,
    #[serde(default)]
    pub pd: u32,
}

#[derive(Debug, Clone, Copy, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MrAccess {
    Local,
    #[default]
    RemoteWrite,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqDef {
    pub depth: u32,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrqDef {
    pub depth: u32,
    #[serde(default)]
    pub pd: u32,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpDef {
    pub partner: QpRef,
    #[serde(default)]
    pub pd: u32,
    pub send_cq: u32,
    pub recv_cq: u32,
    pub srq: Option<u32>,
    #[serde(default = "default_mtu")]
    pub mtu: u32,
    #[serde(default = "default_timeout")]
    pub timeout_ticks: u32,
    /// Omit for an infinite retry budget.
    pub max_retries: Option<u32>,
    #[serde(default = "default_window")]
    pub max_inflight: u32,
    #[serde(default)]
    pub psn_seed: u32,
    #[serde(default = "default_queue_depth")]
    pub max_send_wr: u32,
    #[serde(default = "default_queue_depth")]
    pub max_recv_wr: u32,
}

fn default_mtu() -> u32 {
    1024
}

fn default_timeout() -> u32 {
    32
}

fn default_window() -> u32 {
    64
}

fn default_queue_depth() -> u32 {
    1 << 14
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpRef {
    pub ctx: u32,
    pub qp: u32,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficDef {
    pub ctx: u32,
    pub qp: u32,
    pub count: u64,
    pub msg_size: MsgSize,
    #[serde(default = "default_interval")]
    pub interval_ticks: u64,
    #[serde(default)]
    pub opcode: TrafficOpcode,
    #[serde(default)]
    pub start_tick: u64,
    #[serde(default = "default_slots")]
    pub slots: u64,
    /// Writes target this MR index on the partner context.
    #[serde(default)]
    pub target_mr: u32,
    /// Payloads are staged in / delivered into this local MR index.
    #[serde(default)]
    pub local_mr: u32,
}

fn default_interval() -> u64 {
    1
}

fn default_slots() -> u64 {
    64
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum MsgSize {
    Fixed(u64),
    Range([u64; 2]),
}

impl MsgSize {
    pub fn bounds(&self) -> (u64, u64) {
        match *self {
            MsgSize::Fixed(n) => (n, n),
            MsgSize::Range([lo, hi]) => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TrafficOpcode {
    #[default]
    Send,
    Write,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationDef {
    pub ctx: u32,
    pub dst: String,
    pub trigger_tick: u64,
    #[serde(default)]
    pub transfer: TransferDef,
}

#[derive(Debug, Clone, Copy, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TransferDef {
    #[default]
    InBand,
    OutOfBand,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Assertions {
    pub deliver_all: bool,
    pub pause_safety: bool,
    pub stop_silence: bool,
    pub no_rem_access_after_restore: bool,
    pub converged: bool,
    pub wc_conservation: bool,
}

impl Default for Assertions {
    fn default() -> Self {
        Assertions {
            deliver_all: false,
            pause_safety: true,
            stop_silence: true,
            no_rem_access_after_restore: false,
            converged: false,
            wc_conservation: false,
        }
    }
}

#[derive(Debug)]
pub struct ScenarioError {
    pub message: String,
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ScenarioError {}

fn err(msg: String) -> ScenarioError {
    ScenarioError { message: msg }
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("{}: {e}", path.display())))?;
        Scenario::from_str_named(&text, &path.display().to_string())
    }

    /// Parse and validate. TOML errors come back with line/column info.
    pub fn from_str_named(text: &str, name: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| err(format!("{name}: {e}")))?;
        sc.validate().map_err(|e| err(format!("{name}: {}", e.message)))?;
        Ok(sc)
    }

    pub fn to_net_config(&self) -> NetConfig {
        NetConfig {
            seed: self.seed,
            latency_ticks: self.net.latency_ticks,
            loss_rate: self.net.loss_rate,
            dup_rate: self.net.dup_rate,
            max_ticks: self.net.max_ticks,
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.net.latency_ticks < 1 {
            return Err(err("net.latency_ticks: must be >= 1".into()));
        }
        for (key, rate) in [("loss_rate", self.net.loss_rate), ("dup_rate", self.net.dup_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(err(format!("net.{key}: must be in [0, 1)")));
            }
        }
        if self.nodes.is_empty() {
            return Err(err("nodes: at least one node required".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|m| m.name == n.name) {
                return Err(err(format!("nodes[{i}].name: duplicate node name {:?}", n.name)));
            }
            if self.nodes[..i].iter().any(|m| m.gid_seed == n.gid_seed) {
                return Err(err(format!("nodes[{i}].gid_seed: duplicate gid seed")));
            }
        }
        for (ci, ctx) in self.contexts.iter().enumerate() {
            if self.node_index(&ctx.node).is_none() {
                return Err(err(format!(
                    "contexts[{ci}].node: unknown node {:?}",
                    ctx.node
                )));
            }
            if ctx.pds == 0 {
                return Err(err(format!("contexts[{ci}].pds: must be >= 1")));
            }
            if let Some([lo, hi]) = ctx.qpn_range {
                if lo >= hi || hi > 0x100_0000 {
                    return Err(err(format!(
                        "contexts[{ci}].qpn_range: must satisfy lo < hi <= 2^24"
                    )));
                }
            }
            if let Some([lo, hi]) = ctx.mrn_range {
                if lo >= hi {
                    return Err(err(format!("contexts[{ci}].mrn_range: must satisfy lo < hi")));
                }
            }
            for (mi, mr) in ctx.mrs.iter().enumerate() {
                if mr.size == 0 {
                    return Err(err(format!("contexts[{ci}].mrs[{mi}].size: must be > 0")));
                }
                if mr.pd >= ctx.pds {
                    return Err(err(format!("contexts[{ci}].mrs[{mi}].pd: out of range")));
                }
            }
            for (qi, qp) in ctx.qps.iter().enumerate() {
                let key = format!("contexts[{ci}].qps[{qi}]");
                if qp.pd >= ctx.pds {
                    return Err(err(format!("{key}.pd: out of range")));
                }
                for (name, cq) in [("send_cq", qp.send_cq), ("recv_cq", qp.recv_cq)] {
                    if cq as usize >= ctx.cqs.len() {
                        return Err(err(format!("{key}.{name}: cq index {cq} out of range")));
                    }
                }
                if let Some(srq) = qp.srq {
                    if srq as usize >= ctx.srqs.len() {
                        return Err(err(format!("{key}.srq: srq index {srq} out of range")));
                    }
                }
                if qp.mtu == 0 {
                    return Err(err(format!("{key}.mtu: must be > 0")));
                }
                let p = qp.partner;
                let Some(pctx) = self.contexts.get(p.ctx as usize) else {
                    return Err(err(format!("{key}.partner: unknown ctx {}", p.ctx)));
                };
                let Some(pqp) = pctx.qps.get(p.qp as usize) else {
                    return Err(err(format!(
                        "{key}.partner: ctx {} has no qp {}",
                        p.ctx, p.qp
                    )));
                };
                // QP pairs are mutual.
                if (pqp.partner.ctx, pqp.partner.qp) != (ci as u32, qi as u32) {
                    return Err(err(format!(
                        "{key}.partner: pairing is not mutual (ctx {} qp {} points elsewhere)",
                        p.ctx, p.qp
                    )));
                }
            }
        }
        for (ti, t) in self.traffic.iter().enumerate() {
            let key = format!("traffic[{ti}]");
            let Some(ctx) = self.contexts.get(t.ctx as usize) else {
                return Err(err(format!("{key}.ctx: unknown ctx {}", t.ctx)));
            };
            let Some(qp) = ctx.qps.get(t.qp as usize) else {
                return Err(err(format!("{key}.qp: ctx {} has no qp {}", t.ctx, t.qp)));
            };
            let (lo, hi) = t.msg_size.bounds();
            if lo == 0 || lo > hi {
                return Err(err(format!("{key}.msg_size: need 0 < lo <= hi")));
            }
            if t.slots == 0 {
                return Err(err(format!("{key}.slots: must be > 0")));
            }
            if t.count == 0 {
                return Err(err(format!("{key}.count: must be > 0")));
            }
            if ctx.mrs.get(t.local_mr as usize).is_none() {
                return Err(err(format!("{key}.local_mr: mr index out of range")));
            }
            let pctx = &self.contexts[qp.partner.ctx as usize];
            if t.opcode == TrafficOpcode::Write {
                let Some(tmr) = pctx.mrs.get(t.target_mr as usize) else {
                    return Err(err(format!("{key}.target_mr: partner mr out of range")));
                };
                if tmr.access != MrAccess::RemoteWrite {
                    return Err(err(format!(
                        "{key}.target_mr: partner mr lacks remote_write access"
                    )));
                }
                if t.slots * hi > tmr.size {
                    return Err(err(format!(
                        "{key}: write window {}x{hi} exceeds target mr size {}",
                        t.slots, tmr.size
                    )));
                }
            } else {
                let Some(rmr) = pctx.mrs.get(t.local_mr as usize) else {
                    return Err(err(format!(
                        "{key}.local_mr: partner has no mr {} for receive slots",
                        t.local_mr
                    )));
                };
                // Receive slots occupy the upper half of the partner MR.
                if rmr.size / 2 < 2 * t.slots * hi {
                    return Err(err(format!(
                        "{key}: receive window 2x{}x{hi} exceeds half of partner mr size {}",
                        t.slots, rmr.size
                    )));
                }
            }
            if t.slots * hi > ctx.mrs[t.local_mr as usize].size / 2 {
                return Err(err(format!(
                    "{key}: send window {}x{hi} exceeds half of mr size {}",
                    t.slots,
                    ctx.mrs[t.local_mr as usize].size
                )));
            }
        }
        for (mi, m) in self.migrations.iter().enumerate() {
            let key = format!("migrations[{mi}]");
            let Some(ctx) = self.contexts.get(m.ctx as usize) else {
                return Err(err(format!("{key}.ctx: unknown ctx {}", m.ctx)));
            };
            if self.node_index(&m.dst).is_none() {
                return Err(err(format!("{key}.dst: unknown node {:?}", m.dst)));
            }
            if m.dst == ctx.node {
                return Err(err(format!("{key}.dst: must differ from the source node")));
            }
            if m.trigger_tick > self.net.max_ticks {
                return Err(err(format!("{key}.trigger_tick: beyond net.max_ticks")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[net]
latency_ticks = 2

[[nodes]]
name = "n0"
gid_seed = 1

[[nodes]]
name = "n1"
gid_seed = 2

[[contexts]]
node = "n0"
[[contexts.cqs]]
depth = 64
[[contexts.cqs]]
depth = 64
[[contexts.mrs]]
size = 1048576
[[contexts.qps]]
partner = { ctx = 1, qp = 0 }
send_cq = 0
recv_cq = 1

[[contexts]]
node = "n1"
[[contexts.cqs]]
depth = 64
[[contexts.cqs]]
depth = 64
[[contexts.mrs]]
size = 1048576
[[contexts.qps]]
partner = { ctx = 0, qp = 0 }
send_cq = 0
recv_cq = 1
"#;

    #[test]
    fn minimal_scenario_parses() {
        let sc = Scenario::from_str_named(MINIMAL, "inline").unwrap();
        assert_eq!(sc.nodes.len(), 2);
        assert!(sc.migration_enabled);
    }

    #[test]
    fn dangling_partner_names_the_key() {
        let broken = MINIMAL.replace("partner = { ctx = 1, qp = 0 }", "partner = { ctx = 9, qp = 0 }");
        let e = Scenario::from_str_named(&broken, "inline").unwrap_err();
        assert!(e.message.contains("contexts[0].qps[0].partner"), "{}", e.message);
    }

    #[test]
    fn non_mutual_pairing_is_rejected() {
        let broken = MINIMAL.replace(
            "partner = { ctx = 0, qp = 0 }",
            "partner = { ctx = 1, qp = 0 }",
        );
        let e = Scenario::from_str_named(&broken, "inline").unwrap_err();
        assert!(e.message.contains("mutual"), "{}", e.message);
    }

    #[test]
    fn msg_size_accepts_fixed_and_range() {
        let fixed: MsgSize = toml::from_str::<toml::Value>("v = 2048")
            .unwrap()
            .get("v")
            .unwrap()
            .clone()
            .try_into()
            .unwrap();
        assert_eq!(fixed.bounds(), (2048, 2048));
        let range: MsgSize = toml::from_str::<toml::Value>("v = [1024, 4096]")
            .unwrap()
            .get("v")
            .unwrap()
            .clone()
            .try_into()
            .unwrap();
        assert_eq!(range.bounds(), (1024, 4096));
    }

    #[test]
    fn toml_errors_carry_position() {
        let e = Scenario::from_str_named("seed = \n", "inline").unwrap_err();
        assert!(e.message.contains("line"), "{}", e.message);
    }
}
