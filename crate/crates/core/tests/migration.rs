//! End-to-end live migration through the event scheduler: the full
//! stop/dump -> transfer -> restore/refill -> resume flow, including the
//! partner's pause window, teardown failure semantics and simultaneous
//! migration of both endpoints.

mod common;

use common::*;
use migrsim_core::migrator::{teardown, MigrationSpec, TransferMode, CHUNK_BYTES};
use migrsim_core::netsim::{trace::Dir, trace::TraceOp, NetConfig, RunOutcome, Simulator};
use migrsim_core::transport::packet::Syndrome;
use migrsim_core::verbs::{QpState, WcStatus};

struct StreamDriver {
    seed: u64,
    count: u64,
    slot: u64,
}

/// Receive slots live in the upper half of each MR so that inbound data
/// never overwrites send buffers that a retransmission may still read.
const RECV_REGION: u64 = 0x80000;

impl StreamDriver {
    /// Post all receive slots and sends up front; the window and the SQ
    /// pace the stream. Returns per-message lengths.
    fn start(&self, pair: &mut Pair) -> (Vec<usize>, Vec<usize>) {
        let lens_a: Vec<usize> =
            (0..self.count).map(|i| 1 + ((self.seed + 3 * i) % 2048) as usize).collect();
        let lens_b: Vec<usize> =
            (0..self.count).map(|i| 1 + ((self.seed + 5 * i) % 1024) as usize).collect();
        for i in 0..self.count {
            post_recv_slot(&mut pair.sim, &pair.b, i, RECV_REGION + i * self.slot, self.slot);
            post_recv_slot(&mut pair.sim, &pair.a, i, RECV_REGION + i * self.slot, self.slot);
        }
        for i in 0..self.count {
            post_send_msg(&mut pair.sim, &pair.a, i, i * self.slot, &msg_bytes(self.seed, i, lens_a[i as usize]));
            post_send_msg(&mut pair.sim, &pair.b, i, i * self.slot, &msg_bytes(self.seed ^ 9, i, lens_b[i as usize]));
        }
        (lens_a, lens_b)
    }

    fn verify(&self, pair: &mut Pair, lens_a: &[usize], lens_b: &[usize], a_ep: &Endpoint) {
        let recv_b = drain_cq(&mut pair.sim, pair.b.ctx_id, pair.b.recv_cq);
        assert_eq!(recv_b.len() as u64, self.count);
        assert_all_success(&recv_b);
        assert_eq!(
            recv_b.iter().map(|w| w.wr_id).collect::<Vec<_>>(),
            (0..self.count).collect::<Vec<_>>()
        );
        let recv_a = drain_cq(&mut pair.sim, a_ep.ctx_id, a_ep.recv_cq);
        assert_eq!(recv_a.len() as u64, self.count);
        assert_all_success(&recv_a);
        for i in 0..self.count {
            assert_eq!(
                mr_slice(&pair.sim, &pair.b, RECV_REGION + i * self.slot, lens_a[i as usize] as u64),
                msg_bytes(self.seed, i, lens_a[i as usize]),
                "a->b message {i}"
            );
            assert_eq!(
                mr_slice(&pair.sim, a_ep, RECV_REGION + i * self.slot, lens_b[i as usize] as u64),
                msg_bytes(self.seed ^ 9, i, lens_b[i as usize]),
                "b->a message {i}"
            );
        }
    }
}

fn migration_pair(seed: u64, loss: f64) -> (Pair, usize) {
    let cfg = PairConfig {
        net: NetConfig {
            seed,
            latency_ticks: 2,
            loss_rate: loss,
            dup_rate: 0.0,
            max_ticks: 5_000_000,
        },
        ..Default::default()
    };
    let mut pair = build_pair(cfg);
    let n2 = pair.sim.attach_node("n2", 3).unwrap();
    (pair, n2)
}

#[test]
fn migration_mid_stream_is_transparent_to_delivery() {
    for seed in 0..5 {
        let (mut pair, n2) = migration_pair(seed, 0.05);
        let driver = StreamDriver { seed, count: 120, slot: 4096 };
        let (lens_a, lens_b) = driver.start(&mut pair);
        let dst = pair.sim.nodes[n2].addr.gid;
        pair.sim
            .schedule_migration(MigrationSpec {
                ctx_id: pair.a.ctx_id,
                src: pair.a.gid,
                dst,
                trigger_tick: 90,
                transfer: TransferMode::InBand,
            })
            .unwrap();
        let outcome = pair.sim.run(5_000_000, |_| false);
        assert_eq!(outcome, RunOutcome::Quiesced, "seed {seed}");
        let report = &pair.sim.report(outcome).migrations[0];
        assert!(report.success, "seed {seed}: {:?}", report.error);
        // The migrated endpoint now lives on n2.
        let mut a_ep = pair.a;
        a_ep.node = n2;
        assert_eq!(pair.sim.locate_ctx(pair.a.ctx_id).unwrap().0, n2);
        driver.verify(&mut pair, &lens_a, &lens_b, &a_ep);
        // The protocol ran: stop, nak, resume, ack.
        let trace = pair.sim.render_trace();
        assert!(trace.contains("NAK_STOPPED"), "seed {seed}");
        assert!(trace.contains("RESUME"), "seed {seed}");
        // After the migration no remote-access faults may appear.
        assert!(!trace.contains("NAK_REM_ACCESS"), "seed {seed}");
    }
}

#[test]
fn paused_partner_emits_no_data_until_resume() {
    let (mut pair, n2) = migration_pair(1, 0.0);
    let driver = StreamDriver { seed: 1, count: 120, slot: 4096 };
    driver.start(&mut pair);
    let dst = pair.sim.nodes[n2].addr.gid;
    pair.sim
        .schedule_migration(MigrationSpec {
            ctx_id: pair.a.ctx_id,
            src: pair.a.gid,
            dst,
            trigger_tick: 90,
            transfer: TransferMode::InBand,
        })
        .unwrap();
    pair.sim.run(5_000_000, |_| false);

    // Pause window on the partner (node n1, qp b): from entering Paused
    // until back to Rts.
    let b_qpn = pair.b.qpn;
    let paused_at = pair
        .sim
        .timeline
        .iter()
        .find(|t| t.qpn == b_qpn && t.to == QpState::Paused)
        .expect("partner must pause")
        .tick;
    let resumed_at = pair
        .sim
        .timeline
        .iter()
        .find(|t| t.qpn == b_qpn && t.from == QpState::Paused && t.to == QpState::Rts)
        .expect("partner must resume")
        .tick;
    assert!(paused_at < resumed_at);
    // The paused QP emits no data packets inside the window.
    for r in pair.sim.trace.records() {
        if r.dir == Dir::Snd
            && r.node == Some(pair.b.node)
            && r.qpn == b_qpn
            && r.tick >= paused_at
            && r.tick < resumed_at
        {
            if let TraceOp::Pkt(op) = r.op {
                assert!(!op.is_data(), "paused QP sent data {op:?} at tick {}", r.tick);
            }
        }
    }

    // Stopped window on the migrant: its only emissions are NAK_STOPPED.
    let a_qpn = pair.a.qpn;
    let stopped_at = pair
        .sim
        .timeline
        .iter()
        .find(|t| t.qpn == a_qpn && t.to == QpState::Stopped)
        .unwrap()
        .tick;
    let report = pair.sim.report(RunOutcome::Quiesced).migrations[0].clone();
    // Scope to the source node: the restored instance on n2 reuses the
    // same QPN and is allowed to speak.
    for r in pair.sim.trace.records() {
        if r.dir == Dir::Snd
            && r.node == Some(pair.a.node)
            && r.qpn == a_qpn
            && r.tick >= stopped_at
            && r.tick <= report.completed_tick
        {
            assert_eq!(
                r.syndrome,
                Some(Syndrome::NakStopped),
                "stopped QP emitted {:?} at {}",
                r.op,
                r.tick
            );
        }
    }
}

#[test]
fn in_band_transfer_cost_matches_trace() {
    let (mut pair, n2) = migration_pair(2, 0.0);
    let dst = pair.sim.nodes[n2].addr.gid;
    pair.sim
        .schedule_migration(MigrationSpec {
            ctx_id: pair.a.ctx_id,
            src: pair.a.gid,
            dst,
            trigger_tick: 10,
            transfer: TransferMode::InBand,
        })
        .unwrap();
    let outcome = pair.sim.run(5_000_000, |_| false);
    let report = pair.sim.report(outcome).migrations[0].clone();
    assert!(report.success);
    let latency = pair.sim.cfg.latency_ticks as u64;
    let expected_chunks = report.image_bytes.div_ceil(CHUNK_BYTES);
    assert_eq!(report.transfer_ticks, expected_chunks * latency);
    // Independent recomputation from the rendered trace text.
    let trace = pair.sim.render_trace();
    let xfer_ticks: Vec<u64> = trace
        .lines()
        .filter(|l| l.contains(" XFER "))
        .map(|l| l.split(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(xfer_ticks.len() as u64, expected_chunks);
    let first = *xfer_ticks.first().unwrap();
    let last = *xfer_ticks.last().unwrap();
    assert_eq!(first, report.trigger_tick + latency);
    assert_eq!(last - report.trigger_tick, report.transfer_ticks);
    let total_bytes: u64 = trace
        .lines()
        .filter(|l| l.contains(" XFER "))
        .map(|l| l.rsplit(' ').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total_bytes, report.image_bytes);
    // Phases are contiguous and non-overlapping.
    assert_eq!(
        report.completed_tick,
        report.trigger_tick + report.transfer_ticks + report.restore_ticks
    );
}

#[test]
fn out_of_band_transfer_is_instant() {
    let (mut pair, n2) = migration_pair(3, 0.0);
    let dst = pair.sim.nodes[n2].addr.gid;
    pair.sim
        .schedule_migration(MigrationSpec {
            ctx_id: pair.a.ctx_id,
            src: pair.a.gid,
            dst,
            trigger_tick: 10,
            transfer: TransferMode::OutOfBand,
        })
        .unwrap();
    let outcome = pair.sim.run(100_000, |_| false);
    let report = pair.sim.report(outcome).migrations[0].clone();
    assert!(report.success);
    assert_eq!(report.transfer_ticks, 0);
    assert_eq!(report.completed_tick, 11);
}

#[test]
fn migrating_a_context_without_qps_sends_no_resume() {
    let mut sim = Simulator::new(NetConfig::default()).unwrap();
    let n0 = sim.attach_node("n0", 1).unwrap();
    let n1 = sim.attach_node("n1", 2).unwrap();
    sim.create_context(n0, 1, (0x100, 0x200), (1, 0x100)).unwrap();
    {
        let ctx = sim.ctx_mut(1).unwrap();
        let pd = ctx.alloc_pd();
        ctx.reg_mr(pd, 0x1000, 4096, 0).unwrap();
    }
    let dst = sim.nodes[n1].addr.gid;
    let src = sim.nodes[n0].addr.gid;
    sim.schedule_migration(MigrationSpec {
        ctx_id: 1,
        src,
        dst,
        trigger_tick: 5,
        transfer: TransferMode::InBand,
    })
    .unwrap();
    let outcome = sim.run(100_000, |_| false);
    let report = sim.report(outcome).migrations[0].clone();
    assert!(report.success);
    assert_eq!(sim.locate_ctx(1).unwrap().0, n1);
    assert!(!sim.render_trace().contains("RESUME"));
    // MR contents and identifiers intact.
    let ctx = sim.ctx(1).unwrap();
    assert_eq!(ctx.mrs.len(), 1);
}

#[test]
fn failed_restore_leaves_source_stopped_and_teardown_cleans_up() {
    let (mut pair, _) = migration_pair(4, 0.0);
    let driver = StreamDriver { seed: 4, count: 120, slot: 4096 };
    driver.start(&mut pair);
    // Occupy the target QPN on n1 (where b lives) and migrate a onto it.
    let dst = pair.b.gid;
    pair.sim
        .schedule_migration(MigrationSpec {
            ctx_id: pair.a.ctx_id,
            src: pair.a.gid,
            dst,
            trigger_tick: 40,
            transfer: TransferMode::OutOfBand,
        })
        .unwrap();
    // Forge the collision: b's context claims a's QPN up front.
    {
        let b = pair.b;
        let a_qpn = pair.a.qpn;
        let ctx = pair.sim.ctx_mut(b.ctx_id).unwrap();
        ctx.device.qpn_range = (0x100, 0x30100); // widen to cover a's qpn
        ctx.create_qp_with_qpn(a_qpn, b.pd, b.send_cq, b.recv_cq, None, Default::default())
            .unwrap();
    }
    let outcome = pair.sim.run(200_000, |_| false);
    let report = pair.sim.report(outcome).migrations[0].clone();
    assert!(!report.success);
    assert!(report.error.as_deref().unwrap_or("").contains("collision"));
    // Source objects remain stopped.
    let (src_node, _) = pair.sim.locate_ctx(pair.a.ctx_id).unwrap();
    assert_eq!(src_node, pair.a.node);
    assert!(pair
        .sim
        .ctx(pair.a.ctx_id)
        .unwrap()
        .qps
        .values()
        .all(|qp| qp.state == QpState::Stopped));

    // Teardown destroys them; the partner eventually hits retry
    // exhaustion once its budget is finite.
    {
        let b = pair.b;
        let deadline = pair.sim.now() + 8;
        let ctx = pair.sim.ctx_mut(b.ctx_id).unwrap();
        let qp = ctx.qps.get_mut(&b.qpn).unwrap();
        qp.retry.max_retries = 3;
        // The partner paused on NAK_STOPPED; teardown means the resume
        // will never come. A QP that was still RTS (did not send into
        // the stop window) would instead time out on its own.
        qp.state = QpState::Rts;
        qp.retry.deadline = Some(deadline);
    }
    let a_gid = pair.a.gid;
    teardown(&mut pair.sim, pair.a.ctx_id, &[a_gid]).unwrap();
    assert!(pair.sim.locate_ctx(pair.a.ctx_id).is_none());
    // Second teardown is a no-op success; unknown ctx errors.
    teardown(&mut pair.sim, pair.a.ctx_id, &[a_gid]).unwrap();
    assert!(teardown(&mut pair.sim, 999, &[a_gid]).is_err());

    pair.sim.run(500_000, |_| false);
    let send_b = drain_cq(&mut pair.sim, pair.b.ctx_id, pair.b.send_cq);
    assert!(
        send_b.iter().any(|wc| wc.status == WcStatus::RetryExcErr),
        "partner must hit retry exhaustion, got {send_b:?}"
    );
    assert_eq!(pair.sim.ctx(pair.b.ctx_id).unwrap().qps[&pair.b.qpn].state, QpState::Error);
}

#[test]
fn simultaneous_migration_of_both_endpoints_converges() {
    for seed in 0..6 {
        let cfg = PairConfig {
            net: NetConfig {
                seed,
                latency_ticks: 2,
                loss_rate: 0.05,
                dup_rate: 0.0,
                max_ticks: 1_000_000,
            },
            ..Default::default()
        };
        let mut pair = build_pair(cfg);
        let n2 = pair.sim.attach_node("n2", 3).unwrap();
        let n3 = pair.sim.attach_node("n3", 4).unwrap();
        let driver = StreamDriver { seed, count: 100, slot: 4096 };
        let (lens_a, lens_b) = driver.start(&mut pair);
        let dst_a = pair.sim.nodes[n2].addr.gid;
        let dst_b = pair.sim.nodes[n3].addr.gid;
        pair.sim
            .schedule_migration(MigrationSpec {
                ctx_id: pair.a.ctx_id,
                src: pair.a.gid,
                dst: dst_a,
                trigger_tick: 40,
                transfer: TransferMode::InBand,
            })
            .unwrap();
        pair.sim
            .schedule_migration(MigrationSpec {
                ctx_id: pair.b.ctx_id,
                src: pair.b.gid,
                dst: dst_b,
                trigger_tick: 48,
                transfer: TransferMode::InBand,
            })
            .unwrap();
        // At-most-one-live scan: at no tick may two nodes both own a
        // non-Stopped QP with the same identity.
        let outcome = pair.sim.run(1_000_000, |sim| {
            let mut live: std::collections::BTreeMap<u32, usize> = Default::default();
            for node in &sim.nodes {
                for ctx in &node.contexts {
                    for qp in ctx.qps.values() {
                        if qp.state != QpState::Stopped {
                            *live.entry(qp.qpn).or_insert(0) += 1;
                        }
                    }
                }
            }
            assert!(
                live.values().all(|&n| n <= 1),
                "tick {}: duplicate live QP instances: {live:?}",
                sim.now()
            );
            false
        });
        assert_eq!(outcome, RunOutcome::Quiesced, "seed {seed} must converge");
        let report = pair.sim.report(outcome);
        assert!(report.migrations.iter().all(|m| m.success), "seed {seed}");
        // Overlapping windows: second trigger fires before the first
        // migration completed.
        assert!(report.migrations[0].completed_tick > 48, "windows must overlap");

        // Both QPs alive at their new homes, RTS, with correct mutual
        // addresses.
        assert_eq!(pair.sim.locate_ctx(pair.a.ctx_id).unwrap().0, n2);
        assert_eq!(pair.sim.locate_ctx(pair.b.ctx_id).unwrap().0, n3);
        let qa = &pair.sim.ctx(pair.a.ctx_id).unwrap().qps[&pair.a.qpn];
        let qb = &pair.sim.ctx(pair.b.ctx_id).unwrap().qps[&pair.b.qpn];
        assert_eq!(qa.state, QpState::Rts, "seed {seed}");
        assert_eq!(qb.state, QpState::Rts, "seed {seed}");
        assert_eq!(qa.partner.unwrap().gid, dst_b, "seed {seed}");
        assert_eq!(qb.partner.unwrap().gid, dst_a, "seed {seed}");

        // No message lost or duplicated.
        let mut a_ep = pair.a;
        a_ep.node = n2;
        driver.verify(&mut pair, &lens_a, &lens_b, &a_ep);
    }
}

#[test]
fn chained_migration_returns_home() {
    // The same context migrates twice, the second hop returning to its
    // original node: forwarding entries must chase the live instance and
    // stale ones must be cleared when the context comes back.
    let cfg = PairConfig {
        net: NetConfig {
            seed: 5,
            latency_ticks: 2,
            loss_rate: 0.02,
            dup_rate: 0.0,
            max_ticks: 2_000_000,
        },
        ..Default::default()
    };
    let mut pair = build_pair(cfg);
    let n2 = pair.sim.attach_node("n2", 3).unwrap();
    let driver = StreamDriver { seed: 5, count: 100, slot: 4096 };
    let (lens_a, lens_b) = driver.start(&mut pair);
    let dst1 = pair.sim.nodes[n2].addr.gid;
    let home = pair.a.gid;
    pair.sim
        .schedule_migration(MigrationSpec {
            ctx_id: pair.a.ctx_id,
            src: home,
            dst: dst1,
            trigger_tick: 60,
            transfer: TransferMode::InBand,
        })
        .unwrap();
    pair.sim
        .schedule_migration(MigrationSpec {
            ctx_id: pair.a.ctx_id,
            src: dst1,
            dst: home,
            trigger_tick: 3_000,
            transfer: TransferMode::InBand,
        })
        .unwrap();
    let outcome = pair.sim.run(2_000_000, |_| false);
    assert_eq!(outcome, RunOutcome::Quiesced);
    let report = pair.sim.report(outcome);
    assert!(report.migrations.iter().all(|m| m.success), "{:?}", report.migrations);
    // Back on the original node, with no stale forwarding entry there.
    assert_eq!(pair.sim.locate_ctx(pair.a.ctx_id).unwrap().0, pair.a.node);
    assert!(pair.sim.nodes[pair.a.node].resume_forwards.is_empty());
    let a_ep = pair.a;
    driver.verify(&mut pair, &lens_a, &lens_b, &a_ep);
    assert_eq!(
        pair.sim.ctx(pair.b.ctx_id).unwrap().qps[&pair.b.qpn].partner.unwrap().gid,
        home,
        "partner address must track the final location"
    );
}

#[test]
fn transparency_of_partner_completion_stream() {
    // The non-migrating node's per-CQ completion streams are identical
    // with and without the migration, modulo timing.
    let run = |migrate: bool| {
        let (mut pair, n2) = migration_pair(7, 0.1);
        let driver = StreamDriver { seed: 7, count: 120, slot: 4096 };
        driver.start(&mut pair);
        if migrate {
            let dst = pair.sim.nodes[n2].addr.gid;
            pair.sim
                .schedule_migration(MigrationSpec {
                    ctx_id: pair.a.ctx_id,
                    src: pair.a.gid,
                    dst,
                    trigger_tick: 90,
                    transfer: TransferMode::InBand,
                })
                .unwrap();
        }
        let outcome = pair.sim.run(5_000_000, |_| false);
        assert_eq!(outcome, RunOutcome::Quiesced);
        let recv: Vec<(u64, WcStatus)> = drain_cq(&mut pair.sim, pair.b.ctx_id, pair.b.recv_cq)
            .iter()
            .map(|w| (w.wr_id, w.status))
            .collect();
        let send: Vec<(u64, WcStatus)> = drain_cq(&mut pair.sim, pair.b.ctx_id, pair.b.send_cq)
            .iter()
            .map(|w| (w.wr_id, w.status))
            .collect();
        (recv, send)
    };
    assert_eq!(run(false), run(true));
}
