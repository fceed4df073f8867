//! End-to-end simulator and metric properties on small configurations.

use aoi_core::config::SimConfig;
use aoi_core::envmodel::ChannelModel;
use aoi_core::experiment::run_experiment;
use aoi_core::metrics::{regret_series, shadow_gap, suboptimal_count};
use aoi_core::policies::ChannelPolicyKind;
use aoi_core::simulator::{
    run_round, run_round_with, step, Decision, Environment, NetworkState, RoundTrace,
};

fn small(policies: &[ChannelPolicyKind]) -> SimConfig {
    let mut cfg = SimConfig::preset("desk").unwrap();
    cfg.horizon = 2_000;
    cfg.rounds = 6;
    cfg.channel_policies = policies.to_vec();
    cfg
}

/// Replays arrivals and decisions and checks that each AoI step is either
/// aging by one or a reset to the age of the latest buffered packet, and that
/// nothing is scheduled while no source holds a fresh packet.
fn check_transitions(trace: &RoundTrace, run: &aoi_core::simulator::RunTrace) {
    let m = trace.num_sources;
    let arrivals = trace.arrivals.as_ref().expect("detail recorded");
    let mut latest = vec![0u64; m];
    let mut delivered_gen = vec![0u64; m];
    let mut prev = vec![0u32; m];
    for t in 1..=trace.horizon {
        let i = (t - 1) as usize;
        for s in 0..m {
            if arrivals[i * m + s] {
                latest[s] = t;
            }
        }
        let any_eligible = (0..m).any(|s| latest[s] > delivered_gen[s]);
        let decision = run.decision(t);
        if !any_eligible {
            assert!(
                decision.is_empty(),
                "slot {t}: transmission without a fresh packet"
            );
        }
        let now = run.aoi_at(t, m).unwrap();
        for s in 0..m {
            if now[s] == prev[s] + 1 {
                continue;
            }
            assert!(
                decision.iter().any(|&(src, _)| src as usize == s),
                "slot {t}: source {s} reset without transmitting"
            );
            assert!(
                latest[s] > delivered_gen[s],
                "slot {t}: source {s} delivered a stale packet"
            );
            assert_eq!(
                now[s] as u64,
                t - latest[s],
                "slot {t}: reset to the wrong age"
            );
            delivered_gen[s] = latest[s];
        }
        prev.copy_from_slice(now);
    }
}

#[test]
fn aoi_transitions_are_aging_or_reset() {
    for pairs in [1, 3] {
        let mut cfg = small(&[ChannelPolicyKind::LinUcb, ChannelPolicyKind::Random]);
        cfg.num_pairs = pairs;
        cfg.arrival_rate = 0.05;
        for round in 0..3 {
            let trace = run_round_with(&cfg, round, true).unwrap();
            check_transitions(&trace, &trace.benchmark);
            for p in &trace.policies {
                check_transitions(&trace, &p.run);
                check_transitions(&trace, &p.shadow);
            }
        }
    }
}

#[test]
fn idle_slots_still_age() {
    let mut cfg = small(&[ChannelPolicyKind::LinTs]);
    cfg.arrival_rate = 0.01;
    cfg.num_sources = 2;
    let trace = run_round_with(&cfg, 0, true).unwrap();
    let run = &trace.policies[0].run;
    let idle = (1..=cfg.horizon)
        .filter(|&t| run.decision(t).is_empty())
        .count();
    assert!(idle > 100, "expected many idle slots, got {idle}");
    check_transitions(&trace, run);
}

#[test]
fn shadow_gap_is_never_negative() {
    let cfg = small(&[
        ChannelPolicyKind::LinUcb,
        ChannelPolicyKind::LinTs,
        ChannelPolicyKind::Random,
    ]);
    for round in 0..cfg.rounds as u64 {
        let trace = run_round(&cfg, round).unwrap();
        for p in &trace.policies {
            assert_eq!(p.dominance_violations, 0);
            assert!(
                shadow_gap(&p.run, &p.shadow).iter().all(|&g| g >= 0),
                "{:?}",
                p.kind
            );
        }
    }
}

#[test]
fn oracle_has_zero_regret() {
    for pairs in [1, 2, 3] {
        let mut cfg = small(&[ChannelPolicyKind::Oracle]);
        cfg.num_pairs = pairs;
        let trace = run_round(&cfg, 4).unwrap();
        let p = &trace.policies[0];
        assert!(regret_series(&p.run, &trace.benchmark)
            .iter()
            .all(|&r| r == 0));
        assert_eq!(suboptimal_count(&p.run, &trace.mu).last(), Some(&0));
    }
}

#[test]
fn coupled_success_preserves_marginal() {
    let model = ChannelModel::fixed_gap();
    let env = Environment::new(&model, 1, 1.0, 99, 0);
    let mut net = NetworkState::new(1);
    let slots = 100_000u64;
    let mut successes = 0u64;
    for t in 1..=slots {
        let draw = env.draw(t);
        net.arrive(0, t);
        let out = step(
            &mut net,
            &Decision {
                pairs: vec![(0, 1)],
            },
            &draw.ctx,
            draw.u,
            t,
        )
        .unwrap();
        successes += out[0] as u64;
    }
    let rate = successes as f64 / slots as f64;
    let sigma = (0.5f64 * 0.5 / slots as f64).sqrt();
    assert!((rate - 0.5).abs() < 3.0 * sigma, "rate {rate}");
}

#[test]
fn random_channels_are_suboptimal_four_times_in_five() {
    let mut cfg = small(&[ChannelPolicyKind::Random]);
    cfg.horizon = 10_000;
    let (mut k, mut tx) = (0u64, 0u64);
    for round in 0..4 {
        let trace = run_round(&cfg, round).unwrap();
        let run = &trace.policies[0].run;
        k += suboptimal_count(run, &trace.mu).last().unwrap();
        tx += (1..=cfg.horizon)
            .map(|t| run.decision(t).len() as u64)
            .sum::<u64>();
    }
    let frac = k as f64 / tx as f64;
    assert!((frac - 0.8).abs() < 0.02, "{frac}");
}

#[test]
fn runs_are_reproducible_across_worker_counts() {
    let mut cfg = small(&[ChannelPolicyKind::LinUcb, ChannelPolicyKind::AdTs]);
    cfg.workers = Some(1);
    let a = run_experiment(&cfg).unwrap();
    cfg.workers = Some(3);
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    let c = run_experiment(&cfg).unwrap();
    assert_eq!(b, c);
}

#[test]
fn policies_share_environment_randomness() {
    let all = small(&[
        ChannelPolicyKind::LinUcb,
        ChannelPolicyKind::Random,
        ChannelPolicyKind::LinTs,
        ChannelPolicyKind::SupLinUcb,
    ]);
    let together = run_experiment(&all).unwrap();
    let alone = run_experiment(&small(&[ChannelPolicyKind::LinTs])).unwrap();
    assert_eq!(together.benchmark_aoi, alone.benchmark_aoi);
    assert_eq!(
        together.policy(ChannelPolicyKind::LinTs),
        alone.policy(ChannelPolicyKind::LinTs)
    );
    assert_eq!(together.clamp_fraction, alone.clamp_fraction);
}

#[test]
fn series_are_monotone() {
    let mut cfg = small(&[ChannelPolicyKind::LinUcb, ChannelPolicyKind::Random]);
    cfg.rounds = 20;
    let m = run_experiment(&cfg).unwrap();
    assert!(m.t_grid.windows(2).all(|w| w[0] < w[1]));
    for p in &m.policies {
        assert!(p.k.mean.windows(2).all(|w| w[0] <= w[1]), "{}", p.label);
        assert!(
            p.regret.mean.windows(2).all(|w| w[0] <= w[1]),
            "{}: {:?}",
            p.label,
            p.regret.mean
        );
    }
}

#[test]
fn single_round_has_zero_stderr() {
    let mut cfg = small(&[ChannelPolicyKind::LinUcb]);
    cfg.rounds = 1;
    let m = run_experiment(&cfg).unwrap();
    assert!(m.policies[0].regret.stderr.iter().all(|&s| s == 0.0));
    cfg.rounds = 2;
    let m = run_experiment(&cfg).unwrap();
    assert!(m.policies[0].regret.stderr.iter().any(|&s| s > 0.0));
}

#[test]
fn uncoupled_mode_runs_benchmark_separately() {
    let mut cfg = small(&[ChannelPolicyKind::LinUcb]);
    let coupled = run_experiment(&cfg).unwrap();
    cfg.uncoupled = true;
    let uncoupled = run_experiment(&cfg).unwrap();
    assert_ne!(coupled.benchmark_aoi, uncoupled.benchmark_aoi);
    let p = coupled.policy(ChannelPolicyKind::LinUcb).unwrap();
    let q = uncoupled.policy(ChannelPolicyKind::LinUcb).unwrap();
    assert_eq!(p.aoi, q.aoi);
}

#[test]
fn clamping_is_reported_for_table1() {
    let m = run_experiment(&small(&[ChannelPolicyKind::Random])).unwrap();
    assert!(
        m.clamp_fraction > 0.0 && m.clamp_fraction < 0.05,
        "{}",
        m.clamp_fraction
    );
    assert!(m.min_mu_seen >= 0.0);
}
