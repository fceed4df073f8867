//! Slot-by-slot network simulation.
//!
//! A round runs every configured channel policy `pi` side by side with two
//! reference runs on the same arrivals, contexts, noise and coupling uniform:
//!
//! * the benchmark `pi*`: configured source policy plus the oracle channel,
//!   shared by all policies of the round;
//! * one shadow per policy: replays `pi`'s realized source choices but always
//!   transmits on the best channels.
//!
//! Within slot `t` the order is: arrivals, context draw, source policy, channel
//! policy, transmission against `U(t)`, AoI update, bandit update.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Pairing, SimConfig};
use crate::envmodel::{best_channels, slot_extremes, ChannelModel, SlotContext};
use crate::error::{Error, Result};
use crate::policies::{
    build_channel_policy, ChannelPolicy, ChannelPolicyKind, ChannelRequest, PolicySetup,
    SourceScheduler,
};
use crate::stochastic::{bernoulli, coupling_uniform, Purpose, RngStream};

/// Per-source AoI, delivered generation time and latest buffered packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkState {
    aoi: Vec<u64>,
    last_gen: Vec<u64>,
    buffer: Vec<Option<u64>>,
}

impl NetworkState {
    /// Zero AoI, generation time 0, empty buffers.
    pub fn new(num_sources: usize) -> Self {
        Self {
            aoi: vec![0; num_sources],
            last_gen: vec![0; num_sources],
            buffer: vec![None; num_sources],
        }
    }

    pub fn num_sources(&self) -> usize {
        self.aoi.len()
    }

    pub fn aoi(&self, m: usize) -> u64 {
        self.aoi[m]
    }

    pub fn aoi_all(&self) -> &[u64] {
        &self.aoi
    }

    pub fn aoi_sum(&self) -> u64 {
        self.aoi.iter().sum()
    }

    pub fn last_delivered(&self, m: usize) -> u64 {
        self.last_gen[m]
    }

    pub fn buffer(&self, m: usize) -> Option<u64> {
        self.buffer[m]
    }

    /// Generation time of a deliverable packet, if source `m` has one.
    pub fn eligible_packet(&self, m: usize) -> Option<u64> {
        self.buffer[m].filter(|&g| g > self.last_gen[m])
    }

    pub fn has_eligible(&self) -> bool {
        (0..self.num_sources()).any(|m| self.eligible_packet(m).is_some())
    }

    /// A packet generated at `t` replaces whatever was buffered.
    pub fn arrive(&mut self, m: usize, t: u64) {
        self.buffer[m] = Some(t);
    }

    #[cfg(test)]
    pub(crate) fn set_for_test(&mut self, m: usize, aoi: u64, buffer: Option<u64>) {
        self.aoi[m] = aoi;
        self.buffer[m] = buffer;
        self.last_gen[m] = 0;
    }
}

/// Disjoint source-channel pairs scheduled in one slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decision {
    pub pairs: Vec<(usize, usize)>,
}

impl Decision {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_disjoint(&self) -> bool {
        pairs_disjoint(self.pairs.iter().map(|&(m, n)| (m as u32, n as u32)))
    }
}

fn pairs_disjoint(pairs: impl Iterator<Item = (u32, u32)> + Clone) -> bool {
    let v: Vec<(u32, u32)> = pairs.collect();
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            if v[i].0 == v[j].0 || v[i].1 == v[j].1 {
                return false;
            }
        }
    }
    true
}

/// Pairs sources with channels, both given in rank order.
pub fn pair_up(
    sources: &[usize],
    channels: &[usize],
    pairing: Pairing,
    rng: Option<&mut ChaCha8Rng>,
) -> Decision {
    let mut channels = channels.to_vec();
    if let (Pairing::Random, Some(rng)) = (pairing, rng) {
        channels.shuffle(rng);
    }
    Decision {
        pairs: sources.iter().copied().zip(channels).collect(),
    }
}

/// Transmits every pair against the shared uniform `u` and advances AoI.
/// Returns the success bit of each pair, in decision order.
pub fn step(
    net: &mut NetworkState,
    decision: &Decision,
    ctx: &SlotContext,
    u: f64,
    t: u64,
) -> Result<Vec<bool>> {
    if !decision.is_disjoint() {
        return Err(Error::Contract(format!(
            "slot {t}: decision {:?} is not disjoint",
            decision.pairs
        )));
    }
    let mu = ctx.mu_true();
    let mut delivered = vec![false; net.num_sources()];
    let mut outcomes = Vec::with_capacity(decision.pairs.len());
    for &(m, n) in &decision.pairs {
        let gen = net.eligible_packet(m).ok_or_else(|| {
            Error::Contract(format!("slot {t}: source {m} has no deliverable packet"))
        })?;
        let mu_n = *mu
            .get(n)
            .ok_or_else(|| Error::Contract(format!("slot {t}: channel {n} out of range")))?;
        let success = u <= mu_n;
        if success {
            net.aoi[m] = t - gen;
            net.last_gen[m] = gen;
            net.buffer[m] = None;
            delivered[m] = true;
        }
        outcomes.push(success);
    }
    for (m, done) in delivered.into_iter().enumerate() {
        if !done {
            net.aoi[m] += 1;
        }
    }
    Ok(outcomes)
}

/// Environment randomness of one round.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    model: &'a ChannelModel,
    num_sources: usize,
    arrival_rate: f64,
    arrivals: RngStream,
    contexts: RngStream,
    noise: RngStream,
    coupling: RngStream,
}

/// Everything the environment draws for one slot.
#[derive(Debug, Clone)]
pub struct SlotDraw {
    pub arrivals: Vec<bool>,
    pub ctx: SlotContext,
    pub u: f64,
}

impl<'a> Environment<'a> {
    pub fn new(
        model: &'a ChannelModel,
        num_sources: usize,
        arrival_rate: f64,
        seed: u64,
        round: u64,
    ) -> Self {
        Self {
            model,
            num_sources,
            arrival_rate,
            arrivals: RngStream::new(seed, round, Purpose::Arrivals),
            contexts: RngStream::new(seed, round, Purpose::Contexts),
            noise: RngStream::new(seed, round, Purpose::Noise),
            coupling: RngStream::new(seed, round, Purpose::Coupling),
        }
    }

    pub fn draw(&self, t: u64) -> SlotDraw {
        let mut rng = self.arrivals.at(t);
        let arrivals = (0..self.num_sources)
            .map(|_| bernoulli(self.arrival_rate, &mut rng).expect("arrival rate validated"))
            .collect();
        SlotDraw {
            arrivals,
            ctx: self.model.generate_slot(t, &self.contexts, &self.noise),
            u: coupling_uniform(&self.coupling, t),
        }
    }
}

/// Seed used for the benchmark's independent environment in uncoupled mode.
fn uncoupled_seed(seed: u64) -> u64 {
    seed ^ 0xa5a5_5a5a_0f0f_f0f0
}

/// Decisions and aggregate AoI of one run over a round.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    /// `sum_m x_m(t)` for `t = 1..=T`.
    pub aoi_sum: Vec<u64>,
    offsets: Vec<u32>,
    pairs: Vec<(u32, u32)>,
    /// Optional `T x M` per-source AoI.
    pub aoi_detail: Option<Vec<u32>>,
}

impl RunTrace {
    fn with_capacity(horizon: usize, detail: Option<usize>) -> Self {
        let mut offsets = Vec::with_capacity(horizon + 1);
        offsets.push(0);
        Self {
            aoi_sum: Vec::with_capacity(horizon),
            offsets,
            pairs: Vec::new(),
            aoi_detail: detail.map(|m| Vec::with_capacity(horizon * m)),
        }
    }

    fn record(&mut self, net: &NetworkState, decision: &Decision) {
        self.aoi_sum.push(net.aoi_sum());
        self.pairs
            .extend(decision.pairs.iter().map(|&(m, n)| (m as u32, n as u32)));
        self.offsets.push(self.pairs.len() as u32);
        if let Some(detail) = self.aoi_detail.as_mut() {
            detail.extend(net.aoi_all().iter().map(|&x| x as u32));
        }
    }

    /// Builds a trace from per-slot AoI sums and decisions.
    pub fn from_parts(aoi_sum: Vec<u64>, decisions: &[&[(usize, usize)]]) -> Self {
        assert_eq!(aoi_sum.len(), decisions.len());
        let mut trace = Self {
            aoi_sum,
            offsets: vec![0],
            pairs: Vec::new(),
            aoi_detail: None,
        };
        for d in decisions {
            trace
                .pairs
                .extend(d.iter().map(|&(m, n)| (m as u32, n as u32)));
            trace.offsets.push(trace.pairs.len() as u32);
        }
        trace
    }

    pub fn slots(&self) -> usize {
        self.aoi_sum.len()
    }

    /// Pairs `(source, channel)` transmitted in slot `t` (1-based).
    pub fn decision(&self, t: u64) -> &[(u32, u32)] {
        let i = (t - 1) as usize;
        &self.pairs[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    /// Per-source AoI at slot `t` when detail was recorded.
    pub fn aoi_at(&self, t: u64, num_sources: usize) -> Option<&[u32]> {
        let i = (t - 1) as usize;
        self.aoi_detail
            .as_ref()
            .map(|d| &d[i * num_sources..(i + 1) * num_sources])
    }

    /// Whether every recorded decision is disjoint.
    pub fn disjointness_violations(&self) -> u64 {
        (1..=self.slots() as u64)
            .filter(|&t| !pairs_disjoint(self.decision(t).iter().copied()))
            .count() as u64
    }
}

#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub kind: ChannelPolicyKind,
    pub run: RunTrace,
    pub shadow: RunTrace,
    /// Slot-source pairs where the policy's AoI fell below its shadow's.
    pub dominance_violations: u64,
    pub exploit_slots: u64,
}

/// Per-slot `mu` table, flattened `T x N`.
#[derive(Debug, Clone, Default)]
pub struct MuTable {
    n: usize,
    data: Vec<f64>,
}

impl MuTable {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            data: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    fn push(&mut self, mu: &[f64]) {
        self.data.extend_from_slice(mu);
    }

    pub fn at(&self, t: u64) -> &[f64] {
        let i = (t - 1) as usize;
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn slots(&self) -> usize {
        self.data.len().checked_div(self.n).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: u64,
    pub num_sources: usize,
    pub num_pairs: usize,
    pub horizon: u64,
    pub mu: MuTable,
    pub u: Vec<f64>,
    pub arrivals: Option<Vec<bool>>,
    pub benchmark: RunTrace,
    /// `mu` seen by the benchmark; differs from `mu` only in uncoupled mode.
    pub benchmark_mu: Option<MuTable>,
    pub policies: Vec<PolicyTrace>,
    pub clamped: u64,
    pub min_mu: f64,
    pub min_gap: f64,
}

struct PolicyRun {
    net: NetworkState,
    shadow_net: NetworkState,
    sources: SourceScheduler,
    channel: Option<Box<dyn ChannelPolicy>>,
    policy_stream: RngStream,
    pairing_stream: RngStream,
    trace: PolicyTrace,
}

struct BenchmarkRun {
    net: NetworkState,
    sources: SourceScheduler,
    trace: RunTrace,
}

impl BenchmarkRun {
    fn slot(&mut self, draw: &SlotDraw, t: u64, p: usize) -> Result<()> {
        apply_arrivals(&mut self.net, &draw.arrivals, t);
        let sources = self.sources.select(&self.net, t, p);
        let channels = best_channels(draw.ctx.mu_true(), sources.len());
        let decision = pair_up(&sources, &channels, Pairing::Rank, None);
        step(&mut self.net, &decision, &draw.ctx, draw.u, t)?;
        self.trace.record(&self.net, &decision);
        Ok(())
    }
}

fn apply_arrivals(net: &mut NetworkState, arrivals: &[bool], t: u64) {
    for (m, &a) in arrivals.iter().enumerate() {
        if a {
            net.arrive(m, t);
        }
    }
}

impl PolicyRun {
    fn slot(&mut self, draw: &SlotDraw, t: u64, p: usize, pairing: Pairing) -> Result<()> {
        apply_arrivals(&mut self.net, &draw.arrivals, t);
        apply_arrivals(&mut self.shadow_net, &draw.arrivals, t);

        let sources = self.sources.select(&self.net, t, p);
        let decision = if sources.is_empty() {
            Decision::idle()
        } else {
            let channels = match self.channel.as_mut() {
                None => best_channels(draw.ctx.mu_true(), sources.len()),
                Some(policy) => {
                    let urgencies: Vec<u64> = sources.iter().map(|&m| self.net.aoi(m)).collect();
                    let req = ChannelRequest {
                        features: draw.ctx.features(),
                        urgencies: &urgencies,
                        count: sources.len(),
                    };
                    let mut rng = self.policy_stream.at(t);
                    let chosen = policy.select(&req, &mut rng)?;
                    if policy.last_exploited() {
                        self.trace.exploit_slots += 1;
                    }
                    chosen
                }
            };
            let mut pair_rng = self.pairing_stream.at(t);
            pair_up(&sources, &channels, pairing, Some(&mut pair_rng))
        };

        let outcomes = step(&mut self.net, &decision, &draw.ctx, draw.u, t)?;
        if let Some(policy) = self.channel.as_mut() {
            for (&(_, n), &ok) in decision.pairs.iter().zip(&outcomes) {
                policy.observe(n, draw.ctx.features().row(n), ok)?;
            }
        }

        // Shadow: same sources as realized by the policy, best channels.
        let realized: Vec<usize> = decision.pairs.iter().map(|&(m, _)| m).collect();
        let best = best_channels(draw.ctx.mu_true(), realized.len());
        let mut shadow = pair_up(&realized, &best, Pairing::Rank, None);
        shadow
            .pairs
            .retain(|&(m, _)| self.shadow_net.eligible_packet(m).is_some());
        step(&mut self.shadow_net, &shadow, &draw.ctx, draw.u, t)?;

        for m in 0..self.net.num_sources() {
            if self.net.aoi(m) < self.shadow_net.aoi(m) {
                self.trace.dominance_violations += 1;
            }
        }
        self.trace.run.record(&self.net, &decision);
        self.trace.shadow.record(&self.shadow_net, &shadow);
        Ok(())
    }
}

/// One round with no per-source detail unless the config asks for trace dumps.
pub fn run_round(cfg: &SimConfig, round: u64) -> Result<RoundTrace> {
    run_round_with(cfg, round, cfg.dump_traces)
}

/// One round; `detail` records per-source AoI and arrival bits.
pub fn run_round_with(cfg: &SimConfig, round: u64, detail: bool) -> Result<RoundTrace> {
    let m = cfg.num_sources;
    let n = cfg.channel_model.num_channels();
    let horizon = cfg.horizon as usize;
    let p = cfg.num_pairs;
    let setup = PolicySetup {
        params: cfg.effective_params(),
        dim: cfg.channel_model.feature_dim(),
        horizon: cfg.horizon,
        num_sources: m,
        arrival_rate: cfg.arrival_rate,
        per_pair_threshold: cfg.per_pair_threshold,
    };
    let detail_m = detail.then_some(m);

    let mut runs: Vec<PolicyRun> = cfg
        .channel_policies
        .iter()
        .map(|&kind| PolicyRun {
            net: NetworkState::new(m),
            shadow_net: NetworkState::new(m),
            sources: SourceScheduler::new(cfg.source_policy),
            channel: build_channel_policy(kind, &setup),
            policy_stream: RngStream::new(cfg.seed, round, Purpose::policy(kind.name())),
            pairing_stream: RngStream::new(
                cfg.seed,
                round,
                Purpose::policy(&format!("{}/pairing", kind.name())),
            ),
            trace: PolicyTrace {
                kind,
                run: RunTrace::with_capacity(horizon, detail_m),
                shadow: RunTrace::with_capacity(horizon, detail_m),
                dominance_violations: 0,
                exploit_slots: 0,
            },
        })
        .collect();
    let mut bench = BenchmarkRun {
        net: NetworkState::new(m),
        sources: SourceScheduler::new(cfg.source_policy),
        trace: RunTrace::with_capacity(horizon, detail_m),
    };

    let env = Environment::new(&cfg.channel_model, m, cfg.arrival_rate, cfg.seed, round);
    let bench_env = cfg.uncoupled.then(|| {
        Environment::new(
            &cfg.channel_model,
            m,
            cfg.arrival_rate,
            uncoupled_seed(cfg.seed),
            round,
        )
    });

    let mut mu = MuTable::new(n);
    let mut bench_mu = bench_env.as_ref().map(|_| MuTable::new(n));
    let mut us = Vec::with_capacity(horizon);
    let mut arrivals = detail.then(|| Vec::with_capacity(horizon * m));
    let mut clamped = 0u64;
    let mut min_mu = f64::INFINITY;
    let mut min_gap = f64::INFINITY;

    for t in 1..=cfg.horizon {
        let draw = env.draw(t);
        mu.push(draw.ctx.mu_true());
        us.push(draw.u);
        if let Some(a) = arrivals.as_mut() {
            a.extend_from_slice(&draw.arrivals);
        }
        clamped += draw.ctx.clamped() as u64;
        let (lo, gap) = slot_extremes(draw.ctx.mu_true());
        min_mu = min_mu.min(lo);
        if let Some(g) = gap {
            min_gap = min_gap.min(g);
        }

        match (&bench_env, bench_mu.as_mut()) {
            (Some(benv), Some(bmu)) => {
                let bdraw = benv.draw(t);
                bmu.push(bdraw.ctx.mu_true());
                bench.slot(&bdraw, t, p)?;
            }
            _ => bench.slot(&draw, t, p)?,
        }
        for run in runs.iter_mut() {
            run.slot(&draw, t, p, cfg.pairing)?;
        }
    }

    Ok(RoundTrace {
        round,
        num_sources: m,
        num_pairs: p,
        horizon: cfg.horizon,
        mu,
        u: us,
        arrivals,
        benchmark: bench.trace,
        benchmark_mu: bench_mu,
        policies: runs.into_iter().map(|r| r.trace).collect(),
        clamped,
        min_mu,
        min_gap: if min_gap.is_finite() { min_gap } else { 0.0 },
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    round: u64,
    t: u64,
    u: f64,
    mu: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    arrivals: Option<Vec<u8>>,
    benchmark: &'a [(u32, u32)],
    policies: Vec<PolicyLine<'a>>,
}

#[derive(Serialize)]
struct PolicyLine<'a> {
    policy: &'a str,
    pairs: &'a [(u32, u32)],
    shadow: &'a [(u32, u32)],
    aoi_sum: u64,
    shadow_aoi_sum: u64,
}

/// Line-delimited JSON, one record per slot.
pub fn dump_trace(trace: &RoundTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let m = trace.num_sources;
    for t in 1..=trace.horizon {
        let i = (t - 1) as usize;
        let line = TraceLine {
            round: trace.round,
            t,
            u: trace.u[i],
            mu: trace.mu.at(t),
            arrivals: trace
                .arrivals
                .as_ref()
                .map(|a| a[i * m..(i + 1) * m].iter().map(|&b| b as u8).collect()),
            benchmark: trace.benchmark.decision(t),
            policies: trace
                .policies
                .iter()
                .map(|p| PolicyLine {
                    policy: p.kind.label(),
                    pairs: p.run.decision(t),
                    shadow: p.shadow.decision(t),
                    aoi_sum: p.run.aoi_sum[i],
                    shadow_aoi_sum: p.shadow.aoi_sum[i],
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
