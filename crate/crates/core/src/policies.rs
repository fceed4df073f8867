//! Source and channel scheduling policies.
//!
//! Source side: age-based Max-Weight and round robin. Channel side: the linear
//! contextual bandit family (LinUCB, LinTS and their age-dependent variants),
//! a stage-based SupLinUCB baseline, uniform random and a constant-rate
//! epsilon-greedy. The oracle channel rule is not a [`ChannelPolicy`]: it reads
//! the true success probabilities and is applied by the simulator directly.
//!
//! Every channel rule returns a ranked list of channels; multi-pair scheduling
//! takes the top `k` of that list. Ties always go to the lowest index.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envmodel::{top_k_desc, Features};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, dot, rank_one_update, solve_theta, spd_inverse, Mat};
use crate::simulator::NetworkState;

/// Updates between full re-inversions of `A`.
pub const REFRESH_INTERVAL: u64 = 10_000;

/// Ridge estimator shared by the linear bandit policies.
#[derive(Debug, Clone)]
pub struct BanditState {
    a: Mat,
    a_inv: Mat,
    b: Vec<f64>,
    updates: u64,
}

impl BanditState {
    pub fn new(dim: usize) -> Self {
        Self {
            a: Mat::identity(dim),
            a_inv: Mat::identity(dim),
            b: vec![0.0; dim],
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn a_inv(&self) -> &Mat {
        &self.a_inv
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn theta(&self) -> Vec<f64> {
        solve_theta(&self.a_inv, &self.b)
    }

    /// `A += x x^T`, `b += x r` with a binary transmission outcome.
    pub fn update(&mut self, x: &[f64], reward: bool) -> Result<()> {
        self.update_value(x, if reward { 1.0 } else { 0.0 })
    }

    /// `A += x x^T`, `b += x r` with a real-valued observation.
    pub fn update_value(&mut self, x: &[f64], reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        self.a_inv = rank_one_update(&self.a_inv, x)?;
        self.a.add_outer(x);
        if reward != 0.0 {
            for (bi, xi) in self.b.iter_mut().zip(x) {
                *bi += xi * reward;
            }
        }
        self.updates += 1;
        if self.updates.is_multiple_of(REFRESH_INTERVAL) {
            self.a_inv = spd_inverse(&self.a)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    /// UCB width multiplier.
    pub alpha: f64,
    /// Thompson sampling scale.
    pub v: f64,
    pub delta: f64,
    pub eps: f64,
    /// Exploration rate of the epsilon-greedy policy.
    pub explore: f64,
    /// Project scores onto `[0, 1]`. Disabling this is a fault-injection hook.
    #[serde(skip)]
    pub project: bool,
}

impl PolicyParams {
    pub const DEFAULT_DELTA: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 0.5;

    /// `sqrt(0.5 * ln(2 T N / delta))`.
    pub fn default_alpha(horizon: u64, num_channels: usize, delta: f64) -> f64 {
        (0.5 * (2.0 * horizon as f64 * num_channels as f64 / delta).ln()).sqrt()
    }

    /// `sqrt((24 / eps) * d * ln(1 / delta))`.
    pub fn theoretical_v(eps: f64, dim: usize, delta: f64) -> f64 {
        ((24.0 / eps) * dim as f64 * (1.0 / delta).ln()).sqrt()
    }

    pub fn for_horizon(horizon: u64, num_channels: usize) -> Self {
        let delta = Self::DEFAULT_DELTA;
        Self {
            alpha: Self::default_alpha(horizon, num_channels, delta),
            v: 1.0,
            delta,
            eps: Self::DEFAULT_EPS,
            explore: 0.2,
            project: true,
        }
    }

    fn project(&self, x: f64) -> f64 {
        if self.project {
            x.clamp(0.0, 1.0)
        } else {
            x
        }
    }
}

/// Unclamped estimates `theta_hat^T x_n`.
pub fn estimate_scores(state: &BanditState, features: &Features) -> Vec<f64> {
    let theta = state.theta();
    features.rows().map(|x| dot(&theta, x)).collect()
}

pub fn linucb_scores(state: &BanditState, features: &Features, params: &PolicyParams) -> Vec<f64> {
    let theta = state.theta();
    features
        .rows()
        .map(|x| {
            let width = state.a_inv.quad_form(x).max(0.0).sqrt();
            params.project(dot(&theta, x) + params.alpha * width)
        })
        .collect()
}

/// Draws `theta_tilde ~ N(theta_hat, v^2 A^{-1})` once and scores every channel.
pub fn lints_scores(
    state: &BanditState,
    features: &Features,
    params: &PolicyParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let sample = lints_sample(state, params.v, rng)?;
    Ok(features
        .rows()
        .map(|x| params.project(dot(&sample, x)))
        .collect())
}

pub fn lints_sample(state: &BanditState, v: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut theta = state.theta();
    let l = cholesky_lower(&state.a_inv)?;
    let d = theta.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    for (i, th) in theta.iter_mut().enumerate() {
        let lz: f64 = (0..=i).map(|k| l.get(i, k) * z[k]).sum();
        *th += v * lz;
    }
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseRule {
    Ucb,
    Ts,
}

/// Age threshold `M / (2 lambda est_max)`; `None` (never exploit) when the
/// best estimate is not positive.
pub fn age_threshold(num_sources: usize, arrival_rate: f64, est_max: f64) -> Option<f64> {
    (est_max > 0.0).then(|| num_sources as f64 / (2.0 * arrival_rate * est_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdChoice {
    pub channels: Vec<usize>,
    pub exploited: bool,
}

/// Age-dependent selection: pure exploitation on `theta_hat^T x` when the
/// urgency exceeds the age threshold, the base bandit rule otherwise.
#[allow(clippy::too_many_arguments)]
pub fn ad_select(
    state: &BanditState,
    features: &Features,
    params: &PolicyParams,
    urgency: f64,
    num_sources: usize,
    arrival_rate: f64,
    base: BaseRule,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AdChoice> {
    let est = estimate_scores(state, features);
    let est_max = est.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match age_threshold(num_sources, arrival_rate, est_max) {
        Some(threshold) if urgency > threshold => Ok(AdChoice {
            channels: top_k_desc(&est, k),
            exploited: true,
        }),
        _ => Ok(AdChoice {
            channels: base_select(state, features, params, base, k, rng)?,
            exploited: false,
        }),
    }
}

fn base_scores(
    state: &BanditState,
    features: &Features,
    params: &PolicyParams,
    base: BaseRule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    match base {
        BaseRule::Ucb => Ok(linucb_scores(state, features, params)),
        BaseRule::Ts => lints_scores(state, features, params, rng),
    }
}

fn base_select(
    state: &BanditState,
    features: &Features,
    params: &PolicyParams,
    base: BaseRule,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    Ok(top_k_desc(
        &base_scores(state, features, params, base, rng)?,
        k,
    ))
}

// ---------------------------------------------------------------------------
// Source policies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePolicy {
    #[default]
    #[serde(rename = "maxweight")]
    MaxWeight,
    #[serde(rename = "roundrobin")]
    RoundRobin,
}

impl SourcePolicy {
    pub fn name(self) -> &'static str {
        match self {
            SourcePolicy::MaxWeight => "maxweight",
            SourcePolicy::RoundRobin => "roundrobin",
        }
    }
}

/// Max-Weight weight `(x_m(t-1) + 1) - tau_m(t)`: the AoI drop a successful
/// delivery would produce.
pub fn maxweight_weight(net: &NetworkState, m: usize, t: u64) -> Option<i64> {
    let gen = net.eligible_packet(m)?;
    let tau = (t - gen) as i64;
    Some(net.aoi(m) as i64 + 1 - tau)
}

/// Up to `p` eligible sources by descending weight.
pub fn maxweight_sources(net: &NetworkState, t: u64, p: usize) -> Vec<usize> {
    let mut ranked: Vec<(i64, usize)> = (0..net.num_sources())
        .filter_map(|m| maxweight_weight(net, m, t).map(|w| (w, m)))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(p).map(|(_, m)| m).collect()
}

/// Stateful wrapper so round robin can keep its pointer.
#[derive(Debug, Clone)]
pub struct SourceScheduler {
    policy: SourcePolicy,
    next: usize,
}

impl SourceScheduler {
    pub fn new(policy: SourcePolicy) -> Self {
        Self { policy, next: 0 }
    }

    pub fn select(&mut self, net: &NetworkState, t: u64, p: usize) -> Vec<usize> {
        match self.policy {
            SourcePolicy::MaxWeight => maxweight_sources(net, t, p),
            SourcePolicy::RoundRobin => {
                let m = net.num_sources();
                let mut out = Vec::with_capacity(p);
                for step in 0..m {
                    let src = (self.next + step) % m;
                    if net.eligible_packet(src).is_some() {
                        out.push(src);
                        if out.len() == p {
                            break;
                        }
                    }
                }
                if let Some(&last) = out.last() {
                    self.next = (last + 1) % m;
                }
                out
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Channel policies
// ---------------------------------------------------------------------------

/// What a channel policy sees in a slot.
#[derive(Debug, Clone, Copy)]
pub struct ChannelRequest<'a> {
    pub features: &'a Features,
    /// Current AoI of each scheduled source, in source-rank order.
    pub urgencies: &'a [u64],
    /// Number of channels to return.
    pub count: usize,
}

pub trait ChannelPolicy: Send {
    /// Ranked channels, at most `req.count` of them.
    fn select(&mut self, req: &ChannelRequest<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>>;

    /// Outcome of a transmission on `channel` whose features were `x`.
    fn observe(&mut self, channel: usize, x: &[f64], reward: bool) -> Result<()>;

    /// Whether the last selection took the pure-exploitation branch.
    fn last_exploited(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelPolicyKind {
    Oracle,
    Random,
    LinUcb,
    LinTs,
    AdUcb,
    AdTs,
    SupLinUcb,
    EpsGreedy,
}

impl ChannelPolicyKind {
    pub const PROPOSED: [ChannelPolicyKind; 4] = [
        ChannelPolicyKind::LinUcb,
        ChannelPolicyKind::LinTs,
        ChannelPolicyKind::AdUcb,
        ChannelPolicyKind::AdTs,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "oracle" => Self::Oracle,
            "random" => Self::Random,
            "linucb" => Self::LinUcb,
            "lints" => Self::LinTs,
            "aducb" => Self::AdUcb,
            "adts" => Self::AdTs,
            "suplinucb" | "suplinucb-approx" => Self::SupLinUcb,
            "epsgreedy" => Self::EpsGreedy,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Random => "random",
            Self::LinUcb => "linucb",
            Self::LinTs => "lints",
            Self::AdUcb => "aducb",
            Self::AdTs => "adts",
            Self::SupLinUcb => "suplinucb",
            Self::EpsGreedy => "epsgreedy",
        }
    }

    /// Name used in output files.
    pub fn label(self) -> &'static str {
        match self {
            Self::SupLinUcb => "suplinucb-approx",
            other => other.name(),
        }
    }
}

/// Everything needed to instantiate a channel policy for one run.
#[derive(Debug, Clone, Copy)]
pub struct PolicySetup {
    pub params: PolicyParams,
    pub dim: usize,
    pub horizon: u64,
    pub num_sources: usize,
    pub arrival_rate: f64,
    /// Threshold test per pair instead of on the most urgent source.
    pub per_pair_threshold: bool,
}

/// `None` for the oracle, which is not a learning policy.
pub fn build_channel_policy(
    kind: ChannelPolicyKind,
    setup: &PolicySetup,
) -> Option<Box<dyn ChannelPolicy>> {
    let linear = |base, age| -> Box<dyn ChannelPolicy> {
        Box::new(LinearBandit {
            state: BanditState::new(setup.dim),
            params: setup.params,
            base,
            age,
            last_exploited: false,
        })
    };
    let age = AgeRule {
        num_sources: setup.num_sources,
        arrival_rate: setup.arrival_rate,
        per_pair: setup.per_pair_threshold,
    };
    Some(match kind {
        ChannelPolicyKind::Oracle => return None,
        ChannelPolicyKind::Random => Box::new(RandomChannels),
        ChannelPolicyKind::LinUcb => linear(BaseRule::Ucb, None),
        ChannelPolicyKind::LinTs => linear(BaseRule::Ts, None),
        ChannelPolicyKind::AdUcb => linear(BaseRule::Ucb, Some(age)),
        ChannelPolicyKind::AdTs => linear(BaseRule::Ts, Some(age)),
        ChannelPolicyKind::SupLinUcb => {
            Box::new(SupLinUcb::new(setup.dim, setup.horizon, setup.params))
        }
        ChannelPolicyKind::EpsGreedy => Box::new(EpsGreedy {
            state: BanditState::new(setup.dim),
            params: setup.params,
        }),
    })
}

#[derive(Debug, Clone, Copy)]
struct AgeRule {
    num_sources: usize,
    arrival_rate: f64,
    per_pair: bool,
}

/// LinUCB / LinTS, optionally age-dependent.
#[derive(Debug, Clone)]
pub struct LinearBandit {
    state: BanditState,
    params: PolicyParams,
    base: BaseRule,
    age: Option<AgeRule>,
    last_exploited: bool,
}

impl LinearBandit {
    pub fn state(&self) -> &BanditState {
        &self.state
    }
}

impl ChannelPolicy for LinearBandit {
    fn select(&mut self, req: &ChannelRequest<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let Some(age) = self.age else {
            self.last_exploited = false;
            return base_select(
                &self.state,
                req.features,
                &self.params,
                self.base,
                req.count,
                rng,
            );
        };
        if !age.per_pair || req.urgencies.len() <= 1 {
            let urgency = req.urgencies.iter().copied().max().unwrap_or(0) as f64;
            let choice = ad_select(
                &self.state,
                req.features,
                &self.params,
                urgency,
                age.num_sources,
                age.arrival_rate,
                self.base,
                req.count,
                rng,
            )?;
            self.last_exploited = choice.exploited;
            return Ok(choice.channels);
        }

        // Per-pair test: each pair draws its channel from the exploit or the
        // bandit ranking, skipping channels already taken.
        let n = req.features.num_channels();
        let est = estimate_scores(&self.state, req.features);
        let est_max = est.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = age_threshold(age.num_sources, age.arrival_rate, est_max);
        let exploit_rank = top_k_desc(&est, n);
        let mut bandit_rank: Option<Vec<usize>> = None;
        let mut taken = vec![false; n];
        let mut out = Vec::with_capacity(req.count);
        self.last_exploited = false;
        for i in 0..req.count.min(n) {
            let urgency = req.urgencies.get(i).copied().unwrap_or(0) as f64;
            let exploit = threshold.is_some_and(|th| urgency > th);
            let rank = if exploit {
                self.last_exploited = true;
                &exploit_rank
            } else {
                if bandit_rank.is_none() {
                    bandit_rank = Some(base_select(
                        &self.state,
                        req.features,
                        &self.params,
                        self.base,
                        n,
                        rng,
                    )?);
                }
                bandit_rank.as_ref().unwrap()
            };
            let ch = *rank
                .iter()
                .find(|&&c| !taken[c])
                .expect("fewer pairs than channels");
            taken[ch] = true;
            out.push(ch);
        }
        Ok(out)
    }

    fn observe(&mut self, _channel: usize, x: &[f64], reward: bool) -> Result<()> {
        self.state.update(x, reward)
    }

    fn last_exploited(&self) -> bool {
        self.last_exploited
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomChannels;

impl ChannelPolicy for RandomChannels {
    fn select(&mut self, req: &ChannelRequest<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let n = req.features.num_channels();
        Ok(rand::seq::index::sample(rng, n, req.count.min(n)).into_vec())
    }

    fn observe(&mut self, _channel: usize, _x: &[f64], _reward: bool) -> Result<()> {
        Ok(())
    }
}

/// Greedy on the projected estimate, uniformly random ranking with a fixed
/// probability every slot. Keeps making sub-optimal choices forever.
#[derive(Debug, Clone)]
pub struct EpsGreedy {
    state: BanditState,
    params: PolicyParams,
}

impl ChannelPolicy for EpsGreedy {
    fn select(&mut self, req: &ChannelRequest<'_>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let n = req.features.num_channels();
        let k = req.count.min(n);
        if rng.random::<f64>() < self.params.explore {
            return Ok(rand::seq::index::sample(rng, n, k).into_vec());
        }
        let scores: Vec<f64> = estimate_scores(&self.state, req.features)
            .into_iter()
            .map(|s| self.params.project(s))
            .collect();
        Ok(top_k_desc(&scores, k))
    }

    fn observe(&mut self, _channel: usize, x: &[f64], reward: bool) -> Result<()> {
        self.state.update(x, reward)
    }
}

// ---------------------------------------------------------------------------
// SupLinUCB
// ---------------------------------------------------------------------------

/// Outcome of one staged selection.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedChoice {
    pub channel: usize,
    /// Stage (1-based) the observation is credited to; `None` when the
    /// selection came from the final exploit step.
    pub stage: Option<usize>,
    /// Width of the chosen channel at the deciding stage.
    pub width: f64,
    /// Width threshold `2^-s` of the deciding stage.
    pub threshold: f64,
}

/// Standard stage-based SupLinUCB with `ceil(ln T)` independent ridge
/// estimators. Only observations credited to a stage update that stage.
#[derive(Debug, Clone)]
pub struct SupLinUcb {
    stages: Vec<BanditState>,
    params: PolicyParams,
    horizon: u64,
    pending: Vec<(usize, Option<usize>)>,
}

impl SupLinUcb {
    pub fn new(dim: usize, horizon: u64, params: PolicyParams) -> Self {
        let num_stages = ((horizon.max(2) as f64).ln().ceil() as usize).max(1);
        Self {
            stages: vec![BanditState::new(dim); num_stages],
            params,
            horizon,
            pending: Vec::new(),
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, s: usize) -> &BanditState {
        &self.stages[s - 1]
    }

    /// Width and projected UCB of channel `n` at stage `s` (1-based).
    pub fn stage_score(&self, s: usize, x: &[f64]) -> (f64, f64) {
        let st = &self.stages[s - 1];
        let width = self.params.alpha * st.a_inv.quad_form(x).max(0.0).sqrt();
        let mean = dot(&st.theta(), x);
        (width, self.params.project(mean + width))
    }

    /// One staged pass over `candidates`.
    pub fn select_one(&self, features: &Features, candidates: &[usize]) -> StagedChoice {
        assert!(!candidates.is_empty());
        let floor = 1.0 / (self.horizon as f64).sqrt();
        let mut active: Vec<usize> = candidates.to_vec();
        for s in 1..=self.stages.len() {
            let threshold = 0.5f64.powi(s as i32);
            let scored: Vec<(usize, f64, f64)> = active
                .iter()
                .map(|&n| {
                    let (w, u) = self.stage_score(s, features.row(n));
                    (n, w, u)
                })
                .collect();
            if scored.iter().all(|&(_, w, _)| w <= floor) {
                let best = argmax_ucb(&scored);
                return StagedChoice {
                    channel: best.0,
                    stage: None,
                    width: best.1,
                    threshold,
                };
            }
            if let Some(&(n, w, _)) = scored.iter().find(|&&(_, w, _)| w > threshold) {
                return StagedChoice {
                    channel: n,
                    stage: Some(s),
                    width: w,
                    threshold,
                };
            }
            let top = scored.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
            active = scored
                .iter()
                .filter(|&&(_, _, u)| u >= top - 2.0 * threshold)
                .map(|e| e.0)
                .collect();
        }
        // Ran out of stages: exploit on the last stage.
        let s = self.stages.len();
        let scored: Vec<(usize, f64, f64)> = active
            .iter()
            .map(|&n| {
                let (w, u) = self.stage_score(s, features.row(n));
                (n, w, u)
            })
            .collect();
        let best = argmax_ucb(&scored);
        StagedChoice {
            channel: best.0,
            stage: None,
            width: best.1,
            threshold: 0.5f64.powi(s as i32),
        }
    }

    /// Top-`k` by repeated staged selection with removal.
    pub fn select_staged(&self, features: &Features, k: usize) -> Vec<StagedChoice> {
        let mut remaining: Vec<usize> = (0..features.num_channels()).collect();
        let mut out = Vec::with_capacity(k);
        while out.len() < k && !remaining.is_empty() {
            let choice = self.select_one(features, &remaining);
            remaining.retain(|&n| n != choice.channel);
            out.push(choice);
        }
        out
    }
}

fn argmax_ucb(scored: &[(usize, f64, f64)]) -> (usize, f64, f64) {
    let mut best = scored[0];
    for &e in &scored[1..] {
        if e.2 > best.2 {
            best = e;
        }
    }
    best
}

impl ChannelPolicy for SupLinUcb {
    fn select(&mut self, req: &ChannelRequest<'_>, _rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let choices = self.select_staged(req.features, req.count);
        self.pending = choices.iter().map(|c| (c.channel, c.stage)).collect();
        Ok(choices.into_iter().map(|c| c.channel).collect())
    }

    fn observe(&mut self, channel: usize, x: &[f64], reward: bool) -> Result<()> {
        let stage = self
            .pending
            .iter()
            .find(|(c, _)| *c == channel)
            .ok_or_else(|| {
                Error::Contract(format!("observation for unselected channel {channel}"))
            })?
            .1;
        match stage {
            Some(s) => self.stages[s - 1].update(x, reward),
            None => Ok(()),
        }
    }
}
