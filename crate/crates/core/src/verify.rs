//! Self-check battery run by `aoi verify`.
//!
//! Each check returns a pass/fail outcome with a one-line detail. The checks
//! are independent and can be filtered by name.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::SimConfig;
use crate::envmodel::{top_k_desc, ChannelModel, Features};
use crate::error::{Error, Result};
use crate::experiment::run_experiment;
use crate::linalg::{cholesky_lower, rank_one_update, spd_inverse, Mat};
use crate::metrics::RatioVerdict;
use crate::policies::{
    ad_select, age_threshold, estimate_scores, lints_scores, linucb_scores, BanditState, BaseRule,
    ChannelPolicyKind, PolicyParams,
};
use crate::stochastic::{bernoulli, DistSpec, Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Coupling,
    ShermanMorrison,
    Cholesky,
    Moments,
    RegretRatio,
    AdEquivalence,
    Projection,
}

impl Check {
    pub const ALL: [Check; 7] = [
        Check::Coupling,
        Check::ShermanMorrison,
        Check::Cholesky,
        Check::Moments,
        Check::RegretRatio,
        Check::AdEquivalence,
        Check::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Coupling => "coupling",
            Check::ShermanMorrison => "sherman_morrison",
            Check::Cholesky => "cholesky",
            Check::Moments => "moments",
            Check::RegretRatio => "regret_ratio",
            Check::AdEquivalence => "ad_equivalence",
            Check::Projection => "projection",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name.replace('-', "_"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<16} {}", self.check.name(), self.detail)
    }
}

/// Number of random updates in the Sherman-Morrison chain check.
pub const SM_UPDATES: usize = 10_000;
/// Draws per distribution in the moment check.
pub const MOMENT_DRAWS: usize = 1_000_000;

/// Runs the selected checks. Simulation checks use the horizon, round count,
/// seed and worker count of `cfg`.
pub fn run_checks(cfg: &SimConfig, checks: &[Check]) -> Result<Vec<Outcome>> {
    checks
        .iter()
        .map(|&check| {
            let (passed, detail) = match check {
                Check::Coupling => coupling(cfg)?,
                Check::ShermanMorrison => sherman_morrison(cfg.seed)?,
                Check::Cholesky => cholesky(cfg.seed)?,
                Check::Moments => moments(&ChannelModel::table1(), cfg.seed)?,
                Check::RegretRatio => regret_ratio(cfg)?,
                Check::AdEquivalence => ad_equivalence(cfg.seed)?,
                Check::Projection => projection(cfg)?,
            };
            Ok(Outcome {
                check,
                passed,
                detail,
            })
        })
        .collect()
}

fn check_rng(seed: u64, label: &str) -> ChaCha8Rng {
    RngStream::new(seed, 0, Purpose::policy(&format!("verify/{label}"))).at(0)
}

/// Per-slot AoI dominance over the shadow run for LinUCB and random channels.
fn coupling(cfg: &SimConfig) -> Result<(bool, String)> {
    let mut c = cfg.clone();
    c.num_pairs = 1;
    c.uncoupled = false;
    c.dump_traces = false;
    c.channel_policies = vec![ChannelPolicyKind::LinUcb, ChannelPolicyKind::Random];
    let m = run_experiment(&c)?;
    let violations: u64 = m.policies.iter().map(|p| p.dominance_violations).sum();
    let min_gap = m
        .policies
        .iter()
        .map(|p| p.min_shadow_gap)
        .min()
        .unwrap_or(0);
    Ok((
        violations == 0 && min_gap >= 0,
        format!(
            "{violations} dominance violations over {} rounds x {} slots (min shadow gap {min_gap})",
            c.rounds, c.horizon
        ),
    ))
}

fn sherman_morrison(seed: u64) -> Result<(bool, String)> {
    let mut rng = check_rng(seed, "sherman_morrison");
    let d = 3;
    let mut a = Mat::identity(d);
    let mut a_inv = Mat::identity(d);
    let mut worst: f64 = 0.0;
    for i in 1..=SM_UPDATES {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        a.add_outer(&x);
        a_inv = rank_one_update(&a_inv, &x)?;
        if i % 1000 == 0 {
            worst = worst.max(a_inv.max_abs_diff(&spd_inverse(&a)?));
        }
    }
    Ok((
        worst < 1e-8,
        format!("max |A^-1 - inv(A)| = {worst:.3e} after {SM_UPDATES} updates (tol 1e-8)"),
    ))
}

fn cholesky(seed: u64) -> Result<(bool, String)> {
    let mut rng = check_rng(seed, "cholesky");
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let d = 1 + trial % 16;
        let mut a = Mat::identity(d);
        for _ in 0..d {
            let col: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            a.add_outer(&col);
        }
        let l = cholesky_lower(&a)?;
        worst = worst.max(l.mul(&l.transpose()).max_abs_diff(&a));
    }
    Ok((
        worst < 1e-10,
        format!("max |LL^T - A| = {worst:.3e} over 200 matrices (tol 1e-10)"),
    ))
}

/// Sample mean and variance of every context and noise distribution of the
/// model against their closed forms, 1% relative. Zero-mean distributions are
/// compared against their standard deviation instead.
fn moments(model: &ChannelModel, seed: u64) -> Result<(bool, String)> {
    let mut dists: Vec<DistSpec> = model.contexts().iter().flatten().copied().collect();
    if let crate::envmodel::Truth::Linear { noise, .. } = model.truth() {
        dists.push(*noise);
    }
    let mut worst: f64 = 0.0;
    for (i, d) in dists.iter().enumerate() {
        let (mean, var) = sample_moments(
            d,
            MOMENT_DRAWS,
            &mut check_rng(seed, &format!("moments/{i}")),
        )?;
        let scale = d.mean().abs().max(d.variance().sqrt());
        let mean_err = if scale > 0.0 {
            (mean - d.mean()).abs() / scale
        } else {
            (mean - d.mean()).abs()
        };
        let var_err = if d.variance() > 0.0 {
            (var - d.variance()).abs() / d.variance()
        } else {
            var.abs()
        };
        worst = worst.max(mean_err).max(var_err);
    }
    Ok((
        worst < 0.01,
        format!(
            "{} distributions, worst relative moment error {:.3e} (tol 1e-2)",
            dists.len(),
            worst
        ),
    ))
}

/// Welford mean and unbiased variance of `n` draws.
pub fn sample_moments(d: &DistSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    d.validate()?;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 1..=n {
        let x = d.draw(rng);
        let delta = x - mean;
        mean += delta / i as f64;
        m2 += delta * (x - mean);
    }
    Ok((mean, if n > 1 { m2 / (n - 1) as f64 } else { 0.0 }))
}

/// Ratio `R / K` of an epsilon-greedy policy on the fixed-gap instance.
fn regret_ratio(cfg: &SimConfig) -> Result<(bool, String)> {
    let mut c = SimConfig::preset("fixed_gap").expect("fixed_gap preset");
    c.horizon = cfg.horizon;
    c.rounds = cfg.rounds;
    c.seed = cfg.seed;
    c.workers = cfg.workers;
    c.skip_projection = cfg.skip_projection;
    let m = run_experiment(&c)?;
    let p = m
        .policy(ChannelPolicyKind::EpsGreedy)
        .expect("epsgreedy configured");
    Ok((
        p.ratio.verdict == RatioVerdict::Pass,
        format!(
            "R/K in [{:.4}, {:.4}], median {:.4}, factor-2 band over t in [T/10, T]",
            p.ratio.band_min, p.ratio.band_max, p.ratio.median
        ),
    ))
}

/// Trains a few estimators on Table I data and returns them with a feature
/// matrix for the next slot.
fn trained_states(seed: u64, count: usize) -> Result<Vec<(BanditState, Features)>> {
    let model = ChannelModel::table1();
    let contexts = RngStream::new(seed, 1, Purpose::Contexts);
    let noise = RngStream::new(seed, 1, Purpose::Noise);
    let mut rng = check_rng(seed, "trained_states");
    let mut state = BanditState::new(model.feature_dim());
    let mut out = Vec::with_capacity(count);
    let mut t = 0u64;
    for _ in 0..count {
        let updates = rng.random_range(0..40);
        for _ in 0..updates {
            t += 1;
            let slot = model.generate_slot(t, &contexts, &noise);
            let n = rng.random_range(0..slot.num_channels());
            let reward = bernoulli(slot.mu_true()[n], &mut rng)?;
            state.update(slot.features().row(n), reward)?;
        }
        t += 1;
        out.push((
            state.clone(),
            model.generate_slot(t, &contexts, &noise).features().clone(),
        ));
    }
    Ok(out)
}

/// Below the age threshold the AD rule picks what its base rule picks (with
/// the same random draws); above it, the top estimates.
fn ad_equivalence(seed: u64) -> Result<(bool, String)> {
    let params = PolicyParams::for_horizon(10_000, 5);
    let (m, lambda) = (20, 0.5);
    let mut mismatches = 0;
    let mut cases = 0;
    let mut exploit_cases = 0;
    for (i, (state, features)) in trained_states(seed, 100)?.into_iter().enumerate() {
        let est = estimate_scores(&state, &features);
        let est_max = est.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = age_threshold(m, lambda, est_max);
        for base in [BaseRule::Ucb, BaseRule::Ts] {
            for k in 1..=3 {
                let rng_seed = seed ^ ((i as u64) << 8 | k as u64);
                let low = threshold.map_or(1e9, |th| th.floor());
                let high = threshold.map(|th| th.floor() + 1.0);
                let mut ad_rng = check_rng(rng_seed, "ad");
                let choice = ad_select(
                    &state,
                    &features,
                    &params,
                    low,
                    m,
                    lambda,
                    base,
                    k,
                    &mut ad_rng,
                )?;
                let mut base_rng = check_rng(rng_seed, "ad");
                let scores = match base {
                    BaseRule::Ucb => linucb_scores(&state, &features, &params),
                    BaseRule::Ts => lints_scores(&state, &features, &params, &mut base_rng)?,
                };
                cases += 1;
                if choice.exploited || choice.channels != top_k_desc(&scores, k) {
                    mismatches += 1;
                }
                if let Some(high) = high {
                    let choice = ad_select(
                        &state,
                        &features,
                        &params,
                        high,
                        m,
                        lambda,
                        base,
                        k,
                        &mut ad_rng,
                    )?;
                    cases += 1;
                    exploit_cases += 1;
                    if !choice.exploited || choice.channels != top_k_desc(&est, k) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches in {cases} cases ({exploit_cases} above threshold)"),
    ))
}

/// UCB and TS scores must lie in `[0, 1]`.
fn projection(cfg: &SimConfig) -> Result<(bool, String)> {
    let mut c = cfg.clone();
    c.channel_model = ChannelModel::table1();
    let params = c.effective_params();
    let mut outside = 0;
    let mut total = 0;
    let mut extreme: f64 = 0.0;
    for (i, (state, features)) in trained_states(cfg.seed, 50)?.into_iter().enumerate() {
        let mut rng = check_rng(cfg.seed ^ i as u64, "projection");
        let mut scores = linucb_scores(&state, &features, &params);
        scores.extend(lints_scores(&state, &features, &params, &mut rng)?);
        for s in scores {
            total += 1;
            if !(0.0..=1.0).contains(&s) {
                outside += 1;
                extreme = extreme.max(if s > 1.0 { s - 1.0 } else { -s });
            }
        }
    }
    if total == 0 {
        return Err(Error::Contract("projection check scored nothing".into()));
    }
    Ok((
        outside == 0,
        format!("{outside} of {total} scores outside [0, 1] (largest excursion {extreme:.3e})"),
    ))
}
