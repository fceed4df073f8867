//! Reductions from round traces to AoI, regret and sub-optimal-choice series.

use serde::Serialize;

use crate::envmodel::top_k_desc;
use crate::error::{Error, Result};
use crate::policies::ChannelPolicyKind;
use crate::simulator::{MuTable, RoundTrace, RunTrace};

/// Roughly `points` log-spaced slots in `[1, T]`, plus every power of ten and
/// `T` itself.
pub fn checkpoint_grid(horizon: u64, points: usize) -> Vec<u64> {
    let mut grid = Vec::with_capacity(points + 8);
    let points = points.max(2);
    let top = (horizon as f64).ln();
    for i in 0..points {
        let t = (top * i as f64 / (points - 1) as f64).exp().round() as u64;
        grid.push(t.clamp(1, horizon));
    }
    let mut decade = 10u64;
    while decade < horizon {
        grid.push(decade);
        decade *= 10;
    }
    grid.push(horizon);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// `(1 / (M t)) * sum_{s <= t} sum_m x_m(s)`.
pub fn aoi_average(run: &RunTrace, num_sources: usize, up_to: u64) -> f64 {
    let total: u64 = run.aoi_sum[..up_to as usize].iter().sum();
    total as f64 / (num_sources as f64 * up_to as f64)
}

/// Cumulative `R(t)`, indexed by `t - 1`.
pub fn regret_series(policy: &RunTrace, benchmark: &RunTrace) -> Vec<i64> {
    let mut acc = 0i64;
    policy
        .aoi_sum
        .iter()
        .zip(&benchmark.aoi_sum)
        .map(|(&a, &b)| {
            acc += a as i64 - b as i64;
            acc
        })
        .collect()
}

/// Per-slot `sum_m (x^pi_m(t) - x^shadow_m(t))`.
pub fn shadow_gap(policy: &RunTrace, shadow: &RunTrace) -> Vec<i64> {
    policy
        .aoi_sum
        .iter()
        .zip(&shadow.aoi_sum)
        .map(|(&a, &b)| a as i64 - b as i64)
        .collect()
}

/// Sub-optimal channels used in one slot: channels whose `mu` is strictly
/// below the `k`-th largest `mu`, with `k` the number of pairs scheduled.
pub fn suboptimal_in_slot(channels: impl Iterator<Item = usize> + Clone, mu: &[f64]) -> u64 {
    let k = channels.clone().count();
    if k == 0 {
        return 0;
    }
    let top = top_k_desc(mu, k);
    let kth = mu[*top.last().unwrap()];
    channels.filter(|&n| mu[n] < kth).count() as u64
}

/// Cumulative `K(t)`, indexed by `t - 1`. Idle slots add nothing.
pub fn suboptimal_count(run: &RunTrace, mu: &MuTable) -> Vec<u64> {
    let mut acc = 0;
    (1..=run.slots() as u64)
        .map(|t| {
            let pairs = run.decision(t);
            acc += suboptimal_in_slot(pairs.iter().map(|&(_, n)| n as usize), mu.at(t));
            acc
        })
        .collect()
}

/// Per-slot counts of real (case 1) and fake (case 2) sub-optimal choices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Classification {
    pub case1: Vec<u32>,
    pub case2: Vec<u32>,
}

/// Compares, for every source scheduled by both runs, the channel the policy
/// gave it against the benchmark's channel for the same source.
pub fn classify_suboptimality(
    run: &RunTrace,
    benchmark: &RunTrace,
    mu: &MuTable,
    num_pairs: usize,
) -> Result<Classification> {
    if num_pairs <= 1 {
        return Err(Error::validation(
            "num_pairs",
            "case classification needs more than one pair; use the sub-optimal count",
        ));
    }
    let slots = run.slots().min(benchmark.slots());
    let mut out = Classification {
        case1: Vec::with_capacity(slots),
        case2: Vec::with_capacity(slots),
    };
    for t in 1..=slots as u64 {
        let mu_t = mu.at(t);
        let star = benchmark.decision(t);
        let (mut c1, mut c2) = (0, 0);
        for &(m, n) in run.decision(t) {
            if let Some(&(_, n_star)) = star.iter().find(|&&(ms, _)| ms == m) {
                let (got, best) = (mu_t[n as usize], mu_t[n_star as usize]);
                if got < best {
                    c1 += 1;
                } else if got > best {
                    c2 += 1;
                }
            }
        }
        out.case1.push(c1);
        out.case2.push(c2);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioVerdict {
    Pass,
    Fail,
    NoSuboptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    /// `R(t) / max(1, K(t))` on the grid.
    pub ratio: Vec<f64>,
    pub verdict: RatioVerdict,
    /// Median of the ratio over the band window.
    pub median: f64,
    pub band_min: f64,
    pub band_max: f64,
}

/// Ratio series plus the band check: over `t in [T/10, T]` every ratio lies
/// within a factor 2 of the window median.
pub fn regret_count_ratio(t_grid: &[u64], regret: &[f64], k: &[f64]) -> RatioReport {
    assert_eq!(t_grid.len(), regret.len());
    assert_eq!(t_grid.len(), k.len());
    let ratio: Vec<f64> = regret
        .iter()
        .zip(k)
        .map(|(&r, &k)| if k > 0.0 { r / k.max(1.0) } else { 0.0 })
        .collect();
    let horizon = t_grid.last().copied().unwrap_or(0);
    let window: Vec<f64> = t_grid
        .iter()
        .zip(&ratio)
        .zip(k)
        .filter(|((&t, _), &k)| t * 10 >= horizon && k > 0.0)
        .map(|((_, &r), _)| r)
        .collect();
    if window.is_empty() {
        return RatioReport {
            ratio,
            verdict: RatioVerdict::NoSuboptimal,
            median: 0.0,
            band_min: 0.0,
            band_max: 0.0,
        };
    }
    let median = median(&window);
    let band_min = window.iter().copied().fold(f64::INFINITY, f64::min);
    let band_max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = median > 0.0 && band_min >= median / 2.0 && band_max <= median * 2.0;
    RatioReport {
        ratio,
        verdict: if pass {
            RatioVerdict::Pass
        } else {
            RatioVerdict::Fail
        },
        median,
        band_min,
        band_max,
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

// ---------------------------------------------------------------------------
// Per-round summaries and their reduction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRoundSummary {
    pub kind: ChannelPolicyKind,
    pub aoi: Vec<f64>,
    pub regret: Vec<f64>,
    pub k: Vec<f64>,
    pub case1: Vec<f64>,
    pub case2: Vec<f64>,
    pub dominance_violations: u64,
    pub disjointness_violations: u64,
    pub min_shadow_gap: i64,
    pub exploit_slots: u64,
    pub transmissions: u64,
}

/// One round reduced to the checkpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub benchmark_aoi: Vec<f64>,
    pub policies: Vec<PolicyRoundSummary>,
    pub clamped: u64,
    pub mu_draws: u64,
    pub min_mu: f64,
    pub min_gap: f64,
}

pub fn summarize_round(trace: &RoundTrace, grid: &[u64]) -> RoundSummary {
    let m = trace.num_sources;
    let at_grid =
        |series: &[f64]| -> Vec<f64> { grid.iter().map(|&t| series[(t - 1) as usize]).collect() };
    let cumulative = |v: &[u32]| -> Vec<f64> {
        let mut acc = 0u64;
        v.iter()
            .map(|&x| {
                acc += x as u64;
                acc as f64
            })
            .collect()
    };

    let policies = trace
        .policies
        .iter()
        .map(|p| {
            let regret: Vec<f64> = regret_series(&p.run, &trace.benchmark)
                .into_iter()
                .map(|r| r as f64)
                .collect();
            let k: Vec<f64> = suboptimal_count(&p.run, &trace.mu)
                .into_iter()
                .map(|k| k as f64)
                .collect();
            let (case1, case2) = if trace.num_pairs > 1 && trace.benchmark_mu.is_none() {
                let c =
                    classify_suboptimality(&p.run, &trace.benchmark, &trace.mu, trace.num_pairs)
                        .expect("num_pairs > 1");
                (
                    at_grid(&cumulative(&c.case1)),
                    at_grid(&cumulative(&c.case2)),
                )
            } else {
                (vec![0.0; grid.len()], vec![0.0; grid.len()])
            };
            let transmissions = (1..=p.run.slots() as u64)
                .map(|t| p.run.decision(t).len() as u64)
                .sum();
            PolicyRoundSummary {
                kind: p.kind,
                aoi: grid.iter().map(|&t| aoi_average(&p.run, m, t)).collect(),
                regret: at_grid(&regret),
                k: at_grid(&k),
                case1,
                case2,
                dominance_violations: p.dominance_violations,
                disjointness_violations: p.run.disjointness_violations(),
                min_shadow_gap: shadow_gap(&p.run, &p.shadow).into_iter().min().unwrap_or(0),
                exploit_slots: p.exploit_slots,
                transmissions,
            }
        })
        .collect();

    RoundSummary {
        round: trace.round,
        benchmark_aoi: grid
            .iter()
            .map(|&t| aoi_average(&trace.benchmark, m, t))
            .collect(),
        policies,
        clamped: trace.clamped,
        mu_draws: trace.horizon * trace.mu.at(1).len() as u64,
        min_mu: trace.min_mu,
        min_gap: trace.min_gap,
    }
}

/// Mean and standard error across rounds, per checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl Series {
    /// Rounds are folded in the given order so the result does not depend on
    /// which worker finished first.
    pub fn from_rounds<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let n = rows.clone().count();
        let len = rows.clone().next().map_or(0, <[f64]>::len);
        let mut mean = vec![0.0; len];
        for row in rows.clone() {
            for (acc, &x) in mean.iter_mut().zip(row) {
                *acc += x;
            }
        }
        for v in mean.iter_mut() {
            *v /= n as f64;
        }
        let mut stderr = vec![0.0; len];
        if n > 1 {
            for row in rows {
                for ((acc, &x), &mu) in stderr.iter_mut().zip(row).zip(&mean) {
                    *acc += (x - mu).powi(2);
                }
            }
            for v in stderr.iter_mut() {
                *v = (*v / (n - 1) as f64).sqrt() / (n as f64).sqrt();
            }
        }
        Self { mean, stderr }
    }

    pub fn last_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn last_stderr(&self) -> f64 {
        self.stderr.last().copied().unwrap_or(0.0)
    }

    pub fn at(&self, grid: &[u64], t: u64) -> Option<(f64, f64)> {
        let i = grid.iter().position(|&g| g == t)?;
        Some((self.mean[i], self.stderr[i]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyMetrics {
    pub kind: ChannelPolicyKind,
    pub label: String,
    pub aoi: Series,
    pub regret: Series,
    pub k: Series,
    pub case1: Series,
    pub case2: Series,
    pub ratio: RatioReport,
    pub dominance_violations: u64,
    pub disjointness_violations: u64,
    pub min_shadow_gap: i64,
    pub exploit_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub t_grid: Vec<u64>,
    pub rounds: usize,
    pub num_pairs: usize,
    pub benchmark_aoi: Series,
    pub policies: Vec<PolicyMetrics>,
    pub clamp_fraction: f64,
    pub min_mu_seen: f64,
    pub min_gap_seen: f64,
}

impl RunMetrics {
    pub fn policy(&self, kind: ChannelPolicyKind) -> Option<&PolicyMetrics> {
        self.policies.iter().find(|p| p.kind == kind)
    }
}

/// Reduces round summaries (in round order) into run metrics.
pub fn reduce(grid: &[u64], num_pairs: usize, rounds: &[RoundSummary]) -> RunMetrics {
    assert!(!rounds.is_empty(), "at least one round required");
    let num_policies = rounds[0].policies.len();
    let policies = (0..num_policies)
        .map(|i| {
            let rows = |f: fn(&PolicyRoundSummary) -> &Vec<f64>| {
                Series::from_rounds(rounds.iter().map(move |r| f(&r.policies[i]).as_slice()))
            };
            let regret = rows(|p| &p.regret);
            let k = rows(|p| &p.k);
            let ratio = regret_count_ratio(grid, &regret.mean, &k.mean);
            let first = &rounds[0].policies[i];
            let exploit: u64 = rounds.iter().map(|r| r.policies[i].exploit_slots).sum();
            let tx: u64 = rounds.iter().map(|r| r.policies[i].transmissions).sum();
            PolicyMetrics {
                kind: first.kind,
                label: first.kind.label().to_string(),
                aoi: rows(|p| &p.aoi),
                regret,
                k,
                case1: rows(|p| &p.case1),
                case2: rows(|p| &p.case2),
                ratio,
                dominance_violations: rounds
                    .iter()
                    .map(|r| r.policies[i].dominance_violations)
                    .sum(),
                disjointness_violations: rounds
                    .iter()
                    .map(|r| r.policies[i].disjointness_violations)
                    .sum(),
                min_shadow_gap: rounds
                    .iter()
                    .map(|r| r.policies[i].min_shadow_gap)
                    .min()
                    .unwrap_or(0),
                exploit_fraction: if tx == 0 {
                    0.0
                } else {
                    exploit as f64 / tx as f64
                },
            }
        })
        .collect();
    let clamped: u64 = rounds.iter().map(|r| r.clamped).sum();
    let draws: u64 = rounds.iter().map(|r| r.mu_draws).sum();
    RunMetrics {
        t_grid: grid.to_vec(),
        rounds: rounds.len(),
        num_pairs,
        benchmark_aoi: Series::from_rounds(rounds.iter().map(|r| r.benchmark_aoi.as_slice())),
        policies,
        clamp_fraction: if draws == 0 {
            0.0
        } else {
            clamped as f64 / draws as f64
        },
        min_mu_seen: rounds
            .iter()
            .map(|r| r.min_mu)
            .fold(f64::INFINITY, f64::min),
        min_gap_seen: rounds
            .iter()
            .map(|r| r.min_gap)
            .fold(f64::INFINITY, f64::min),
    }
}
