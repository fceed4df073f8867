//! Ground-truth channel models.
//!
//! A [`ChannelModel`] draws per-slot side information for every channel,
//! derives the hidden success probability `mu`, and exposes the learner-facing
//! feature rows. Policies only ever see [`Features`]; `mu` stays inside
//! [`SlotContext`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, MAX_DIM};
use crate::stochastic::{DistSpec, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `phi(x) = x`.
    #[default]
    Raw,
    /// `phi(x) = (1, x)`.
    AffineBias,
}

impl FeatureMap {
    pub fn output_dim(self, ctx_dim: usize) -> usize {
        match self {
            FeatureMap::Raw => ctx_dim,
            FeatureMap::AffineBias => ctx_dim + 1,
        }
    }

    fn apply(self, raw: &[f64], out: &mut Vec<f64>) {
        if self == FeatureMap::AffineBias {
            out.push(1.0);
        }
        out.extend_from_slice(raw);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Truth {
    /// `mu = phi(b)^T theta + noise`, clamped to `[0, 1]`.
    Linear { theta: Vec<f64>, noise: DistSpec },
    /// `mu = 1 - exp(-(gamma + offset))` where `gamma` is the first context
    /// dimension (SNR in dB).
    NonLinearSnr { offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    contexts: Vec<Vec<DistSpec>>,
    truth: Truth,
    feature_map: FeatureMap,
}

impl ChannelModel {
    /// `contexts[n][k]` is the distribution of dimension `k` for channel `n`.
    pub fn new(
        contexts: Vec<Vec<DistSpec>>,
        truth: Truth,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        let n = contexts.len();
        if n == 0 {
            return Err(Error::validation(
                "channel_model.contexts",
                "at least one channel required",
            ));
        }
        let ctx_dim = contexts[0].len();
        if ctx_dim == 0 {
            return Err(Error::validation(
                "channel_model.contexts",
                "context dimension must be >= 1",
            ));
        }
        for (i, row) in contexts.iter().enumerate() {
            if row.len() != ctx_dim {
                return Err(Error::validation(
                    "channel_model.contexts",
                    format!(
                        "channel {i} has {} dimensions, expected {ctx_dim}",
                        row.len()
                    ),
                ));
            }
            for spec in row {
                spec.validate()?;
            }
        }
        let d = feature_map.output_dim(ctx_dim);
        if d > MAX_DIM {
            return Err(Error::validation(
                "channel_model.feature_map",
                format!("feature dimension {d} exceeds {MAX_DIM}"),
            ));
        }
        match &truth {
            Truth::Linear { theta, noise } => {
                if theta.len() != d {
                    return Err(Error::validation(
                        "channel_model.truth.theta",
                        format!(
                            "length {} does not match feature dimension {d}",
                            theta.len()
                        ),
                    ));
                }
                if theta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(
                        "channel_model.truth.theta",
                        "non-finite entry",
                    ));
                }
                noise.validate()?;
            }
            Truth::NonLinearSnr { offset } => {
                if !offset.is_finite() {
                    return Err(Error::validation(
                        "channel_model.truth.offset",
                        "must be finite",
                    ));
                }
                for (i, row) in contexts.iter().enumerate() {
                    let (lo, _) = row[0].support();
                    if lo < -offset {
                        return Err(Error::validation(
                            "channel_model.contexts",
                            format!(
                                "channel {i} SNR support starts at {lo} < -offset ({})",
                                -offset
                            ),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            contexts,
            truth,
            feature_map,
        })
    }

    /// The five-channel, three-dimension linear setup with
    /// `theta = [0.9, 0.1, 0.7]` and `U(-0.03, 0.03)` noise.
    pub fn table1() -> Self {
        use DistSpec::*;
        let beta = |k| ScaledBeta {
            k,
            alpha: 3.0,
            beta: 4.0,
        };
        let contexts = vec![
            vec![Impulse { a: 0.4 }, Impulse { a: 0.8 }, Impulse { a: 0.2 }],
            vec![
                Uniform { a: 0.0, b: 0.3 },
                Uniform { a: 0.0, b: 2.5 },
                Uniform { a: 0.0, b: 0.6 },
            ],
            vec![
                Triangle {
                    a: 0.0,
                    b: 0.3,
                    c: 0.15,
                },
                Triangle {
                    a: 0.0,
                    b: 2.4,
                    c: 1.2,
                },
                Triangle {
                    a: 0.0,
                    b: 0.6,
                    c: 0.3,
                },
            ],
            vec![
                TwoPoint {
                    p1: 0.3,
                    a1: 0.4,
                    p2: 0.7,
                    a2: 0.2,
                },
                TwoPoint {
                    p1: 0.3,
                    a1: 3.5,
                    p2: 0.7,
                    a2: 1.5,
                },
                TwoPoint {
                    p1: 0.3,
                    a1: 0.3,
                    p2: 0.7,
                    a2: 0.4,
                },
            ],
            vec![beta(0.5), beta(3.0), beta(0.2)],
        ];
        let truth = Truth::Linear {
            theta: vec![0.9, 0.1, 0.7],
            noise: Uniform { a: -0.03, b: 0.03 },
        };
        Self::new(contexts, truth, FeatureMap::Raw).expect("table1 preset is valid")
    }

    /// Five channels with SNR `gamma ~ U(-2, 6)` and
    /// `mu = 1 - exp(-(gamma + 2))`; the learner regresses on `(1, gamma)`.
    pub fn nonlinear_snr() -> Self {
        let contexts = vec![vec![DistSpec::Uniform { a: -2.0, b: 6.0 }]; 5];
        Self::new(
            contexts,
            Truth::NonLinearSnr { offset: 2.0 },
            FeatureMap::AffineBias,
        )
        .expect("nonlinear_snr preset is valid")
    }

    /// Two constant channels with success probabilities 0.9 and 0.5 and no
    /// noise: a fixed-gap instance.
    pub fn fixed_gap() -> Self {
        let contexts = vec![
            vec![DistSpec::Impulse { a: 0.9 }],
            vec![DistSpec::Impulse { a: 0.5 }],
        ];
        let truth = Truth::Linear {
            theta: vec![1.0],
            noise: DistSpec::Impulse { a: 0.0 },
        };
        Self::new(contexts, truth, FeatureMap::Raw).expect("fixed_gap preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table1" => Some(Self::table1()),
            "nonlinear_snr" => Some(Self::nonlinear_snr()),
            "fixed_gap" => Some(Self::fixed_gap()),
            _ => None,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.contexts.len()
    }

    pub fn ctx_dim(&self) -> usize {
        self.contexts[0].len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_map.output_dim(self.ctx_dim())
    }

    pub fn contexts(&self) -> &[Vec<DistSpec>] {
        &self.contexts
    }

    pub fn truth(&self) -> &Truth {
        &self.truth
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    /// Maps raw context to `(mu, clamped)` given a noise draw. `mu` is clamped
    /// to `[0, 1]`.
    pub fn success_probability(&self, raw: &[f64], noise: f64) -> (f64, bool) {
        let mu = match &self.truth {
            Truth::Linear { theta, .. } => {
                let mut phi = Vec::with_capacity(theta.len());
                self.feature_map.apply(raw, &mut phi);
                dot(&phi, theta) + noise
            }
            Truth::NonLinearSnr { offset } => 1.0 - (-(raw[0] + offset)).exp(),
        };
        let clamped = mu.clamp(0.0, 1.0);
        (clamped, clamped != mu)
    }

    /// Draws slot `t` from the context and noise streams.
    pub fn generate_slot(&self, t: u64, contexts: &RngStream, noise: &RngStream) -> SlotContext {
        let n = self.num_channels();
        let ctx_dim = self.ctx_dim();
        let d = self.feature_dim();
        let mut ctx_rng = contexts.at(t);
        let mut noise_rng = noise.at(t);
        let mut raw = Vec::with_capacity(n * ctx_dim);
        let mut features = Vec::with_capacity(n * d);
        let mut mu = Vec::with_capacity(n);
        let mut clamped = 0;
        for row in &self.contexts {
            let start = raw.len();
            for spec in row {
                raw.push(spec.draw(&mut ctx_rng));
            }
            let eps = match &self.truth {
                Truth::Linear { noise, .. } => noise.draw(&mut noise_rng),
                Truth::NonLinearSnr { .. } => 0.0,
            };
            let (m, c) = self.success_probability(&raw[start..], eps);
            mu.push(m);
            clamped += c as usize;
            self.feature_map.apply(&raw[start..], &mut features);
        }
        SlotContext {
            raw,
            ctx_dim,
            features: Features {
                n,
                d,
                data: features,
            },
            mu_true: mu,
            clamped,
        }
    }
}

/// Learner-visible feature rows, one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * d, "feature buffer has wrong length");
        Self { n, d, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), d, data)
    }

    pub fn num_channels(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.d..(n + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }
}

/// Everything drawn for one slot. `mu_true` is hidden from policies.
#[derive(Debug, Clone)]
pub struct SlotContext {
    raw: Vec<f64>,
    ctx_dim: usize,
    features: Features,
    mu_true: Vec<f64>,
    clamped: usize,
}

impl SlotContext {
    /// Builds a context directly, for tests and hand-made scenarios.
    pub fn from_parts(features: Features, mu_true: Vec<f64>) -> Self {
        assert_eq!(features.num_channels(), mu_true.len());
        Self {
            raw: features.data.clone(),
            ctx_dim: features.dim(),
            features,
            mu_true,
            clamped: 0,
        }
    }

    pub fn raw(&self, n: usize) -> &[f64] {
        &self.raw[n * self.ctx_dim..(n + 1) * self.ctx_dim]
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn mu_true(&self) -> &[f64] {
        &self.mu_true
    }

    /// Number of channels whose `mu` hit the `[0, 1]` clamp this slot.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn num_channels(&self) -> usize {
        self.mu_true.len()
    }
}

/// Indices of the `p` largest values, ties broken by lowest index.
pub fn best_channels(mu: &[f64], p: usize) -> Vec<usize> {
    top_k_desc(mu, p)
}

/// Shared top-k rule: descending value, ascending index on ties.
pub(crate) fn top_k_desc(values: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(values.len());
    let mut out: Vec<usize> = Vec::with_capacity(k);
    // k and N are tiny; insertion keeps the first-seen index on ties.
    for (i, &v) in values.iter().enumerate() {
        let pos = out.iter().position(|&j| v > values[j]).unwrap_or(out.len());
        if pos < k {
            out.insert(pos, i);
            out.truncate(k);
        }
    }
    out
}

/// `(min over channels of mu, best minus runner-up)` for one slot.
pub(crate) fn slot_extremes(mu: &[f64]) -> (f64, Option<f64>) {
    let min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = if mu.len() >= 2 {
        let top = top_k_desc(mu, 2);
        Some(mu[top[0]] - mu[top[1]])
    } else {
        None
    };
    (min, gap)
}
