//! Seeded random streams and the sampling distributions used by the channel
//! models.
//!
//! Every stream is keyed by `(master_seed, round, purpose)` and indexed by slot:
//! [`RngStream::at`] returns a fresh generator for slot `t` without touching any
//! other slot. Rounds can therefore run on any thread in any order, and several
//! coupled runs can replay the same slot draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a stream is used for. Distinct purposes give independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Arrivals,
    Contexts,
    Noise,
    Coupling,
    /// Policy-internal randomness, keyed by a per-policy tag.
    Policy(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Arrivals => 1,
            Purpose::Contexts => 2,
            Purpose::Noise => 3,
            Purpose::Coupling => 4,
            Purpose::Policy(tag) => splitmix64(0x5010_c1e5 ^ tag),
        }
    }

    /// Stable policy tag derived from a policy label (FNV-1a).
    pub fn policy(label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in label.bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Purpose::Policy(h)
    }
}

/// Counter-style random stream: one key per `(seed, round, purpose)`, one
/// ChaCha stream per slot.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u8; 32],
    round: u64,
    purpose: Purpose,
}

impl RngStream {
    pub fn new(master_seed: u64, round: u64, purpose: Purpose) -> Self {
        let mut state = master_seed ^ 0x9e37_79b9_7f4a_7c15;
        let mut key = [0u8; 32];
        let words = [
            splitmix64_next(&mut state),
            splitmix64_next(&mut state) ^ splitmix64(round),
            splitmix64_next(&mut state) ^ splitmix64(purpose.tag()),
            splitmix64_next(&mut state) ^ splitmix64(round.rotate_left(32) ^ purpose.tag()),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Self {
            key,
            round,
            purpose,
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    /// Generator for slot `t`. Calling twice with the same `t` replays the
    /// same draws.
    pub fn at(&self, t: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(t);
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    splitmix64_next(&mut x)
}

fn splitmix64_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The slot's shared uniform `U(t)` used by the coupled channels.
pub fn coupling_uniform(stream: &RngStream, t: u64) -> f64 {
    stream.at(t).random::<f64>()
}

pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidSpec(format!(
            "bernoulli probability {p} outside [0, 1]"
        )));
    }
    Ok(rng.random::<f64>() < p)
}

/// One-dimensional distribution for channel side information and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    /// Point mass at `a`.
    Impulse {
        a: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    /// Triangle on `[a, b]` with mode `c`.
    Triangle {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `a1` with probability `p1`, `a2` with probability `p2`.
    TwoPoint {
        p1: f64,
        a1: f64,
        p2: f64,
        a2: f64,
    },
    /// `k * Beta(alpha, beta)`.
    ScaledBeta {
        k: f64,
        alpha: f64,
        beta: f64,
    },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match *self {
            DistSpec::Impulse { a } if !finite(&[a]) => bad(format!("impulse at {a}")),
            DistSpec::Uniform { a, b } if !(finite(&[a, b]) && a < b) => {
                bad(format!("uniform needs a < b, got a={a}, b={b}"))
            }
            DistSpec::Triangle { a, b, c }
                if !(finite(&[a, b, c]) && a < b && a <= c && c <= b) =>
            {
                bad(format!(
                    "triangle needs a <= c <= b and a < b, got ({a}, {b}, {c})"
                ))
            }
            DistSpec::TwoPoint { p1, a1, p2, a2 } => {
                if !finite(&[p1, a1, p2, a2])
                    || p1 < 0.0
                    || p2 < 0.0
                    || (p1 + p2 - 1.0).abs() > 1e-12
                {
                    bad(format!(
                        "two-point weights must be >= 0 and sum to 1, got {p1} + {p2}"
                    ))
                } else {
                    Ok(())
                }
            }
            DistSpec::ScaledBeta { k, alpha, beta } => {
                if !finite(&[k, alpha, beta]) || k <= 0.0 || alpha <= 0.0 || beta <= 0.0 {
                    bad(format!(
                        "scaled beta needs k, alpha, beta > 0, got ({k}, {alpha}, {beta})"
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Validating draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.validate()?;
        Ok(self.draw(rng))
    }

    /// Draw from a spec already known to be valid.
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Impulse { a } => a,
            DistSpec::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            DistSpec::Triangle { a, b, c } => {
                let u: f64 = rng.random();
                let split = (c - a) / (b - a);
                if u < split {
                    a + (u * (b - a) * (c - a)).sqrt()
                } else {
                    b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
                }
            }
            DistSpec::TwoPoint { p1, a1, a2, .. } => {
                if rng.random::<f64>() < p1 {
                    a1
                } else {
                    a2
                }
            }
            DistSpec::ScaledBeta { k, alpha, beta } => {
                let dist = Beta::new(alpha, beta).expect("shapes validated");
                k * dist.sample(rng)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistSpec::Impulse { a } => a,
            DistSpec::Uniform { a, b } => 0.5 * (a + b),
            DistSpec::Triangle { a, b, c } => (a + b + c) / 3.0,
            DistSpec::TwoPoint { p1, a1, p2, a2 } => p1 * a1 + p2 * a2,
            DistSpec::ScaledBeta { k, alpha, beta } => k * alpha / (alpha + beta),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DistSpec::Impulse { .. } => 0.0,
            DistSpec::Uniform { a, b } => (b - a).powi(2) / 12.0,
            DistSpec::Triangle { a, b, c } => {
                (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0
            }
            DistSpec::TwoPoint { p1, a1, p2, a2 } => {
                p1 * a1 * a1 + p2 * a2 * a2 - self.mean().powi(2)
            }
            DistSpec::ScaledBeta { k, alpha, beta } => {
                let s = alpha + beta;
                k * k * alpha * beta / (s * s * (s + 1.0))
            }
        }
    }

    /// Closed support `[lo, hi]`.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistSpec::Impulse { a } => (a, a),
            DistSpec::Uniform { a, b } | DistSpec::Triangle { a, b, .. } => (a, b),
            DistSpec::TwoPoint { a1, a2, .. } => (a1.min(a2), a1.max(a2)),
            DistSpec::ScaledBeta { k, .. } => (0.0, k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(spec: DistSpec, n: usize, seed: u64) -> (f64, f64) {
        let stream = RngStream::new(seed, 0, Purpose::Contexts);
        let mut rng = stream.at(0);
        let draws: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn impulse_is_constant() {
        let mut rng = RngStream::new(1, 0, Purpose::Contexts).at(3);
        for _ in 0..100 {
            assert_eq!(DistSpec::Impulse { a: 0.4 }.sample(&mut rng).unwrap(), 0.4);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = RngStream::new(1, 0, Purpose::Contexts).at(0);
        let bad = [
            DistSpec::Uniform { a: 0.0, b: 0.0 },
            DistSpec::Uniform { a: 1.0, b: 0.0 },
            DistSpec::Triangle {
                a: 0.0,
                b: 1.0,
                c: 1.5,
            },
            DistSpec::TwoPoint {
                p1: 0.3,
                a1: 0.0,
                p2: 0.6,
                a2: 1.0,
            },
            DistSpec::TwoPoint {
                p1: -0.1,
                a1: 0.0,
                p2: 1.1,
                a2: 1.0,
            },
            DistSpec::ScaledBeta {
                k: 0.0,
                alpha: 3.0,
                beta: 4.0,
            },
            DistSpec::ScaledBeta {
                k: 1.0,
                alpha: -2.5,
                beta: 4.0,
            },
            DistSpec::Impulse { a: f64::INFINITY },
        ];
        for spec in bad {
            assert!(
                matches!(spec.sample(&mut rng), Err(Error::InvalidSpec(_))),
                "{spec:?} accepted"
            );
        }
    }

    #[test]
    fn scaled_beta_mean() {
        let (mean, _) = moments(
            DistSpec::ScaledBeta {
                k: 0.5,
                alpha: 3.0,
                beta: 4.0,
            },
            100_000,
            21,
        );
        assert!((mean - 0.5 * 3.0 / 7.0).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn scaled_beta_fractional_shapes() {
        let spec = DistSpec::ScaledBeta {
            k: 2.0,
            alpha: 0.5,
            beta: 1.5,
        };
        let (mean, var) = moments(spec, 200_000, 22);
        assert!((mean - spec.mean()).abs() < 0.01, "mean {mean}");
        assert!((var - spec.variance()).abs() < 0.01, "var {var}");
    }

    #[test]
    fn triangle_mean() {
        let (mean, _) = moments(
            DistSpec::Triangle {
                a: 0.0,
                b: 0.3,
                c: 0.15,
            },
            100_000,
            22,
        );
        assert!((mean - 0.15).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn triangle_draws_stay_in_support() {
        let spec = DistSpec::Triangle {
            a: 0.0,
            b: 2.4,
            c: 0.0,
        };
        let mut rng = RngStream::new(4, 0, Purpose::Contexts).at(0);
        for _ in 0..10_000 {
            let x = spec.sample(&mut rng).unwrap();
            assert!((0.0..=2.4).contains(&x));
        }
    }

    #[test]
    fn bernoulli_edges_and_rate() {
        let mut rng = RngStream::new(9, 0, Purpose::Arrivals).at(0);
        for _ in 0..1000 {
            assert!(!bernoulli(0.0, &mut rng).unwrap());
            assert!(bernoulli(1.0, &mut rng).unwrap());
        }
        let hits = (0..100_000)
            .filter(|_| bernoulli(0.5, &mut rng).unwrap())
            .count();
        let rate = hits as f64 / 1e5;
        assert!((0.494..=0.506).contains(&rate), "rate {rate}");
        assert!(bernoulli(1.5, &mut rng).is_err());
        assert!(bernoulli(-0.1, &mut rng).is_err());
    }

    #[test]
    fn coupling_replays_and_is_uniform() {
        let a = RngStream::new(42, 3, Purpose::Coupling);
        let b = RngStream::new(42, 3, Purpose::Coupling);
        let n = 100_000u64;
        let mut u: Vec<f64> = (1..=n).map(|t| coupling_uniform(&a, t)).collect();
        for t in [1u64, 17, 99_999] {
            assert_eq!(coupling_uniform(&a, t), coupling_uniform(&b, t));
        }
        // Kolmogorov-Smirnov against U(0,1).
        u.sort_by(f64::total_cmp);
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = x - i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64 - x;
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.006, "KS statistic {ks}");
    }

    #[test]
    fn coupling_threshold_is_monotone() {
        let s = RngStream::new(1, 1, Purpose::Coupling);
        for t in 1..1000 {
            let u = coupling_uniform(&s, t);
            let (lo, hi) = (0.3, 0.7);
            if u <= lo {
                assert!(u <= hi);
            }
        }
    }

    #[test]
    fn purposes_are_independent() {
        let arrivals = RngStream::new(7, 0, Purpose::Arrivals);
        let coupling = RngStream::new(7, 0, Purpose::Coupling);
        let n = 100_000u64;
        let xs: Vec<f64> = (1..=n).map(|t| arrivals.at(t).random::<f64>()).collect();
        let ys: Vec<f64> = (1..=n).map(|t| coupling_uniform(&coupling, t)).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() < 0.01, "correlation {rho}");
    }

    #[test]
    fn streams_differ_by_round_and_policy() {
        let a = RngStream::new(7, 0, Purpose::Coupling);
        let b = RngStream::new(7, 1, Purpose::Coupling);
        assert_ne!(coupling_uniform(&a, 5), coupling_uniform(&b, 5));
        assert_eq!(Purpose::policy("linucb"), Purpose::policy("linucb"));
        assert_ne!(Purpose::policy("linucb"), Purpose::policy("lints"));
    }

    #[test]
    fn spec_parses_from_inline_table() {
        #[derive(Deserialize)]
        struct Wrap {
            d: DistSpec,
        }
        let w: Wrap = toml::from_str(r#"d = {kind="triangle", a=0.0, b=0.3, c=0.15}"#).unwrap();
        assert_eq!(
            w.d,
            DistSpec::Triangle {
                a: 0.0,
                b: 0.3,
                c: 0.15
            }
        );
        let w: std::result::Result<Wrap, _> =
            toml::from_str(r#"d = {kind="uniform", a=0.0, b=1.0, c=2.0}"#);
        assert!(w.is_err());
    }
}
