//! Experiment configuration: TOML schema, presets and validation.
//!
//! A config file may start from a preset and override any field:
//!
//! ```toml
//! preset = "fig2"
//! horizon = 10000
//! rounds = 100
//! channel_policies = ["linucb", "aducb"]
//!
//! [params]
//! v = 0.5
//! ```
//!
//! Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::envmodel::{ChannelModel, FeatureMap, Truth};
use crate::error::{Error, Result};
use crate::policies::{ChannelPolicyKind, PolicyParams, SourcePolicy};
use crate::stochastic::DistSpec;

/// Source-to-channel matching for multi-pair slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Most urgent source gets the best-ranked channel.
    #[default]
    Rank,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ThompsonScale {
    Fixed(f64),
    /// `sqrt((24 / eps) d ln(1 / delta))`.
    Theory,
}

/// Policy parameters as configured; `alpha` defaults to its horizon formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamSpec {
    pub alpha: Option<f64>,
    pub v: ThompsonScale,
    pub delta: f64,
    pub eps: f64,
    pub explore: f64,
}

impl Default for ParamSpec {
    fn default() -> Self {
        Self {
            alpha: None,
            v: ThompsonScale::Fixed(1.0),
            delta: PolicyParams::DEFAULT_DELTA,
            eps: PolicyParams::DEFAULT_EPS,
            explore: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub preset: Option<String>,
    pub num_sources: usize,
    pub num_pairs: usize,
    pub horizon: u64,
    pub arrival_rate: f64,
    pub model_name: String,
    pub channel_model: ChannelModel,
    pub source_policy: SourcePolicy,
    pub channel_policies: Vec<ChannelPolicyKind>,
    pub params: ParamSpec,
    pub pairing: Pairing,
    pub rounds: usize,
    pub seed: u64,
    pub checkpoints: usize,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub uncoupled: bool,
    pub dump_traces: bool,
    pub per_pair_threshold: bool,
    /// Fault injection: skip the `[0, 1]` score projection.
    pub skip_projection: bool,
}

pub const PRESETS: [&str; 6] = ["fig2", "fig3", "fig4", "fig5", "desk", "fixed_gap"];

const FIG_POLICIES: [ChannelPolicyKind; 5] = [
    ChannelPolicyKind::SupLinUcb,
    ChannelPolicyKind::LinUcb,
    ChannelPolicyKind::LinTs,
    ChannelPolicyKind::AdUcb,
    ChannelPolicyKind::AdTs,
];

pub const DESK_HORIZON: u64 = 10_000;
pub const DESK_ROUNDS: usize = 100;

impl SimConfig {
    fn base(model_name: &str, channel_model: ChannelModel) -> Self {
        Self {
            preset: None,
            num_sources: 20,
            num_pairs: 1,
            horizon: 100_000,
            arrival_rate: 0.5,
            model_name: model_name.to_string(),
            channel_model,
            source_policy: SourcePolicy::MaxWeight,
            channel_policies: FIG_POLICIES.to_vec(),
            params: ParamSpec::default(),
            pairing: Pairing::Rank,
            rounds: 1000,
            seed: 1,
            checkpoints: 50,
            output_dir: None,
            workers: None,
            uncoupled: false,
            dump_traces: false,
            per_pair_threshold: false,
            skip_projection: false,
        }
    }

    /// Presets at full scale (`T = 1e5`, 1000 rounds) except `desk` and
    /// `fixed_gap`, which run at `T = 1e4` with 100 rounds.
    pub fn preset(name: &str) -> Option<Self> {
        let mut cfg = match name {
            "fig2" | "fig3" => Self::base("table1", ChannelModel::table1()),
            "fig4" => Self::base("nonlinear_snr", ChannelModel::nonlinear_snr()),
            "fig5" => {
                let mut c = Self::base("table1", ChannelModel::table1());
                c.num_pairs = 3;
                c
            }
            "desk" => {
                let mut c = Self::base("table1", ChannelModel::table1());
                c.desk_scale();
                c
            }
            "fixed_gap" => {
                let mut c = Self::base("fixed_gap", ChannelModel::fixed_gap());
                c.channel_policies = vec![ChannelPolicyKind::EpsGreedy];
                c.desk_scale();
                c
            }
            _ => return None,
        };
        cfg.preset = Some(name.to_string());
        Some(cfg)
    }

    pub fn desk_scale(&mut self) {
        self.horizon = DESK_HORIZON;
        self.rounds = DESK_ROUNDS;
    }

    pub fn num_channels(&self) -> usize {
        self.channel_model.num_channels()
    }

    /// Concrete parameters for this horizon and channel count.
    pub fn effective_params(&self) -> PolicyParams {
        let spec = &self.params;
        let alpha = spec.alpha.unwrap_or_else(|| {
            PolicyParams::default_alpha(self.horizon, self.num_channels(), spec.delta)
        });
        let v = match spec.v {
            ThompsonScale::Fixed(v) => v,
            ThompsonScale::Theory => {
                PolicyParams::theoretical_v(spec.eps, self.channel_model.feature_dim(), spec.delta)
            }
        };
        PolicyParams {
            alpha,
            v,
            delta: spec.delta,
            eps: spec.eps,
            explore: spec.explore,
            project: !self.skip_projection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_channels();
        if self.num_sources == 0 {
            return Err(Error::validation("num_sources", "must be >= 1"));
        }
        if self.num_pairs == 0 || self.num_pairs > self.num_sources.min(n) {
            return Err(Error::validation(
                "num_pairs",
                format!(
                    "must satisfy 1 <= p <= min(M, N) = {}, got {}",
                    self.num_sources.min(n),
                    self.num_pairs
                ),
            ));
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate <= 1.0) {
            return Err(Error::validation(
                "arrival_rate",
                format!("must be in (0, 1], got {}", self.arrival_rate),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon", "must be >= 1"));
        }
        if self.horizon > u32::MAX as u64 {
            return Err(Error::validation("horizon", "must fit in 32 bits"));
        }
        if self.rounds == 0 {
            return Err(Error::validation("rounds", "must be >= 1"));
        }
        if self.checkpoints < 2 {
            return Err(Error::validation("checkpoints", "must be >= 2"));
        }
        if self.channel_policies.is_empty() {
            return Err(Error::validation(
                "channel_policies",
                "at least one policy required",
            ));
        }
        for (i, p) in self.channel_policies.iter().enumerate() {
            if self.channel_policies[..i].contains(p) {
                return Err(Error::validation(
                    "channel_policies",
                    format!("`{}` listed twice", p.name()),
                ));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers", "must be >= 1"));
        }
        let p = &self.params;
        if let Some(a) = p.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::validation(
                    "params.alpha",
                    format!("must be finite and >= 0, got {a}"),
                ));
            }
        }
        if let ThompsonScale::Fixed(v) = p.v {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    "params.v",
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(Error::validation(
                "params.delta",
                format!("must be in (0, 1), got {}", p.delta),
            ));
        }
        if !(p.eps > 0.0 && p.eps < 1.0) {
            return Err(Error::validation(
                "params.eps",
                format!("must be in (0, 1), got {}", p.eps),
            ));
        }
        if !(0.0..=1.0).contains(&p.explore) {
            return Err(Error::validation(
                "params.explore",
                format!("must be in [0, 1], got {}", p.explore),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    num_sources: Option<usize>,
    num_channels: Option<usize>,
    num_pairs: Option<usize>,
    horizon: Option<u64>,
    arrival_rate: Option<f64>,
    rounds: Option<usize>,
    seed: Option<u64>,
    checkpoints: Option<usize>,
    workers: Option<usize>,
    source_policy: Option<SourcePolicy>,
    channel_policies: Option<Vec<String>>,
    pairing: Option<Pairing>,
    channel_model: Option<RawModel>,
    params: Option<RawParams>,
    output: Option<RawOutput>,
    flags: Option<RawFlags>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<String>,
    contexts: Option<Vec<Vec<DistSpec>>>,
    truth: Option<Truth>,
    feature_map: Option<FeatureMap>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    alpha: Option<f64>,
    v: Option<f64>,
    /// `"fixed"` (default) or `"theory"`.
    v_rule: Option<String>,
    delta: Option<f64>,
    eps: Option<f64>,
    explore: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlags {
    uncoupled: Option<bool>,
    dump_traces: Option<bool>,
    per_pair_threshold: Option<bool>,
}

/// Parses and validates a TOML config.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let cfg = build(raw)?;
    cfg.validate()?;
    Ok(cfg)
}

fn build(raw: RawConfig) -> Result<SimConfig> {
    let mut cfg = match raw.preset.as_deref() {
        Some(name) => SimConfig::preset(name).ok_or_else(|| {
            Error::validation(
                "preset",
                format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")),
            )
        })?,
        None => SimConfig::base("table1", ChannelModel::table1()),
    };

    if let Some(model) = raw.channel_model {
        let (name, built) = build_model(model)?;
        cfg.model_name = name;
        cfg.channel_model = built;
    }
    if let Some(n) = raw.num_channels {
        if n != cfg.num_channels() {
            return Err(Error::validation(
                "num_channels",
                format!(
                    "{n} does not match the channel model ({} channels)",
                    cfg.num_channels()
                ),
            ));
        }
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = raw.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(
        num_sources,
        num_pairs,
        horizon,
        arrival_rate,
        rounds,
        seed,
        checkpoints,
        source_policy,
        pairing
    );
    if raw.workers.is_some() {
        cfg.workers = raw.workers;
    }
    if let Some(names) = raw.channel_policies {
        cfg.channel_policies = parse_policy_list(&names)?;
    }
    if let Some(p) = raw.params {
        if p.alpha.is_some() {
            cfg.params.alpha = p.alpha;
        }
        match p.v_rule.as_deref() {
            None | Some("fixed") => {
                if let Some(v) = p.v {
                    cfg.params.v = ThompsonScale::Fixed(v);
                }
            }
            Some("theory") => {
                if p.v.is_some() {
                    return Err(Error::validation(
                        "params.v",
                        "cannot be set together with v_rule = \"theory\"",
                    ));
                }
                cfg.params.v = ThompsonScale::Theory;
            }
            Some(other) => {
                return Err(Error::validation(
                    "params.v_rule",
                    format!("expected \"fixed\" or \"theory\", got `{other}`"),
                ))
            }
        }
        if let Some(d) = p.delta {
            cfg.params.delta = d;
        }
        if let Some(e) = p.eps {
            cfg.params.eps = e;
        }
        if let Some(x) = p.explore {
            cfg.params.explore = x;
        }
    }
    if let Some(out) = raw.output {
        cfg.output_dir = out.dir;
    }
    if let Some(f) = raw.flags {
        cfg.uncoupled = f.uncoupled.unwrap_or(cfg.uncoupled);
        cfg.dump_traces = f.dump_traces.unwrap_or(cfg.dump_traces);
        cfg.per_pair_threshold = f.per_pair_threshold.unwrap_or(cfg.per_pair_threshold);
    }
    Ok(cfg)
}

fn build_model(raw: RawModel) -> Result<(String, ChannelModel)> {
    match (raw.preset, raw.contexts, raw.truth) {
        (Some(name), None, None) => {
            let mut model = ChannelModel::preset(&name).ok_or_else(|| {
                Error::validation(
                    "channel_model.preset",
                    format!("unknown model preset `{name}`"),
                )
            })?;
            if let Some(fm) = raw.feature_map {
                model = ChannelModel::new(model.contexts().to_vec(), model.truth().clone(), fm)?;
            }
            Ok((name, model))
        }
        (None, Some(contexts), Some(truth)) => {
            let model = ChannelModel::new(contexts, truth, raw.feature_map.unwrap_or_default())?;
            Ok(("inline".to_string(), model))
        }
        _ => Err(Error::validation(
            "channel_model",
            "give either `preset` or both `contexts` and `truth`",
        )),
    }
}

pub fn parse_policy_list(names: &[impl AsRef<str>]) -> Result<Vec<ChannelPolicyKind>> {
    names
        .iter()
        .map(|n| {
            let n = n.as_ref().trim();
            ChannelPolicyKind::parse(n).ok_or_else(|| {
                Error::validation(
                    "channel_policies",
                    format!("unknown policy `{n}` (oracle, random, linucb, lints, aducb, adts, suplinucb, epsgreedy)"),
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_preset_matches_experiment_setup() {
        let cfg = parse_config("preset = \"fig2\"").unwrap();
        assert_eq!(cfg.num_sources, 20);
        assert_eq!(cfg.num_channels(), 5);
        assert_eq!(cfg.horizon, 100_000);
        assert_eq!(cfg.arrival_rate, 0.5);
        assert_eq!(cfg.rounds, 1000);
        assert_eq!(cfg.num_pairs, 1);
        assert_eq!(cfg.model_name, "table1");
        assert_eq!(cfg.channel_model, ChannelModel::table1());
        assert_eq!(cfg.channel_policies, FIG_POLICIES.to_vec());
        assert_eq!(cfg.effective_params().v, 1.0);
    }

    #[test]
    fn fig4_and_fig5_presets() {
        let cfg = SimConfig::preset("fig4").unwrap();
        assert_eq!(cfg.channel_model, ChannelModel::nonlinear_snr());
        let cfg = SimConfig::preset("fig5").unwrap();
        assert_eq!(cfg.num_pairs, 3);
        assert_eq!(cfg.channel_model, ChannelModel::table1());
    }

    #[test]
    fn too_many_pairs_rejected() {
        let err = parse_config("preset = \"fig2\"\nnum_pairs = 6").unwrap_err();
        assert!(
            matches!(err, Error::Validation { ref key, .. } if key == "num_pairs"),
            "{err}"
        );
    }

    #[test]
    fn empty_policy_list_rejected() {
        let err = parse_config("channel_policies = []").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "channel_policies"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config("horizn = 10").unwrap_err();
        assert!(err.to_string().contains("horizn"), "{err}");
        let err = parse_config("[params]\nalpah = 1.0").unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
    }

    #[test]
    fn range_checks() {
        assert!(parse_config("arrival_rate = 0.0").is_err());
        assert!(parse_config("arrival_rate = 1.5").is_err());
        assert!(parse_config("horizon = 0").is_err());
        assert!(parse_config("rounds = 0").is_err());
        assert!(parse_config("num_channels = 4").is_err());
        assert!(parse_config("channel_policies = [\"linucb\", \"linucb\"]").is_err());
        assert!(parse_config("channel_policies = [\"ucb2\"]").is_err());
        assert!(parse_config("[params]\ndelta = 1.0").is_err());
    }

    #[test]
    fn inline_model_and_overrides() {
        let text = r#"
            num_sources = 4
            horizon = 500
            rounds = 3
            channel_policies = ["linucb", "suplinucb-approx"]

            [channel_model]
            feature_map = "affine_bias"
            contexts = [
                [{kind = "uniform", a = 0.0, b = 1.0}],
                [{kind = "triangle", a = 0.0, b = 0.3, c = 0.15}],
            ]
            truth = {kind = "linear", theta = [0.1, 0.8], noise = {kind = "impulse", a = 0.0}}

            [params]
            v_rule = "theory"
            eps = 0.25

            [flags]
            per_pair_threshold = true
        "#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.num_channels(), 2);
        assert_eq!(cfg.channel_model.feature_dim(), 2);
        assert_eq!(cfg.model_name, "inline");
        assert!(cfg.per_pair_threshold);
        let p = cfg.effective_params();
        assert!((p.v - PolicyParams::theoretical_v(0.25, 2, 0.1)).abs() < 1e-12);
        assert!((p.alpha - PolicyParams::default_alpha(500, 2, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn model_preset_by_name() {
        let cfg = parse_config("[channel_model]\npreset = \"nonlinear_snr\"").unwrap();
        assert_eq!(cfg.channel_model, ChannelModel::nonlinear_snr());
        assert!(parse_config("[channel_model]\npreset = \"nope\"").is_err());
    }
}
