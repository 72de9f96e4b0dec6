//! Flat `key=value` run configuration shared by every command.
//!
//! Blank lines and `#` comments are ignored; each key may appear once and
//! unknown keys are errors. [`RunConfig::dump`] writes every key in a fixed
//! order with canonical values, so dumping a parsed dump reproduces it byte for
//! byte.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::data::synthetic::signature_channels;
use crate::data::{BalanceOptions, BandSignature, Group, LabelSignature, NoiseSpec, SyntheticSpec};
use crate::explain::{ExplainConfig, ExplainTarget};
use crate::graph::ChannelLayout;
use crate::model::{kernel_size_for, ArchConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Architecture settings that do not depend on the data. `kernel_size = 0`
/// derives the kernel from the sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSettings {
    pub kernel_size: usize,
    pub filters: usize,
    pub cheb_out: usize,
    pub cheb_order: usize,
    pub pool_window: usize,
    pub radius_fraction: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub prelu_init: f64,
    pub freeze_batchnorm: bool,
}

impl Default for ArchSettings {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self {
            kernel_size: 0,
            filters: a.filters,
            cheb_out: a.cheb_out,
            cheb_order: a.cheb_order,
            pool_window: a.pool_window,
            radius_fraction: a.radius_fraction,
            bn_eps: a.bn_eps,
            bn_momentum: a.bn_momentum,
            prelu_init: a.prelu_init,
            freeze_batchnorm: a.freeze_batchnorm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSettings {
    /// `standard_12` or a path to a layout file.
    pub layout: String,
    pub groups: Vec<Group>,
    pub fs: f64,
    pub window_seconds: f64,
    pub n_participants: usize,
    pub trials_per_participant: usize,
    pub trials_per_block: usize,
    pub amplitude: f64,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    /// Success-only source shared by all groups; 0 disables it.
    pub common_amplitude: f64,
    pub common_channels: Vec<usize>,
    pub noise: NoiseSpec,
    pub funnel_halfwidth_deg: f64,
    pub margin_deg: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        let s = SyntheticSpec::new(ChannelLayout::standard_12(), 256.0, 2.0, 0);
        Self {
            layout: "standard_12".into(),
            groups: s.groups,
            fs: s.fs,
            window_seconds: s.window_seconds,
            n_participants: s.n_participants,
            trials_per_participant: s.trials_per_participant,
            trials_per_block: s.trials_per_block,
            amplitude: s.signatures[0].success.amplitude,
            center_hz: s.signatures[0].success.center_hz,
            bandwidth_hz: s.signatures[0].success.bandwidth_hz,
            common_amplitude: 0.0,
            common_channels: vec![4, 5, 6, 7],
            noise: s.noise,
            funnel_halfwidth_deg: s.funnel_halfwidth_deg,
            margin_deg: s.margin_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: ArchSettings,
    pub folds: usize,
    /// `train.seed` is ignored in favour of the global seed.
    pub train: TrainConfig,
    pub pretrain_epochs: usize,
    pub balance_enabled: bool,
    pub balance: BalanceOptions,
    pub synthetic: SyntheticSettings,
    pub explain: ExplainConfig,
    pub sgw_projections: usize,
    /// Per-axis factors applied to `(azimuth, radial, score)` before projection.
    pub sgw_scale: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: ArchSettings::default(),
            folds: 10,
            train: TrainConfig::default(),
            pretrain_epochs: TrainConfig::pretraining().epochs,
            balance_enabled: true,
            balance: BalanceOptions::default(),
            synthetic: SyntheticSettings::default(),
            explain: ExplainConfig::default(),
            sgw_projections: crate::mapgeo::DEFAULT_PROJECTIONS,
            sgw_scale: [1.0; 3],
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), msg: e.to_string() })
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every key with its canonical value, in dump order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.arch;
        let t = &self.train;
        let s = &self.synthetic;
        let x = &self.explain;
        let c = &x.coefficients;
        let b = &self.balance;
        vec![
            ("seed", self.seed.to_string()),
            ("arch.kernel_size", a.kernel_size.to_string()),
            ("arch.filters", a.filters.to_string()),
            ("arch.cheb_out", a.cheb_out.to_string()),
            ("arch.cheb_order", a.cheb_order.to_string()),
            ("arch.pool_window", a.pool_window.to_string()),
            ("arch.radius_fraction", a.radius_fraction.to_string()),
            ("arch.bn_eps", a.bn_eps.to_string()),
            ("arch.bn_momentum", a.bn_momentum.to_string()),
            ("arch.prelu_init", a.prelu_init.to_string()),
            ("arch.freeze_batchnorm", a.freeze_batchnorm.to_string()),
            ("train.folds", self.folds.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.adam_beta1", t.adam_beta1.to_string()),
            ("train.adam_beta2", t.adam_beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.dropout", t.dropout.to_string()),
            ("train.edge_dropout", t.edge_dropout.to_string()),
            ("train.checkpoints", join(&t.checkpoints)),
            ("pretrain.epochs", self.pretrain_epochs.to_string()),
            ("balance.enabled", self.balance_enabled.to_string()),
            ("balance.funnel_halfwidth_deg", b.funnel_halfwidth_deg.to_string()),
            ("balance.margin_deg", b.margin_deg.to_string()),
            ("balance.per_participant", b.per_participant.to_string()),
            ("synthetic.layout", s.layout.clone()),
            ("synthetic.groups", join(&s.groups)),
            ("synthetic.fs", s.fs.to_string()),
            ("synthetic.window_seconds", s.window_seconds.to_string()),
            ("synthetic.n_participants", s.n_participants.to_string()),
            ("synthetic.trials_per_participant", s.trials_per_participant.to_string()),
            ("synthetic.trials_per_block", s.trials_per_block.to_string()),
            ("synthetic.amplitude", s.amplitude.to_string()),
            ("synthetic.center_hz", s.center_hz.to_string()),
            ("synthetic.bandwidth_hz", s.bandwidth_hz.to_string()),
            ("synthetic.common_amplitude", s.common_amplitude.to_string()),
            ("synthetic.common_channels", join(&s.common_channels)),
            ("synthetic.noise_exponent", s.noise.exponent.to_string()),
            ("synthetic.noise_floor", s.noise.floor.to_string()),
            ("synthetic.noise_power", s.noise.power.to_string()),
            ("synthetic.funnel_halfwidth_deg", s.funnel_halfwidth_deg.to_string()),
            ("synthetic.margin_deg", s.margin_deg.to_string()),
            ("explain.init", x.init.name().to_string()),
            ("explain.target", target_name(x.target).to_string()),
            ("explain.learning_rate", x.learning_rate.to_string()),
            ("explain.epochs", x.epochs.to_string()),
            ("explain.init_std", x.init_std.to_string()),
            ("explain.coef_ces", c.ces.to_string()),
            ("explain.coef_nms", c.nms.to_string()),
            ("explain.coef_ems", c.ems.to_string()),
            ("explain.coef_nme", c.nme.to_string()),
            ("explain.coef_eme", c.eme.to_string()),
            ("sgw.n_projections", self.sgw_projections.to_string()),
            ("sgw.scale", join(&self.sgw_scale)),
        ]
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let v = v.trim();
        let k = key;
        let bad = |msg: &str| ConfigError::Value { key: k.into(), msg: msg.into() };
        match key {
            "seed" => self.seed = num(k, v)?,
            "arch.kernel_size" => self.arch.kernel_size = num(k, v)?,
            "arch.filters" => self.arch.filters = num(k, v)?,
            "arch.cheb_out" => self.arch.cheb_out = num(k, v)?,
            "arch.cheb_order" => self.arch.cheb_order = num(k, v)?,
            "arch.pool_window" => self.arch.pool_window = num(k, v)?,
            "arch.radius_fraction" => self.arch.radius_fraction = num(k, v)?,
            "arch.bn_eps" => self.arch.bn_eps = num(k, v)?,
            "arch.bn_momentum" => self.arch.bn_momentum = num(k, v)?,
            "arch.prelu_init" => self.arch.prelu_init = num(k, v)?,
            "arch.freeze_batchnorm" => self.arch.freeze_batchnorm = num(k, v)?,
            "train.folds" => self.folds = num(k, v)?,
            "train.batch_size" => self.train.batch_size = num(k, v)?,
            "train.learning_rate" => self.train.learning_rate = num(k, v)?,
            "train.epochs" => self.train.epochs = num(k, v)?,
            "train.weight_decay" => self.train.weight_decay = num(k, v)?,
            "train.adam_beta1" => self.train.adam_beta1 = num(k, v)?,
            "train.adam_beta2" => self.train.adam_beta2 = num(k, v)?,
            "train.adam_eps" => self.train.adam_eps = num(k, v)?,
            "train.dropout" => self.train.dropout = num(k, v)?,
            "train.edge_dropout" => self.train.edge_dropout = num(k, v)?,
            "train.checkpoints" => self.train.checkpoints = list(k, v)?,
            "pretrain.epochs" => self.pretrain_epochs = num(k, v)?,
            "balance.enabled" => self.balance_enabled = num(k, v)?,
            "balance.funnel_halfwidth_deg" => self.balance.funnel_halfwidth_deg = num(k, v)?,
            "balance.margin_deg" => self.balance.margin_deg = num(k, v)?,
            "balance.per_participant" => self.balance.per_participant = num(k, v)?,
            "synthetic.layout" => self.synthetic.layout = v.to_string(),
            "synthetic.groups" => self.synthetic.groups = list(k, v)?,
            "synthetic.fs" => self.synthetic.fs = num(k, v)?,
            "synthetic.window_seconds" => self.synthetic.window_seconds = num(k, v)?,
            "synthetic.n_participants" => self.synthetic.n_participants = num(k, v)?,
            "synthetic.trials_per_participant" => self.synthetic.trials_per_participant = num(k, v)?,
            "synthetic.trials_per_block" => self.synthetic.trials_per_block = num(k, v)?,
            "synthetic.amplitude" => self.synthetic.amplitude = num(k, v)?,
            "synthetic.center_hz" => self.synthetic.center_hz = num(k, v)?,
            "synthetic.bandwidth_hz" => self.synthetic.bandwidth_hz = num(k, v)?,
            "synthetic.common_amplitude" => self.synthetic.common_amplitude = num(k, v)?,
            "synthetic.common_channels" => self.synthetic.common_channels = list(k, v)?,
            "synthetic.noise_exponent" => self.synthetic.noise.exponent = num(k, v)?,
            "synthetic.noise_floor" => self.synthetic.noise.floor = num(k, v)?,
            "synthetic.noise_power" => self.synthetic.noise.power = num(k, v)?,
            "synthetic.funnel_halfwidth_deg" => self.synthetic.funnel_halfwidth_deg = num(k, v)?,
            "synthetic.margin_deg" => self.synthetic.margin_deg = num(k, v)?,
            "explain.init" => self.explain.init = num(k, v)?,
            "explain.target" => {
                self.explain.target = match v {
                    "predictions" => ExplainTarget::ModelPredictions,
                    "labels" => ExplainTarget::TrueLabels,
                    _ => return Err(bad("expected predictions|labels")),
                }
            }
            "explain.learning_rate" => self.explain.learning_rate = num(k, v)?,
            "explain.epochs" => self.explain.epochs = num(k, v)?,
            "explain.init_std" => self.explain.init_std = num(k, v)?,
            "explain.coef_ces" => self.explain.coefficients.ces = num(k, v)?,
            "explain.coef_nms" => self.explain.coefficients.nms = num(k, v)?,
            "explain.coef_ems" => self.explain.coefficients.ems = num(k, v)?,
            "explain.coef_nme" => self.explain.coefficients.nme = num(k, v)?,
            "explain.coef_eme" => self.explain.coefficients.eme = num(k, v)?,
            "sgw.n_projections" => self.sgw_projections = num(k, v)?,
            "sgw.scale" => {
                let s: Vec<f64> = list(k, v)?;
                self.sgw_scale = s.try_into().map_err(|_| bad("expected three factors"))?;
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn dump(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::Value { key: key.into(), msg: msg.into() });
        if self.folds < 2 {
            return bad("train.folds", "need at least 2 folds");
        }
        if self.sgw_projections == 0 {
            return bad("sgw.n_projections", "need at least one projection");
        }
        if self.sgw_scale.iter().any(|f| !f.is_finite()) {
            return bad("sgw.scale", "factors must be finite");
        }
        if !(self.explain.learning_rate > 0.0 && self.explain.init_std >= 0.0) {
            return bad("explain.learning_rate", "must be positive (and init_std nonnegative)");
        }
        let c = self.explain.coefficients;
        if [c.ces, c.nms, c.ems, c.nme, c.eme].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("explain.coef_*", "coefficients must be nonnegative");
        }
        self.train_config()
            .validate()
            .or_else(|e| bad("train.*", &e.to_string()))
    }

    /// Training settings with the global seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.pretrain_epochs, ..self.train_config() }
    }

    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig { seed: self.seed, ..self.explain.clone() }
    }

    /// Architecture for data sampled at `fs` with `n_times` samples per epoch.
    pub fn arch_config(&self, fs: f64, n_times: usize) -> ArchConfig {
        let a = &self.arch;
        ArchConfig {
            n_times,
            kernel_size: if a.kernel_size == 0 { kernel_size_for(fs) } else { a.kernel_size },
            filters: a.filters,
            cheb_out: a.cheb_out,
            cheb_order: a.cheb_order,
            pool_window: a.pool_window,
            dropout: self.train.dropout,
            edge_dropout: self.train.edge_dropout,
            radius_fraction: a.radius_fraction,
            bn_eps: a.bn_eps,
            bn_momentum: a.bn_momentum,
            prelu_init: a.prelu_init,
            freeze_batchnorm: a.freeze_batchnorm,
        }
    }

    /// Resolves `synthetic.layout`: `standard_12` or a layout file path.
    pub fn synthetic_layout(&self) -> Result<ChannelLayout, ConfigError> {
        if self.synthetic.layout == "standard_12" {
            return Ok(ChannelLayout::standard_12());
        }
        ChannelLayout::load(&self.synthetic.layout).map_err(|e| ConfigError::Value {
            key: "synthetic.layout".into(),
            msg: e.to_string(),
        })
    }

    /// Planted per-group signatures on successes (silent on failures) plus the
    /// optional common source.
    pub fn synthetic_spec(&self, layout: ChannelLayout) -> Result<SyntheticSpec, ConfigError> {
        let s = &self.synthetic;
        let c = layout.len();
        let band = |channels: &[usize], amplitude: f64| BandSignature {
            center_hz: s.center_hz,
            bandwidth_hz: s.bandwidth_hz,
            ..BandSignature::on_channels(c, channels, amplitude)
        };
        if let Some(&bad) = s.common_channels.iter().find(|&&i| i >= c) {
            return Err(ConfigError::Value {
                key: "synthetic.common_channels".into(),
                msg: format!("channel {bad} out of range for {c} channels"),
            });
        }
        let signatures = Group::ALL.map(|g| {
            let ch = signature_channels(g, c);
            LabelSignature { success: band(&ch, s.amplitude), failure: band(&ch, 0.0) }
        });
        let common = (s.common_amplitude > 0.0 && !s.common_channels.is_empty()).then(|| LabelSignature {
            success: band(&s.common_channels, s.common_amplitude),
            failure: band(&s.common_channels, 0.0),
        });
        Ok(SyntheticSpec {
            groups: s.groups.clone(),
            n_participants: s.n_participants,
            trials_per_participant: s.trials_per_participant,
            trials_per_block: s.trials_per_block,
            signatures,
            common,
            noise: s.noise,
            funnel_halfwidth_deg: s.funnel_halfwidth_deg,
            margin_deg: s.margin_deg,
            ..SyntheticSpec::new(layout, s.fs, s.window_seconds, self.seed)
        })
    }
}

fn target_name(t: ExplainTarget) -> &'static str {
    match t {
        ExplainTarget::ModelPredictions => "predictions",
        ExplainTarget::TrueLabels => "labels",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_is_a_fixed_point() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.learning_rate=1e-3").unwrap();
        cfg.apply_override("synthetic.groups=FirstLeft,SecondRight").unwrap();
        cfg.apply_override("sgw.scale=1,0.5,2").unwrap();
        let text = cfg.dump();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.dump(), text);
        assert!(text.contains("train.learning_rate=0.001\n"));
        assert_eq!(text.lines().count(), cfg.entries().len());
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(matches!(RunConfig::parse("train.lr=1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse("seed=1\nseed=2"), Err(ConfigError::Duplicate(_))));
        assert!(matches!(RunConfig::parse("seed"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(RunConfig::parse("seed=x"), Err(ConfigError::Value { .. })));
        assert!(RunConfig::parse("train.folds=1").is_err());
        assert!(RunConfig::parse("explain.target=nope").is_err());
    }

    #[test]
    fn comments_and_defaults() {
        let cfg = RunConfig::parse("# desk run\n\nseed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train_config().seed, 7);
        assert_eq!(cfg.arch_config(256.0, 512), ArchConfig::default());
    }

    #[test]
    fn synthetic_spec_from_settings() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("synthetic.common_amplitude=0.3").unwrap();
        let spec = cfg.synthetic_spec(ChannelLayout::standard_12()).unwrap();
        assert_eq!(spec.common.as_ref().unwrap().success.amplitude, 0.3);
        assert_eq!(spec.signatures[1].success.weights[3], 1.0);
        cfg.apply_override("synthetic.common_channels=12").unwrap();
        assert!(cfg.synthetic_spec(ChannelLayout::standard_12()).is_err());
    }
}
