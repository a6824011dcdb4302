//! Run configuration: JSON in, validated config out.

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderMode;
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// Feature dimensions. `d1`/`d3` are the encoder output lengths for the
/// global and expression branches, `d2` the semantic vector length
/// (equal to the LSTM hidden size `H` by construction), `M` the
/// attention size, and `F` the per-object feature length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "F")]
    pub f: usize,
}

impl Default for Dims {
    fn default() -> Dims {
        Dims {
            d1: 64,
            d2: 32,
            d3: 32,
            h: 32,
            m: 16,
            f: 16,
        }
    }
}

impl Dims {
    pub fn fused_len(&self) -> usize {
        self.d1 + self.d2 + self.d3
    }
}

/// Dataset split fractions; must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> SplitSpec {
        SplitSpec {
            train: 0.80,
            val: 0.05,
            test: 0.15,
        }
    }
}

/// Which semantic branch to use: the LSTM stack or its two-layer
/// affine ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnetKind {
    #[default]
    Lstm,
    Fc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderModeConfig {
    #[default]
    Trainable,
    Passthrough,
}

impl From<EncoderModeConfig> for EncoderMode {
    fn from(m: EncoderModeConfig) -> EncoderMode {
        match m {
            EncoderModeConfig::Trainable => EncoderMode::Trainable,
            EncoderModeConfig::Passthrough => EncoderMode::Passthrough,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodersConfig {
    #[serde(default)]
    pub global: EncoderModeConfig,
    #[serde(default)]
    pub expression: EncoderModeConfig,
}

/// How weight decay enters the update: folded into the gradient before
/// the Adam moments (the classic reading) or applied decoupled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecayMode {
    #[default]
    Coupled,
    Decoupled,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_n_max() -> usize {
    10
}
fn default_batch_size() -> usize {
    32
}
fn default_seed() -> u64 {
    42
}
fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    5e-5
}
fn default_decay_every() -> usize {
    10
}
fn default_decay_factor() -> f64 {
    0.1
}
fn default_taxonomy() -> serde_json::Value {
    serde_json::Value::String("mikel".into())
}

/// Full run configuration.
///
/// `t_steps = 0` means one step per object (T = N); any positive value
/// fixes T. The default learning hyper-parameters are tuned for the
/// desk-scale synthetic task; the original large-scale schedule is
/// available as [`crate::training::Schedule::paper`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub t_steps: usize,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default)]
    pub split: SplitSpec,
    /// Either a builtin name ("mikel", "emotionroi") or an inline
    /// taxonomy object.
    #[serde(default = "default_taxonomy")]
    pub taxonomy: serde_json::Value,
    #[serde(default)]
    pub snet: SnetKind,
    #[serde(default)]
    pub encoders: EncodersConfig,
    #[serde(default)]
    pub weight_decay_mode: WeightDecayMode,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        serde_json::from_str("{}").expect("defaults fill an empty config")
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} is negative", self.lambda)));
        }
        for (name, v) in [
            ("n_max", self.n_max),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("decay_every", self.decay_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("dims.d1", self.dims.d1),
            ("dims.d2", self.dims.d2),
            ("dims.d3", self.dims.d3),
            ("dims.H", self.dims.h),
            ("dims.M", self.dims.m),
            ("dims.F", self.dims.f),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.dims.d2 != self.dims.h {
            return Err(Error::Config(format!(
                "dims.d2 ({}) must equal dims.H ({}): the semantic vector is the last hidden state",
                self.dims.d2, self.dims.h
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay is negative".into()));
        }
        if self.decay_factor <= 0.0 {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        let s = self.split;
        if s.train < 0.0 || s.val < 0.0 || s.test < 0.0 {
            return Err(Error::Config("split fractions must be non-negative".into()));
        }
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {}, not 1",
                s.train + s.val + s.test
            )));
        }
        if s.train <= 0.0 {
            return Err(Error::Config("split.train must be positive".into()));
        }
        self.resolve_taxonomy()?;
        Ok(())
    }

    pub fn resolve_taxonomy(&self) -> Result<Taxonomy> {
        match &self.taxonomy {
            serde_json::Value::String(name) => match name.as_str() {
                "mikel" => Ok(Taxonomy::mikel_default()),
                "emotionroi" => Ok(Taxonomy::emotionroi_default()),
                other => Err(Error::Config(format!(
                    "unknown taxonomy \"{other}\" (builtins: mikel, emotionroi)"
                ))),
            },
            obj @ serde_json::Value::Object(_) => Taxonomy::load(&obj.to_string())
                .map_err(|e| Error::Config(format!("inline taxonomy: {e}"))),
            _ => Err(Error::Config(
                "taxonomy must be a builtin name or an object".into(),
            )),
        }
    }
}
