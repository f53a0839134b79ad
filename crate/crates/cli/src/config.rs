//! Experiment configuration with `flag > config file > default` precedence.
//!
//! Config files are flat `key = value` text; `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lowprec::network::{ConvSpec, QuantizeTiming};
use lowprec::{Granularity, MantissaBits, NetworkSpec, PrecisionConfig, Rounding, TrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

/// Everything needed to reproduce one training run, flattened to scalars so
/// it round-trips through text and JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    /// Training samples used (first N of the training file).
    pub subset: usize,
    /// Test samples used (first N of the test file).
    pub test_subset: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub rmsprop_decay: f32,
    pub rmsprop_epsilon: f32,
    pub seed: u64,
    pub init_scale: f32,
    pub init_perturbation: f32,
    pub mantissa_bits: u32,
    pub rounding: RoundingArg,
    pub granularity: GranularityArg,
    pub timing: TimingArg,
    /// Conv stack as `filters x rows x cols`, comma separated.
    pub conv: String,
    pub dense_layers: usize,
    pub dense_units: usize,
    /// Accuracy threshold for the convergence metric.
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    /// Desk-scale profile: 10 000 training images, full test set, 30 epochs.
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            data_dir: PathBuf::from("data/mnist"),
            subset: 10_000,
            test_subset: 10_000,
            epochs: 30,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            rmsprop_decay: train.rmsprop_decay,
            rmsprop_epsilon: train.rmsprop_epsilon,
            seed: train.seed,
            init_scale: train.init_scale,
            init_perturbation: train.init_perturbation,
            mantissa_bits: 23,
            rounding: RoundingArg::Truncate,
            granularity: GranularityArg::Batch,
            timing: TimingArg::Batch,
            conv: "8x5x5,16x5x5".into(),
            dense_layers: 1,
            dense_units: 100,
            threshold: 0.9,
        }
    }
}

impl ExperimentConfig {
    /// Full MNIST, 50 epochs.
    pub fn full_scale() -> Self {
        ExperimentConfig { subset: 60_000, epochs: 50, ..ExperimentConfig::default() }
    }

    pub fn precision(&self) -> Result<PrecisionConfig, ConfigError> {
        let bits = MantissaBits::new(self.mantissa_bits).map_err(|e| bad("mantissa_bits", self.mantissa_bits, e))?;
        Ok(PrecisionConfig::new(bits, self.rounding.into(), self.granularity.into()))
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_epsilon: self.rmsprop_epsilon,
            seed: self.seed,
            init_scale: self.init_scale,
            init_perturbation: self.init_perturbation,
            precision: self.precision()?,
            timing: match self.timing {
                TimingArg::Batch => QuantizeTiming::EveryBatch,
                TimingArg::Epoch => QuantizeTiming::EveryEpoch,
            },
        })
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, ConfigError> {
        Ok(NetworkSpec {
            conv_layers: parse_conv(&self.conv)?,
            dense_layers: self.dense_layers,
            dense_units: self.dense_units,
            ..NetworkSpec::default()
        })
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "subset" => self.subset = parse(key, v)?,
            "test_subset" => self.test_subset = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "rmsprop_decay" => self.rmsprop_decay = parse(key, v)?,
            "rmsprop_epsilon" => self.rmsprop_epsilon = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "init_scale" => self.init_scale = parse(key, v)?,
            "init_perturbation" => self.init_perturbation = parse(key, v)?,
            "mantissa_bits" => self.mantissa_bits = parse(key, v)?,
            "rounding" => self.rounding = parse(key, v)?,
            "granularity" => self.granularity = parse(key, v)?,
            "timing" => self.timing = parse(key, v)?,
            "conv" => {
                parse_conv(v)?;
                self.conv = v.to_string();
            }
            "dense_layers" => self.dense_layers = parse(key, v)?,
            "dense_units" => self.dense_units = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_key_values(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        self.apply_text(&text)
    }
}

fn bad(key: &str, value: impl fmt::Display, reason: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.to_string(), reason: reason.to_string() }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

/// Parses flat `key = value` lines, later keys overriding earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Parses `8x5x5,16x5x5` into conv layer specs. An empty string means no
/// conv layers.
pub fn parse_conv(text: &str) -> Result<Vec<ConvSpec>, ConfigError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|part| {
            let dims: Vec<usize> = part
                .trim()
                .split('x')
                .map(|d| d.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad("conv", part, e))?;
            match dims[..] {
                [filters, rows, cols] => Ok(ConvSpec { filters, kernel: (rows, cols) }),
                _ => Err(bad("conv", part, "expected FILTERSxROWSxCOLS")),
            }
        })
        .collect()
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $(#[value(name = $text)] #[serde(rename = $text)] $variant),+
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("expected one of {:?}, got {other:?}", [$($text),+])),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }
    };
}

text_enum!(RoundingArg { Truncate => "truncate", Stochastic => "stochastic" });
text_enum!(GranularityArg { Batch => "batch", Layer => "layer", Op => "op", None => "none" });
text_enum!(TimingArg { Batch => "batch", Epoch => "epoch" });

impl From<RoundingArg> for Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::Truncate => Rounding::Truncate,
            RoundingArg::Stochastic => Rounding::Stochastic,
        }
    }
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Batch => Granularity::PerBatch,
            GranularityArg::Layer => Granularity::PerLayer,
            GranularityArg::Op => Granularity::PerOperation,
            GranularityArg::None => Granularity::None,
        }
    }
}
