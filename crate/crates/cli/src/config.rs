//! Run configuration documents for the `train` command.

use std::path::{Path, PathBuf};

use nsvm::feature_maps::{LayerSpec, NetSpec};
use nsvm::presets;
use nsvm::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training CSV.
    pub train: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory receiving `model.json`, `steps.jsonl` and `config.toml`.
    pub dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Dense 40-30-20-20 with ReLU on 20 inputs.
    Ringnorm,
    /// Two-layer convolutional net on 28x28 images.
    Mnist,
}

/// Either a named architecture or an explicit layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Project preset outputs onto the sphere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
}

impl NetSection {
    pub fn resolve(&self) -> Result<NetSpec, CliError> {
        match (self.preset, &self.input_shape, &self.layers) {
            (Some(preset), None, None) => {
                let normalize = self.normalize.unwrap_or(false);
                Ok(match preset {
                    Preset::Ringnorm => presets::ringnorm_net(normalize),
                    Preset::Mnist => presets::mnist_net(normalize),
                })
            }
            (None, Some(shape), layers) => {
                if self.normalize.is_some() {
                    return Err(CliError::usage("[net] `normalize` only applies to presets"));
                }
                Ok(NetSpec::new(shape.clone(), layers.clone().unwrap_or_default()))
            }
            _ => Err(CliError::usage(
                "[net] needs either `preset` or `input_shape` (with optional `layers`), not both",
            )),
        }
    }
}

/// The document as written by the user.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: i64,
    data: DataSection,
    output: OutputSection,
    #[serde(default)]
    net: Option<NetSection>,
    train: toml::Table,
}

/// Values given on the command line, applied on top of the document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub train_data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Fully resolved configuration: the network is spelled out layer by layer
/// and every override is applied. This is what gets persisted beside the
/// outputs of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub schema_version: i64,
    pub data: DataSection,
    pub output: OutputSection,
    pub train: TrainConfig,
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::usage(format!("cannot serialize resolved config: {e}")))
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, overrides).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
}

pub fn parse(text: &str, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::usage(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(CliError::usage(format!(
            "unsupported schema_version {}, expected {SCHEMA_VERSION}",
            raw.schema_version
        )));
    }
    let mut train = raw.train;
    if train.contains_key("net") {
        return Err(CliError::usage("the network goes in the [net] section, not [train.net]"));
    }
    if let Some(net) = &raw.net {
        let spec = net.resolve()?;
        let value = toml::Value::try_from(spec).map_err(|e| CliError::usage(e.to_string()))?;
        train.insert("net".into(), value);
    }
    if let Some(seed) = overrides.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::usage("seed must fit in a signed 64-bit integer"))?;
        train.insert("seed".into(), toml::Value::Integer(seed));
    }
    if let Some(steps) = overrides.steps {
        train.insert("steps".into(), toml::Value::Integer(steps as i64));
    }
    if let Some(lambda) = overrides.lambda {
        train.insert("lambda".into(), toml::Value::Float(lambda));
    }
    if let Some(lr) = overrides.learning_rate {
        let entry = train
            .entry("optimizer")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert("learning_rate".into(), toml::Value::Float(lr));
            }
            _ => return Err(CliError::usage("[train] `optimizer` must be a table")),
        }
    }
    let train: TrainConfig = toml::Value::Table(train)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage(format!("[train] {e}")))?;
    train.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let mut data = raw.data;
    if let Some(p) = &overrides.train_data {
        data.train = p.clone();
    }
    let mut output = raw.output;
    if let Some(p) = &overrides.out_dir {
        output.dir = p.clone();
    }
    Ok(ResolvedConfig {
        schema_version: SCHEMA_VERSION,
        data,
        output,
        train,
    })
}
