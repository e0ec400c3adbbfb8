//! Trained models, their decision functions, evaluation and persistence.
//!
//! Every variant evaluates a kernel expansion
//! `h(u) = (1 / (lambda T)) sum_t alpha_t y_t K(z_t, u)` on the features
//! `u = F_Theta(x)`. The `alg1` and `expansion` variants return `h(u)` as the
//! decision value; the `pipeline` variant treats the expansion as an inner
//! classifier and returns its sign as `+-1`.
//!
//! Models are stored as versioned JSON documents. Floats are written in
//! shortest round-trip form, so `load(save(m))` reproduces every value bit
//! for bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{NsvmError, Result};
use crate::feature_maps::{Mode, NetSpec, Network, ParameterVector};
use crate::kernels::KernelSpec;
use crate::rng::RngState;

pub const FORMAT_NAME: &str = "nsvm-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// One term per training step, with feature vectors recorded during training.
    Alg1,
    /// Terms over training samples, with features recomputed at the final parameters.
    Expansion,
    /// Feature map followed by an independently fitted kernel classifier.
    Pipeline,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::Alg1 => "alg1",
            ModelVariant::Expansion => "expansion",
            ModelVariant::Pipeline => "pipeline",
        }
    }
}

/// `h(u) = (1 / (lambda steps)) sum_t alphas[t] labels[t] K(points[t], u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelExpansion {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub steps: usize,
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl KernelExpansion {
    pub fn eval(&self, u: &[f64]) -> f64 {
        let sum: f64 = self
            .alphas
            .iter()
            .zip(&self.labels)
            .zip(&self.points)
            .filter(|((a, _), _)| **a != 0.0)
            .map(|((a, y), z)| a * y * self.kernel.value(z, u))
            .sum();
        sum / (self.lambda * self.steps as f64)
    }

    pub fn nonzero(&self) -> usize {
        self.alphas.iter().filter(|&&a| a != 0.0).count()
    }

    fn validate(&self, feature_dim: usize) -> Result<()> {
        self.kernel.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(NsvmError::ModelFormat("lambda must be positive".into()));
        }
        if self.steps == 0 {
            return Err(NsvmError::ModelFormat("steps must be positive".into()));
        }
        let n = self.alphas.len();
        if self.labels.len() != n || self.points.len() != n {
            return Err(NsvmError::ModelFormat(format!(
                "expansion lengths disagree: {} alphas, {} labels, {} points",
                n,
                self.labels.len(),
                self.points.len()
            )));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(NsvmError::ModelFormat("alphas must be finite and non-negative".into()));
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(NsvmError::ModelFormat("labels must be -1 or 1".into()));
        }
        for z in &self.points {
            if z.len() != feature_dim {
                return Err(NsvmError::ModelFormat(format!(
                    "stored point has dimension {}, expected {feature_dim}",
                    z.len()
                )));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(NsvmError::ModelFormat("stored points must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NsvmModel {
    pub variant: ModelVariant,
    pub net: NetSpec,
    pub theta: ParameterVector,
    pub expansion: KernelExpansion,
}

/// Sign rule: 1 whenever the decision value is non-negative.
pub fn sign_label(decision: f64) -> f64 {
    if decision >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl NsvmModel {
    pub fn kernel(&self) -> &KernelSpec {
        &self.expansion.kernel
    }

    /// Compiles the network once for repeated evaluation.
    pub fn compile(&self) -> Result<CompiledModel<'_>> {
        let network = Network::new(self.net.clone())?;
        if network.n_params() != self.theta.len() {
            return Err(NsvmError::DimensionMismatch {
                expected: network.n_params(),
                got: self.theta.len(),
            });
        }
        Ok(CompiledModel { model: self, network })
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        self.compile()?.decision(x)
    }

    pub fn classify(&self, x: &[f64]) -> Result<f64> {
        self.compile()?.classify(x)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        self.compile()?.evaluate(data)
    }

    pub fn validate(&self) -> Result<()> {
        let network = Network::new(self.net.clone())?;
        if network.n_params() != self.theta.len() {
            return Err(NsvmError::ModelFormat(format!(
                "theta has {} entries, network needs {}",
                self.theta.len(),
                network.n_params()
            )));
        }
        if self.theta.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(NsvmError::ModelFormat("theta must be finite".into()));
        }
        if self.variant == ModelVariant::Alg1 && self.expansion.alphas.len() != self.expansion.steps {
            return Err(NsvmError::ModelFormat(format!(
                "alg1 model stores {} terms for {} steps",
                self.expansion.alphas.len(),
                self.expansion.steps
            )));
        }
        self.expansion.validate(network.output_dim())
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<()> {
        let network = Network::new(self.net.clone())?;
        let file = ModelFile {
            format: FORMAT_NAME.to_string(),
            format_version: FORMAT_VERSION,
            variant: self.variant,
            dims: Dims {
                input_dim: network.input_dim(),
                feature_dim: network.output_dim(),
                params: self.theta.len(),
                terms: self.expansion.alphas.len(),
            },
            net: self.net.clone(),
            theta: self.theta.clone(),
            expansion: self.expansion.clone(),
        };
        let mut sink = sink;
        serde_json::to_writer(&mut sink, &file).map_err(|e| NsvmError::ModelFormat(e.to_string()))?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn save_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_reader(source).map_err(|e| NsvmError::ModelFormat(e.to_string()))?;
        match value.get("format").and_then(|v| v.as_str()) {
            Some(FORMAT_NAME) => {}
            other => return Err(NsvmError::ModelFormat(format!("not a model file (format {other:?})"))),
        }
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            other => {
                return Err(NsvmError::ModelFormat(format!(
                    "unsupported format version {other:?}, expected {FORMAT_VERSION}"
                )))
            }
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| NsvmError::ModelFormat(e.to_string()))?;
        let model = NsvmModel {
            variant: file.variant,
            net: file.net,
            theta: file.theta,
            expansion: file.expansion,
        };
        model.validate()?;
        let network = Network::new(model.net.clone())?;
        let dims = Dims {
            input_dim: network.input_dim(),
            feature_dim: network.output_dim(),
            params: model.theta.len(),
            terms: model.expansion.alphas.len(),
        };
        if dims != file.dims {
            return Err(NsvmError::ModelFormat(format!(
                "header dimensions {:?} disagree with contents {:?}",
                file.dims, dims
            )));
        }
        Ok(model)
    }

    /// Loads a model and checks that it is of the expected variant.
    pub fn load_expecting<R: Read>(source: R, expected: ModelVariant) -> Result<Self> {
        let model = Self::load(source)?;
        if model.variant != expected {
            return Err(NsvmError::VariantMismatch {
                expected: expected.name(),
                found: model.variant.name(),
            });
        }
        Ok(model)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(std::fs::File::open(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    input_dim: usize,
    feature_dim: usize,
    params: usize,
    terms: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    format_version: u32,
    variant: ModelVariant,
    dims: Dims,
    net: NetSpec,
    theta: ParameterVector,
    expansion: KernelExpansion,
}

/// A model with its network compiled.
pub struct CompiledModel<'a> {
    model: &'a NsvmModel,
    network: Network,
}

impl CompiledModel<'_> {
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        // inference never draws from the generator
        self.network
            .forward(&self.model.theta, x, Mode::Infer, &mut RngState::new(0))
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let u = self.features(x)?;
        let h = self.model.expansion.eval(&u);
        Ok(match self.model.variant {
            ModelVariant::Pipeline => sign_label(h),
            _ => h,
        })
    }

    pub fn classify(&self, x: &[f64]) -> Result<f64> {
        Ok(sign_label(self.decision(x)?))
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        if data.is_empty() {
            return Err(NsvmError::invalid("cannot evaluate on an empty dataset"));
        }
        let mut m = Metrics::default();
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let p = self.classify(x)?;
            match (y > 0.0, p > 0.0) {
                (true, true) => m.tp += 1,
                (false, false) => m.tn += 1,
                (false, true) => m.fp += 1,
                (true, false) => m.fn_ += 1,
            }
        }
        m.m = data.len();
        m.accuracy = (m.tp + m.tn) as f64 / m.m as f64;
        Ok(m)
    }
}

/// Accuracy and confusion counts with +1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub m: usize,
}
