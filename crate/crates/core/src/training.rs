//! The five training procedures: kernelized Pegasos and the four neural SVM
//! variants that learn a feature map alongside the kernel expansion.

use std::convert::TryFrom;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{NsvmError, Result};
use crate::feature_maps::{FeatureObjective, Mode, NetSpec, Network, ParameterVector};
use crate::kernels::KernelSpec;
use crate::models::{KernelExpansion, ModelVariant, NsvmModel};
use crate::objectives::{Alg1Objective, Alg2Objective, Alg3Objective, AlignmentObjective, ExpansionState, LossSpec, SupportSet};
use crate::optimizer::{OptimizerConfig, Sgd};
use crate::rng::{RngState, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Algorithm {
    /// Kernelized Pegasos on the raw inputs.
    Pegasos,
    /// Single-sample updates with feature vectors stored as computed.
    SingleSample,
    /// Single-sample updates over training-sample coefficients.
    Representer,
    /// Mini-batch updates with an alignment-regularized objective.
    MiniBatch,
    /// Alignment pretraining followed by an independent SVM fit.
    TwoStage,
}

impl TryFrom<u8> for Algorithm {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Ok(match v {
            0 => Algorithm::Pegasos,
            1 => Algorithm::SingleSample,
            2 => Algorithm::Representer,
            3 => Algorithm::MiniBatch,
            4 => Algorithm::TwoStage,
            _ => return Err(format!("unknown algorithm {v}, expected 0 to 4")),
        })
    }
}

impl From<Algorithm> for u8 {
    fn from(a: Algorithm) -> u8 {
        a as u8
    }
}

/// SVM fitter used in the second stage of the two-stage algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitterConfig {
    /// Kernelized Pegasos; `lambda` defaults to the run's lambda.
    Pegasos {
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub lambda: f64,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitter: Option<FitterConfig>,
}

impl TrainConfig {
    /// A configuration with only the fields every algorithm needs; the
    /// algorithm-specific ones are filled with their defaults.
    pub fn new(algorithm: Algorithm, steps: usize, lambda: f64, kernel: KernelSpec, net: NetSpec) -> Self {
        use Algorithm::*;
        let with_net = algorithm != Pegasos;
        TrainConfig {
            algorithm,
            steps,
            lambda,
            kernel,
            seed: 0,
            net: with_net.then_some(net),
            optimizer: with_net.then(OptimizerConfig::default),
            mu: (algorithm == MiniBatch).then_some(1.0),
            batch_size: matches!(algorithm, MiniBatch | TwoStage).then_some(16),
            loss: (algorithm == TwoStage).then_some(LossSpec::Squared),
            fitter: (algorithm == TwoStage).then_some(FitterConfig::Pegasos { steps, lambda: None }),
        }
    }

    /// Checks ranges and that each algorithm-specific field is present
    /// exactly when the algorithm uses it.
    pub fn validate(&self) -> Result<()> {
        use Algorithm::*;
        let a = self.algorithm;
        let field = |name: &str, present: bool, wanted: bool| -> Result<()> {
            match (present, wanted) {
                (true, false) => Err(NsvmError::invalid(format!("`{name}` does not apply to algorithm {}", a as u8))),
                (false, true) => Err(NsvmError::invalid(format!("algorithm {} requires `{name}`", a as u8))),
                _ => Ok(()),
            }
        };
        field("net", self.net.is_some(), a != Pegasos)?;
        field("mu", self.mu.is_some(), a == MiniBatch)?;
        field("batch_size", self.batch_size.is_some(), matches!(a, MiniBatch | TwoStage))?;
        field("fitter", self.fitter.is_some(), a == TwoStage)?;
        if self.optimizer.is_some() && a == Pegasos {
            return Err(NsvmError::invalid("`optimizer` does not apply to algorithm 0"));
        }
        if self.loss.is_some() && a != TwoStage {
            return Err(NsvmError::invalid(format!("`loss` does not apply to algorithm {}", a as u8)));
        }
        if self.steps == 0 && a != TwoStage {
            return Err(NsvmError::invalid("steps must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(NsvmError::invalid("lambda must be positive"));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(NsvmError::invalid("mu must be positive"));
            }
        }
        if let Some(k) = self.batch_size {
            if k < 2 {
                return Err(NsvmError::invalid("batch_size must be at least 2"));
            }
        }
        if let Some(FitterConfig::Pegasos { steps, lambda }) = self.fitter {
            if steps == 0 {
                return Err(NsvmError::invalid("fitter steps must be positive"));
            }
            if let Some(l) = lambda {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(NsvmError::invalid("fitter lambda must be positive"));
                }
            }
        }
        self.kernel.validate()?;
        self.optimizer().validate()?;
        if let Some(net) = &self.net {
            Network::new(net.clone())?;
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or_default()
    }

    fn network(&self, data: &Dataset) -> Result<Network> {
        let spec = self.net.clone().unwrap_or_else(|| NetSpec::identity(data.dim()));
        let net = Network::new(spec)?;
        if net.input_dim() != data.dim() {
            return Err(NsvmError::DimensionMismatch {
                expected: net.input_dim(),
                got: data.dim(),
            });
        }
        Ok(net)
    }

    fn batch(&self, m: usize) -> Result<usize> {
        let k = self.batch_size.ok_or_else(|| NsvmError::invalid("batch_size is required"))?;
        if k > m {
            return Err(NsvmError::invalid(format!("batch_size {k} exceeds the {m} training samples")));
        }
        Ok(k)
    }
}

/// Which branch a step took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Init,
    Update,
    Skip,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub branch: Branch,
    /// `y g` for single-sample algorithms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Number of violated margins in the step.
    pub violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub log: Vec<StepRecord>,
    pub nonzero_alphas: usize,
    pub duration: Duration,
}

/// Result of the single-sample algorithm: one term per step.
#[derive(Clone, Debug)]
pub struct Alg1Output {
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub theta: ParameterVector,
}

/// Coefficients over training samples together with every sample's
/// features at the final parameters.
#[derive(Clone, Debug)]
pub struct ExpansionOutput {
    pub alphas: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub theta: ParameterVector,
}

impl ExpansionOutput {
    /// `(1 / (lambda steps)) sum_j alpha_j y_j K(z_j, z_i)` at training sample `i`.
    pub fn decision_at(&self, i: usize, labels: &[f64], kernel: &KernelSpec, lambda: f64, steps: usize) -> f64 {
        let z = &self.features[i];
        let sum: f64 = self
            .alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, a)| a * labels[j] * kernel.value(&self.features[j], z))
            .sum();
        sum / (lambda * steps as f64)
    }

    fn into_expansion(self, labels: &[f64], kernel: KernelSpec, lambda: f64, steps: usize) -> (ParameterVector, KernelExpansion) {
        let mut exp = KernelExpansion {
            kernel,
            lambda,
            steps,
            alphas: Vec::new(),
            labels: Vec::new(),
            points: Vec::new(),
        };
        for (j, (a, z)) in self.alphas.into_iter().zip(self.features).enumerate() {
            if a != 0.0 {
                exp.alphas.push(a);
                exp.labels.push(labels[j]);
                exp.points.push(z);
            }
        }
        (self.theta, exp)
    }
}

/// Fits a kernel classifier on labeled feature vectors.
pub trait SvmFitter {
    fn fit(&self, data: &Dataset, kernel: &KernelSpec) -> Result<KernelExpansion>;
}

/// Kernelized Pegasos as a stand-alone fitter.
#[derive(Clone, Copy, Debug)]
pub struct PegasosFitter {
    pub steps: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl SvmFitter for PegasosFitter {
    fn fit(&self, data: &Dataset, kernel: &KernelSpec) -> Result<KernelExpansion> {
        check_data(data)?;
        let mut sampler = RngState::for_stream(self.seed, Stream::Fitter);
        let alphas = pegasos(data, kernel, self.lambda, self.steps, &mut sampler, &mut Vec::new())?;
        let out = ExpansionOutput {
            alphas,
            features: data.inputs.clone(),
            theta: ParameterVector::zeros(0),
        };
        Ok(out.into_expansion(&data.labels, *kernel, self.lambda, self.steps).1)
    }
}

fn check_data(data: &Dataset) -> Result<()> {
    if data.len() < 2 {
        return Err(NsvmError::invalid("training needs at least two samples"));
    }
    data.require_both_classes()
}

fn numeric(step: usize) -> impl Fn(NsvmError) -> NsvmError {
    move |e| match e {
        NsvmError::NumericFailure { .. } => e,
        NsvmError::NonFinite(_) | NsvmError::NonFiniteActivation { .. } | NsvmError::ZeroGram => {
            NsvmError::NumericFailure {
                step,
                reason: e.to_string(),
            }
        }
        other => other,
    }
}

fn finite(value: f64, step: usize, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NsvmError::NumericFailure {
            step,
            reason: format!("{what} is {value}"),
        })
    }
}

/// `y * sum / (lambda (t - 1))`, shared by every single-sample margin test.
fn margin(sum: f64, label: f64, lambda: f64, t: usize) -> f64 {
    label * (sum / (lambda * (t - 1) as f64))
}

fn pegasos(
    data: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    steps: usize,
    sampler: &mut RngState,
    log: &mut Vec<StepRecord>,
) -> Result<Vec<f64>> {
    let m = data.len();
    let mut alphas = SupportSet::new(m);
    let first = sampler.gen_range(0..m);
    alphas.add(first, 1.0);
    log.push(init_record());
    for t in 2..=steps {
        let i = sampler.gen_range(0..m);
        let sum = alphas.raw_sum(&data.labels, kernel, &data.inputs[i], |j| &data.inputs[j]);
        let yg = finite(margin(sum, data.labels[i], lambda, t), t, "margin")?;
        let violated = yg < 1.0;
        if violated {
            alphas.add(i, 1.0);
        }
        log.push(single_record(t, yg, violated, None));
    }
    Ok(alphas.into_dense())
}

fn init_record() -> StepRecord {
    StepRecord {
        step: 1,
        branch: Branch::Init,
        margin: None,
        violations: 0,
        objective: None,
    }
}

fn single_record(step: usize, yg: f64, violated: bool, objective: Option<f64>) -> StepRecord {
    StepRecord {
        step,
        branch: if violated { Branch::Update } else { Branch::Skip },
        margin: Some(yg),
        violations: usize::from(violated),
        objective,
    }
}

fn finish(log: Vec<StepRecord>, nonzero: usize, start: Instant) -> TrainReport {
    TrainReport {
        log,
        nonzero_alphas: nonzero,
        duration: start.elapsed(),
    }
}

fn nonzero(alphas: &[f64]) -> usize {
    alphas.iter().filter(|&&a| a != 0.0).count()
}

/// Kernelized Pegasos on the raw inputs. Returns the coefficient vector.
pub fn train_alg0(data: &Dataset, cfg: &TrainConfig) -> Result<(Vec<f64>, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_data(data)?;
    let mut sampler = RngState::for_stream(cfg.seed, Stream::Sampling);
    let mut log = Vec::with_capacity(cfg.steps);
    let alphas = pegasos(data, &cfg.kernel, cfg.lambda, cfg.steps, &mut sampler, &mut log)?;
    let n = nonzero(&alphas);
    Ok((alphas, finish(log, n, start)))
}

/// Single-sample training with stored feature vectors.
pub fn train_alg1(data: &Dataset, cfg: &TrainConfig) -> Result<(Alg1Output, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_data(data)?;
    let net = cfg.network(data)?;
    let kernel = &cfg.kernel;
    let mut sampler = RngState::for_stream(cfg.seed, Stream::Sampling);
    let mut dropout = RngState::for_stream(cfg.seed, Stream::Dropout);
    let mut theta = net.init_params(&mut RngState::for_stream(cfg.seed, Stream::Init));
    let mut opt = Sgd::new(cfg.optimizer(), theta.len());
    let m = data.len();
    let t_max = cfg.steps;

    let mut out = Alg1Output {
        alphas: Vec::with_capacity(t_max),
        labels: Vec::with_capacity(t_max),
        points: Vec::with_capacity(t_max),
        theta: ParameterVector::zeros(0),
    };
    let mut state = ExpansionState::new(cfg.lambda);
    let mut log = Vec::with_capacity(t_max);

    let i = sampler.gen_range(0..m);
    let z = net
        .forward(&theta, &data.inputs[i], Mode::Train, &mut dropout)
        .map_err(numeric(1))?;
    state.push(1.0, data.labels[i], z.clone());
    out.alphas.push(1.0);
    out.labels.push(data.labels[i]);
    out.points.push(z);
    log.push(init_record());

    for t in 2..=t_max {
        let i = sampler.gen_range(0..m);
        let y = data.labels[i];
        let tape = net
            .forward_tape(&theta, &data.inputs[i], Mode::Train, &mut dropout)
            .map_err(numeric(t))?;
        let z = tape.output().to_vec();
        state.t = t;
        let yg = finite(margin(state.raw_sum(kernel, &z), y, cfg.lambda, t), t, "margin")?;
        let violated = yg < 1.0;
        let mut objective = None;
        if violated {
            let obj = Alg1Objective {
                state: &state,
                kernel,
                label: y,
            };
            let (value, d_features) = obj.value_and_grad(&[&z])?;
            finite(value, t, "objective")?;
            if !theta.is_empty() {
                let mut grad = vec![0.0; theta.len()];
                net.backward(&tape, &theta, &d_features[0], &mut grad)?;
                opt.step(theta.as_mut_slice(), &grad).map_err(numeric(t))?;
            }
            objective = Some(value);
            state.push(1.0, y, z.clone());
        }
        out.alphas.push(if violated { 1.0 } else { 0.0 });
        out.labels.push(y);
        out.points.push(z);
        log.push(single_record(t, yg, violated, objective));
    }
    out.theta = theta;
    let n = nonzero(&out.alphas);
    Ok((out, finish(log, n, start)))
}

/// Infer-mode features at the current parameters, computed on demand.
struct FeatureCache {
    features: Vec<Option<Vec<f64>>>,
    filled: Vec<usize>,
}

impl FeatureCache {
    fn new(m: usize) -> Self {
        FeatureCache {
            features: vec![None; m],
            filled: Vec::new(),
        }
    }

    fn ensure(&mut self, net: &Network, theta: &ParameterVector, inputs: &[Vec<f64>], i: usize, step: usize) -> Result<()> {
        if self.features[i].is_none() {
            // inference never draws from the generator
            let f = net
                .forward(theta, &inputs[i], Mode::Infer, &mut RngState::new(0))
                .map_err(numeric(step))?;
            self.features[i] = Some(f);
            self.filled.push(i);
        }
        Ok(())
    }

    fn get(&self, i: usize) -> &[f64] {
        self.features[i].as_deref().expect("feature computed before use")
    }

    fn clear(&mut self) {
        for i in self.filled.drain(..) {
            self.features[i] = None;
        }
    }
}

fn final_features(net: &Network, theta: &ParameterVector, data: &Dataset, step: usize) -> Result<Vec<Vec<f64>>> {
    data.inputs
        .iter()
        .map(|x| net.forward(theta, x, Mode::Infer, &mut RngState::new(0)))
        .collect::<Result<Vec<_>>>()
        .map_err(numeric(step))
}

/// Single-sample training over training-sample coefficients, with every
/// support feature recomputed at the current parameters.
pub fn train_alg2(data: &Dataset, cfg: &TrainConfig) -> Result<(ExpansionOutput, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_data(data)?;
    let net = cfg.network(data)?;
    let kernel = &cfg.kernel;
    let mut sampler = RngState::for_stream(cfg.seed, Stream::Sampling);
    let mut dropout = RngState::for_stream(cfg.seed, Stream::Dropout);
    let mut theta = net.init_params(&mut RngState::for_stream(cfg.seed, Stream::Init));
    let mut opt = Sgd::new(cfg.optimizer(), theta.len());
    let m = data.len();
    let labels = &data.labels;
    let mut alphas = SupportSet::new(m);
    let mut cache = FeatureCache::new(m);
    let mut log = Vec::with_capacity(cfg.steps);

    alphas.add(sampler.gen_range(0..m), 1.0);
    log.push(init_record());
    for t in 2..=cfg.steps {
        let i = sampler.gen_range(0..m);
        for &j in alphas.support() {
            cache.ensure(&net, &theta, &data.inputs, j, t)?;
        }
        cache.ensure(&net, &theta, &data.inputs, i, t)?;
        let sum = alphas.raw_sum(labels, kernel, cache.get(i), |j| cache.get(j));
        let yg = finite(margin(sum, labels[i], cfg.lambda, t), t, "margin")?;
        let violated = yg < 1.0;
        let mut objective = None;
        if violated {
            if !theta.is_empty() {
                let mut slots: Vec<&[f64]> = alphas.support().iter().map(|&j| data.inputs[j].as_slice()).collect();
                let terms = alphas
                    .support()
                    .iter()
                    .enumerate()
                    .map(|(slot, &j)| (alphas.alpha(j) * labels[j], slot))
                    .collect();
                let target = match alphas.support().iter().position(|&j| j == i) {
                    Some(slot) => slot,
                    None => {
                        slots.push(&data.inputs[i]);
                        slots.len() - 1
                    }
                };
                let obj = Alg2Objective {
                    kernel,
                    terms,
                    target,
                    label: labels[i],
                    lambda: cfg.lambda,
                    t,
                };
                let (value, grad) = net
                    .grad_theta(&theta, &obj, &slots, Mode::Train, &mut dropout)
                    .map_err(numeric(t))?;
                finite(value, t, "objective")?;
                opt.step(theta.as_mut_slice(), &grad).map_err(numeric(t))?;
                cache.clear();
                objective = Some(value);
            }
            alphas.add(i, 1.0);
        }
        log.push(single_record(t, yg, violated, objective));
    }
    let features = final_features(&net, &theta, data, cfg.steps)?;
    let alphas = alphas.into_dense();
    let n = nonzero(&alphas);
    Ok((ExpansionOutput { alphas, features, theta }, finish(log, n, start)))
}

fn draw_batch(sampler: &mut RngState, m: usize, k: usize) -> Vec<usize> {
    index::sample(sampler, m, k).into_vec()
}

/// Mini-batch training: batch margins at the current parameters, `1/k`
/// coefficient increments, and one parameter step per iteration.
pub fn train_alg3(data: &Dataset, cfg: &TrainConfig) -> Result<(ExpansionOutput, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_data(data)?;
    let m = data.len();
    let k = cfg.batch(m)?;
    let inc = 1.0 / k as f64;
    let mu = cfg.mu.unwrap_or(1.0);
    let net = cfg.network(data)?;
    let kernel = &cfg.kernel;
    let labels = &data.labels;
    let mut sampler = RngState::for_stream(cfg.seed, Stream::Sampling);
    let mut dropout = RngState::for_stream(cfg.seed, Stream::Dropout);
    let mut theta = net.init_params(&mut RngState::for_stream(cfg.seed, Stream::Init));
    let mut opt = Sgd::new(cfg.optimizer(), theta.len());
    let mut alphas = SupportSet::new(m);
    let mut cache = FeatureCache::new(m);
    let mut log = Vec::with_capacity(cfg.steps);

    for j in draw_batch(&mut sampler, m, k) {
        alphas.add(j, inc);
    }
    log.push(init_record());
    for t in 2..=cfg.steps {
        let batch = draw_batch(&mut sampler, m, k);
        for &j in alphas.support() {
            cache.ensure(&net, &theta, &data.inputs, j, t)?;
        }
        let mut violated = Vec::new();
        for &i in &batch {
            cache.ensure(&net, &theta, &data.inputs, i, t)?;
            let sum = alphas.raw_sum(labels, kernel, cache.get(i), |j| cache.get(j));
            let yg = finite(margin(sum, labels[i], cfg.lambda, t), t, "margin")?;
            if yg < 1.0 {
                violated.push(i);
            }
        }
        for &i in &violated {
            alphas.add(i, inc);
        }
        let obj = Alg3Objective {
            kernel,
            alphas: batch.iter().map(|&i| alphas.alpha(i)).collect(),
            labels: batch.iter().map(|&i| labels[i]).collect(),
            mu,
        };
        let inputs: Vec<&[f64]> = batch.iter().map(|&i| data.inputs[i].as_slice()).collect();
        let (value, grad) = net
            .grad_theta(&theta, &obj, &inputs, Mode::Train, &mut dropout)
            .map_err(numeric(t))?;
        finite(value, t, "objective")?;
        opt.step(theta.as_mut_slice(), &grad).map_err(numeric(t))?;
        cache.clear();
        log.push(StepRecord {
            step: t,
            branch: if violated.is_empty() { Branch::Skip } else { Branch::Update },
            margin: None,
            violations: violated.len(),
            objective: Some(value),
        });
    }
    let features = final_features(&net, &theta, data, cfg.steps)?;
    let alphas = alphas.into_dense();
    let n = nonzero(&alphas);
    Ok((ExpansionOutput { alphas, features, theta }, finish(log, n, start)))
}

/// Result of the two-stage algorithm: parameters and the fitted classifier
/// on the feature space.
#[derive(Clone, Debug)]
pub struct TwoStageOutput {
    pub theta: ParameterVector,
    pub classifier: KernelExpansion,
}

/// Alignment pretraining of the feature map for `cfg.steps` steps, followed
/// by the fitter configured in `cfg`.
pub fn train_alg4(data: &Dataset, cfg: &TrainConfig) -> Result<(TwoStageOutput, TrainReport)> {
    cfg.validate()?;
    let fitter = match cfg.fitter {
        Some(FitterConfig::Pegasos { steps, lambda }) => PegasosFitter {
            steps,
            lambda: lambda.unwrap_or(cfg.lambda),
            seed: cfg.seed,
        },
        None => return Err(NsvmError::invalid("algorithm 4 requires `fitter`")),
    };
    train_alg4_with(data, cfg, &fitter)
}

/// As [`train_alg4`], with an arbitrary second-stage fitter.
pub fn train_alg4_with(data: &Dataset, cfg: &TrainConfig, fitter: &dyn SvmFitter) -> Result<(TwoStageOutput, TrainReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_data(data)?;
    let m = data.len();
    let k = cfg.batch(m)?;
    let loss = cfg.loss.unwrap_or_default();
    let net = cfg.network(data)?;
    let mut sampler = RngState::for_stream(cfg.seed, Stream::Sampling);
    let mut dropout = RngState::for_stream(cfg.seed, Stream::Dropout);
    let mut theta = net.init_params(&mut RngState::for_stream(cfg.seed, Stream::Init));
    let mut opt = Sgd::new(cfg.optimizer(), theta.len());
    let mut log = Vec::with_capacity(cfg.steps);

    for t in 1..=cfg.steps {
        let batch = draw_batch(&mut sampler, m, k);
        let obj = AlignmentObjective {
            kernel: &cfg.kernel,
            labels: batch.iter().map(|&i| data.labels[i]).collect(),
            loss: &loss,
        };
        let inputs: Vec<&[f64]> = batch.iter().map(|&i| data.inputs[i].as_slice()).collect();
        let (value, grad) = net
            .grad_theta(&theta, &obj, &inputs, Mode::Train, &mut dropout)
            .map_err(numeric(t))?;
        finite(value, t, "objective")?;
        opt.step(theta.as_mut_slice(), &grad).map_err(numeric(t))?;
        log.push(StepRecord {
            step: t,
            branch: Branch::Update,
            margin: None,
            violations: 0,
            objective: Some(value),
        });
    }
    let features = final_features(&net, &theta, data, cfg.steps)?;
    let mut z = Dataset::new(features, data.labels.clone())?;
    z.standardization = None;
    let classifier = fitter.fit(&z, &cfg.kernel)?;
    let n = classifier.nonzero();
    Ok((TwoStageOutput { theta, classifier }, finish(log, n, start)))
}

/// Trains with the algorithm named in `cfg` and packages the result as a model.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(NsvmModel, TrainReport)> {
    cfg.validate()?;
    let net_spec = cfg.net.clone().unwrap_or_else(|| NetSpec::identity(data.dim()));
    let expansion_model = |out: ExpansionOutput| {
        let (theta, expansion) = out.into_expansion(&data.labels, cfg.kernel, cfg.lambda, cfg.steps);
        NsvmModel {
            variant: ModelVariant::Expansion,
            net: net_spec.clone(),
            theta,
            expansion,
        }
    };
    Ok(match cfg.algorithm {
        Algorithm::Pegasos => {
            let (alphas, report) = train_alg0(data, cfg)?;
            let out = ExpansionOutput {
                alphas,
                features: data.inputs.clone(),
                theta: ParameterVector::zeros(0),
            };
            (expansion_model(out), report)
        }
        Algorithm::SingleSample => {
            let (out, report) = train_alg1(data, cfg)?;
            let model = NsvmModel {
                variant: ModelVariant::Alg1,
                net: net_spec.clone(),
                theta: out.theta,
                expansion: KernelExpansion {
                    kernel: cfg.kernel,
                    lambda: cfg.lambda,
                    steps: cfg.steps,
                    alphas: out.alphas,
                    labels: out.labels,
                    points: out.points,
                },
            };
            (model, report)
        }
        Algorithm::Representer => {
            let (out, report) = train_alg2(data, cfg)?;
            (expansion_model(out), report)
        }
        Algorithm::MiniBatch => {
            let (out, report) = train_alg3(data, cfg)?;
            (expansion_model(out), report)
        }
        Algorithm::TwoStage => {
            let (out, report) = train_alg4(data, cfg)?;
            let model = NsvmModel {
                variant: ModelVariant::Pipeline,
                net: net_spec.clone(),
                theta: out.theta,
                expansion: out.classifier,
            };
            (model, report)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_ringnorm, gen_separable_2d};
    use crate::feature_maps::LayerSpec;

    fn small_net(d: usize) -> NetSpec {
        NetSpec::new(
            vec![d],
            vec![LayerSpec::dense(d, 6), LayerSpec::Relu, LayerSpec::dense(6, 4), LayerSpec::L2Normalize { epsilon: 1e-12 }],
        )
    }

    fn two_points() -> Dataset {
        Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn algorithm_ids_round_trip() {
        for id in 0..5u8 {
            let a = Algorithm::try_from(id).unwrap();
            assert_eq!(u8::from(a), id);
        }
        assert!(Algorithm::try_from(5).is_err());
    }

    #[test]
    fn algorithm_specific_fields() {
        let net = small_net(2);
        for id in 0..5u8 {
            let cfg = TrainConfig::new(Algorithm::try_from(id).unwrap(), 10, 0.1, KernelSpec::rbf(1.0), net.clone());
            cfg.validate().unwrap();
        }
        let mut cfg = TrainConfig::new(Algorithm::SingleSample, 10, 0.1, KernelSpec::rbf(1.0), net.clone());
        cfg.batch_size = Some(4);
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(Algorithm::MiniBatch, 10, 0.1, KernelSpec::rbf(1.0), net.clone());
        cfg.batch_size = None;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::new(Algorithm::MiniBatch, 10, 0.1, KernelSpec::rbf(1.0), net);
        cfg.batch_size = Some(1);
        assert!(cfg.validate().is_err());
        cfg.batch_size = Some(2);
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn alg0_first_step_unrolled() {
        let data = two_points();
        let cfg = TrainConfig::new(Algorithm::Pegasos, 2, 0.5, KernelSpec::linear(), NetSpec::identity(2));
        let (alphas, report) = train_alg0(&data, &cfg).unwrap();
        // replay the sampling stream to learn i1 and i2
        let mut s = RngState::for_stream(0, Stream::Sampling);
        let (i1, i2): (usize, usize) = (s.gen_range(0..2), s.gen_range(0..2));
        let k = KernelSpec::linear().value(&data.inputs[i1], &data.inputs[i2]);
        let expect = data.labels[i2] * (1.0 / 0.5) * data.labels[i1] * k;
        assert_eq!(report.log[1].margin, Some(expect));
        let total: f64 = alphas.iter().sum();
        assert_eq!(total, if expect < 1.0 { 2.0 } else { 1.0 });
    }

    #[test]
    fn alg0_increment_discipline() {
        let data = gen_separable_2d(40, 0.05, 3);
        let cfg = TrainConfig::new(Algorithm::Pegasos, 300, 0.01, KernelSpec::linear(), NetSpec::identity(2));
        let (alphas, report) = train_alg0(&data, &cfg).unwrap();
        assert!(alphas.iter().all(|&a| a >= 0.0 && a.fract() == 0.0));
        let total: f64 = alphas.iter().sum();
        let updates = report.log.iter().filter(|r| r.branch == Branch::Update).count();
        assert_eq!(total, 1.0 + updates as f64);
        assert!(total <= 301.0);
        assert_eq!(report.log.len(), 300);
    }

    #[test]
    fn single_class_rejected() {
        let data = Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        for id in 0..5u8 {
            let cfg = TrainConfig::new(Algorithm::try_from(id).unwrap(), 5, 0.1, KernelSpec::rbf(1.0), small_net(2));
            assert!(matches!(train(&data, &cfg), Err(NsvmError::SingleClass)), "algorithm {id}");
        }
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let data = two_points();
        let mut cfg = TrainConfig::new(Algorithm::MiniBatch, 5, 0.1, KernelSpec::rbf(1.0), small_net(2));
        cfg.batch_size = Some(3);
        assert!(matches!(train_alg3(&data, &cfg), Err(NsvmError::InvalidArgument(_))));
    }

    #[test]
    fn alg1_single_step() {
        let data = two_points();
        let cfg = TrainConfig::new(Algorithm::SingleSample, 1, 0.1, KernelSpec::rbf(1.0), small_net(2));
        let (out, report) = train_alg1(&data, &cfg).unwrap();
        assert_eq!(out.alphas, vec![1.0]);
        assert_eq!(out.points.len(), 1);
        let net = Network::new(small_net(2)).unwrap();
        let theta1 = net.init_params(&mut RngState::for_stream(0, Stream::Init));
        assert_eq!(out.theta, theta1);
        assert_eq!(report.log.len(), 1);
    }

    #[test]
    fn alg1_log_replay() {
        let data = gen_ringnorm(60, 5);
        let mut cfg = TrainConfig::new(Algorithm::SingleSample, 200, 0.01, KernelSpec::rbf(1.0), small_net(20));
        cfg.optimizer = Some(OptimizerConfig {
            learning_rate: 1e-3,
            ..OptimizerConfig::default()
        });
        let (out, report) = train_alg1(&data, &cfg).unwrap();
        for rec in &report.log[1..] {
            let t = rec.step;
            let mut sum = 0.0;
            for s in 0..t - 1 {
                sum += out.alphas[s] * out.labels[s] * cfg.kernel.value(&out.points[s], &out.points[t - 1]);
            }
            let replay = out.labels[t - 1] * sum / (cfg.lambda * (t - 1) as f64);
            assert!((replay - rec.margin.unwrap()).abs() <= 1e-10 * replay.abs().max(1.0));
            assert_eq!(rec.branch == Branch::Update, out.alphas[t - 1] == 1.0);
        }
    }

    #[test]
    fn alg2_two_steps() {
        let data = gen_ringnorm(20, 2);
        let cfg = TrainConfig::new(Algorithm::Representer, 2, 0.1, KernelSpec::rbf(1.0), small_net(20));
        let (out, _) = train_alg2(&data, &cfg).unwrap();
        assert!(nonzero(&out.alphas) <= 2);
        assert_eq!(out.features.len(), 20);
    }

    #[test]
    fn alg3_full_batch_all_violate() {
        let data = gen_ringnorm(8, 4);
        let mut cfg = TrainConfig::new(Algorithm::MiniBatch, 5, 1e6, KernelSpec::rbf(1.0), small_net(20));
        cfg.batch_size = Some(8);
        let (out, report) = train_alg3(&data, &cfg).unwrap();
        for a in &out.alphas {
            assert!((a - 5.0 / 8.0).abs() < 1e-12);
        }
        assert!(report.log[1..].iter().all(|r| r.violations == 8));
    }

    #[test]
    fn alg3_decision_consistency() {
        let data = gen_ringnorm(40, 6);
        let mut cfg = TrainConfig::new(Algorithm::MiniBatch, 30, 0.01, KernelSpec::rbf(1.0), small_net(20));
        cfg.batch_size = Some(4);
        let (out, _) = train_alg3(&data, &cfg).unwrap();
        let inside: Vec<f64> = (0..data.len())
            .map(|i| out.decision_at(i, &data.labels, &cfg.kernel, cfg.lambda, cfg.steps))
            .collect();
        let (model, _) = train(&data, &cfg).unwrap();
        let compiled = model.compile().unwrap();
        for (i, x) in data.inputs.iter().enumerate() {
            let d = compiled.decision(x).unwrap();
            assert!((d - inside[i]).abs() <= 1e-8 * inside[i].abs().max(1.0));
        }
    }

    #[test]
    fn alg4_without_pretraining() {
        let data = gen_ringnorm(30, 7);
        let mut cfg = TrainConfig::new(Algorithm::TwoStage, 0, 0.1, KernelSpec::rbf(1.0), small_net(20));
        cfg.batch_size = Some(4);
        cfg.fitter = Some(FitterConfig::Pegasos { steps: 50, lambda: None });
        let (out, report) = train_alg4(&data, &cfg).unwrap();
        assert!(report.log.is_empty());
        let net = Network::new(small_net(20)).unwrap();
        assert_eq!(out.theta, net.init_params(&mut RngState::for_stream(0, Stream::Init)));
    }

    struct Constant;

    impl SvmFitter for Constant {
        fn fit(&self, data: &Dataset, kernel: &KernelSpec) -> Result<KernelExpansion> {
            Ok(KernelExpansion {
                kernel: *kernel,
                lambda: 1.0,
                steps: 1,
                alphas: vec![],
                labels: vec![],
                points: vec![],
            })
            .map(|e| {
                assert_eq!(data.dim(), 4);
                e
            })
        }
    }

    #[test]
    fn alg4_accepts_custom_fitter() {
        let data = gen_ringnorm(30, 7);
        let mut cfg = TrainConfig::new(Algorithm::TwoStage, 3, 0.1, KernelSpec::rbf(1.0), small_net(20));
        cfg.batch_size = Some(4);
        let (out, report) = train_alg4_with(&data, &cfg, &Constant).unwrap();
        assert_eq!(out.classifier.nonzero(), 0);
        assert_eq!(report.log.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let data = gen_ringnorm(40, 8);
        let mut cfg = TrainConfig::new(Algorithm::SingleSample, 50, 0.01, KernelSpec::rbf(1.0), small_net(20));
        cfg.seed = 11;
        let (a, _) = train(&data, &cfg).unwrap();
        let (b, _) = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_step() {
        let data = gen_ringnorm(40, 9);
        let net = NetSpec::new(vec![20], vec![LayerSpec::dense(20, 4)]);
        let mut cfg = TrainConfig::new(Algorithm::SingleSample, 2000, 1e-4, KernelSpec::linear(), net);
        cfg.optimizer = Some(OptimizerConfig {
            learning_rate: 1e6,
            momentum: 0.0,
            weight_decay: 0.0,
        });
        match train(&data, &cfg) {
            Err(NsvmError::NumericFailure { step, .. }) => assert!(step >= 2),
            other => panic!("expected a numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn config_serde_round_trip() {
        let mut cfg = TrainConfig::new(Algorithm::TwoStage, 4200, 1e-4, KernelSpec::rbf(1.0), small_net(20));
        cfg.fitter = Some(FitterConfig::Pegasos {
            steps: 33500,
            lambda: None,
        });
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("\"algorithm\":4"));
    }
}
