//! Kernel expansions, margins and the scalar parameter objectives minimized
//! inside each training algorithm.
//!
//! Functions in the Hilbert space are never materialized. They are carried as
//! coefficient expansions `(1 / (lambda (t - 1))) sum_s alpha_s y_s K(z_s, .)`
//! and every quantity below is assembled from kernel evaluations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NsvmError, Result};
use crate::feature_maps::{FeatureObjective, Mode, Network, ParameterVector};
use crate::kernels::KernelSpec;
use crate::rng::RngState;

/// One stored term of an expansion built from explicit feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionTerm {
    pub alpha: f64,
    pub label: f64,
    pub point: Vec<f64>,
}

/// Expansion over stored feature vectors `z_s`, as maintained by the
/// single-sample algorithm. Only nonzero coefficients are kept.
#[derive(Clone, Debug)]
pub struct ExpansionState {
    pub terms: Vec<ExpansionTerm>,
    pub lambda: f64,
    /// Current step; margins are defined for `t >= 2`.
    pub t: usize,
}

impl ExpansionState {
    pub fn new(lambda: f64) -> Self {
        ExpansionState {
            terms: Vec::new(),
            lambda,
            t: 1,
        }
    }

    pub fn push(&mut self, alpha: f64, label: f64, point: Vec<f64>) {
        if alpha != 0.0 {
            self.terms.push(ExpansionTerm { alpha, label, point });
        }
    }

    fn scale(&self) -> Result<f64> {
        if self.t < 2 {
            return Err(NsvmError::invalid(format!(
                "margins are defined from step 2 on, got t = {}",
                self.t
            )));
        }
        Ok(self.lambda * (self.t - 1) as f64)
    }

    /// `sum_s alpha_s y_s K(z_s, z)` without the step normalization.
    pub fn raw_sum(&self, kernel: &KernelSpec, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|term| term.alpha * term.label * kernel.value(&term.point, z))
            .sum()
    }
}

/// `g_t = (1 / (lambda (t - 1))) sum_s alpha_s y_s K(z_s, z_t)`.
pub fn margin_alg1(state: &ExpansionState, z_t: &[f64], kernel: &KernelSpec) -> Result<f64> {
    let scale = state.scale()?;
    Ok(state.raw_sum(kernel, z_t) / scale)
}

/// Coefficients over training indices, stored densely with an index list of
/// the nonzero entries in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    alphas: Vec<f64>,
    support: Vec<usize>,
}

impl SupportSet {
    pub fn new(m: usize) -> Self {
        SupportSet {
            alphas: vec![0.0; m],
            support: Vec::new(),
        }
    }

    pub fn from_dense(alphas: Vec<f64>) -> Self {
        let support = alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(i, _)| i)
            .collect();
        SupportSet { alphas, support }
    }

    pub fn add(&mut self, index: usize, increment: f64) {
        if increment == 0.0 {
            return;
        }
        if self.alphas[index] == 0.0 {
            self.support.push(index);
        }
        self.alphas[index] += increment;
    }

    pub fn alpha(&self, index: usize) -> f64 {
        self.alphas[index]
    }

    pub fn dense(&self) -> &[f64] {
        &self.alphas
    }

    pub fn into_dense(self) -> Vec<f64> {
        self.alphas
    }

    /// Indices with a nonzero coefficient.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `sum_j alpha_j y_j K(feature(j), z)` over the support.
    pub fn raw_sum<'f, F>(&self, labels: &[f64], kernel: &KernelSpec, z: &[f64], feature: F) -> f64
    where
        F: Fn(usize) -> &'f [f64],
    {
        self.support
            .iter()
            .map(|&j| self.alphas[j] * labels[j] * kernel.value(feature(j), z))
            .sum()
    }
}

/// Margin of the representer-form algorithms, with every feature evaluated
/// at the current parameters (inference mode).
#[allow(clippy::too_many_arguments)]
pub fn margin_alg2(
    alphas: &SupportSet,
    labels: &[f64],
    inputs: &[Vec<f64>],
    theta: &ParameterVector,
    kernel: &KernelSpec,
    net: &Network,
    i_t: usize,
    lambda: f64,
    t: usize,
) -> Result<f64> {
    if t < 2 {
        return Err(NsvmError::invalid("margins are defined from step 2 on"));
    }
    let mut rng = RngState::new(0);
    let target = net.forward(theta, &inputs[i_t], Mode::Infer, &mut rng)?;
    let mut sum = 0.0;
    for &j in alphas.support() {
        let f = net.forward(theta, &inputs[j], Mode::Infer, &mut rng)?;
        sum += alphas.alpha(j) * labels[j] * kernel.value(&f, &target);
    }
    Ok(sum / (lambda * (t - 1) as f64))
}

/// Parameter objective of the single-sample algorithm for sample `x_it`:
/// `theta -> -(y_it / (lambda (t - 1))) sum_s alpha_s y_s K(z_s, F_theta(x_it))`.
pub struct Alg1Objective<'a> {
    pub state: &'a ExpansionState,
    pub kernel: &'a KernelSpec,
    pub label: f64,
}

impl FeatureObjective for Alg1Objective<'_> {
    fn value(&self, features: &[&[f64]]) -> Result<f64> {
        let scale = self.state.scale()?;
        Ok(-self.label * self.state.raw_sum(self.kernel, features[0]) / scale)
    }

    fn value_and_grad(&self, features: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        let scale = self.state.scale()?;
        let f = features[0];
        let mut grad = vec![0.0; f.len()];
        let mut sum = 0.0;
        for term in &self.state.terms {
            let c = term.alpha * term.label;
            sum += c * self.kernel.value_and_grad(&term.point, f, -self.label * c / scale, None, Some(&mut grad));
        }
        Ok((-self.label * sum / scale, vec![grad]))
    }
}

/// Parameter objective of the representer-form algorithm:
/// `theta -> -(y_it / (lambda (t - 1))) sum_j alpha_j y_j K(F_theta(x_j), F_theta(x_it))`.
///
/// Features are passed as a list of distinct inputs; `terms` maps each
/// support coefficient `alpha_j y_j` to its feature slot and `target` names
/// the slot of `x_it` (which may coincide with a support slot).
pub struct Alg2Objective<'a> {
    pub kernel: &'a KernelSpec,
    pub terms: Vec<(f64, usize)>,
    pub target: usize,
    pub label: f64,
    pub lambda: f64,
    pub t: usize,
}

impl Alg2Objective<'_> {
    fn scale(&self) -> Result<f64> {
        if self.t < 2 {
            return Err(NsvmError::invalid("margins are defined from step 2 on"));
        }
        Ok(self.lambda * (self.t - 1) as f64)
    }
}

impl FeatureObjective for Alg2Objective<'_> {
    fn value(&self, features: &[&[f64]]) -> Result<f64> {
        let scale = self.scale()?;
        let z = features[self.target];
        let sum: f64 = self
            .terms
            .iter()
            .map(|&(c, slot)| c * self.kernel.value(features[slot], z))
            .sum();
        Ok(-self.label * sum / scale)
    }

    fn value_and_grad(&self, features: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        let scale = self.scale()?;
        let z = features[self.target];
        let mut grads: Vec<Vec<f64>> = features.iter().map(|f| vec![0.0; f.len()]).collect();
        let mut target_grad = vec![0.0; z.len()];
        let mut sum = 0.0;
        for &(c, slot) in &self.terms {
            let w = -self.label * c / scale;
            let k = if slot == self.target {
                let mut other = vec![0.0; z.len()];
                let k = self
                    .kernel
                    .value_and_grad(z, z, w, Some(&mut other), Some(&mut target_grad));
                for (t, o) in target_grad.iter_mut().zip(other) {
                    *t += o;
                }
                k
            } else {
                self.kernel
                    .value_and_grad(features[slot], z, w, Some(&mut grads[slot]), Some(&mut target_grad))
            };
            sum += c * k;
        }
        for (g, t) in grads[self.target].iter_mut().zip(target_grad) {
            *g += t;
        }
        Ok((-self.label * sum / scale, grads))
    }
}

/// Smooth loss `L(beta, gamma)` comparing a target alignment `beta` with the
/// achieved alignment `gamma`.
pub trait AlignmentLoss {
    fn value(&self, target: f64, achieved: f64) -> f64;

    /// Partial derivative with respect to `achieved`.
    fn d_achieved(&self, target: f64, achieved: f64) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `(beta - gamma)^2`
    #[default]
    Squared,
}

impl AlignmentLoss for LossSpec {
    fn value(&self, target: f64, achieved: f64) -> f64 {
        match self {
            LossSpec::Squared => (target - achieved).powi(2),
        }
    }

    fn d_achieved(&self, target: f64, achieved: f64) -> f64 {
        match self {
            LossSpec::Squared => -2.0 * (target - achieved),
        }
    }
}

/// Loss of the kernel-target alignment of a gram block against the ideal value 1.
pub fn alignment_loss_alg4(gram_block: &DMatrix<f64>, labels: &[f64], loss: &dyn AlignmentLoss) -> Result<f64> {
    let a = crate::kernels::alignment(gram_block, labels)?;
    Ok(loss.value(1.0, a))
}

fn check_batch(labels: &[f64], features: &[&[f64]]) -> Result<()> {
    if labels.len() < 2 {
        return Err(NsvmError::invalid("batch size must be at least 2"));
    }
    if labels.len() != features.len() {
        return Err(NsvmError::DimensionMismatch {
            expected: labels.len(),
            got: features.len(),
        });
    }
    Ok(())
}

/// Summary sums of a batch gram block needed by the batch objectives.
struct BlockSums {
    gram: Vec<f64>,
    /// `sum_ij K_ij^2`
    sq: f64,
    /// `sum_ij y_i y_j K_ij`
    target: f64,
}

fn block_sums(kernel: &KernelSpec, labels: &[f64], features: &[&[f64]]) -> Result<BlockSums> {
    let k = labels.len();
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = kernel.value(features[i], features[j]);
            gram[i * k + j] = v;
            gram[j * k + i] = v;
        }
    }
    let mut sq = 0.0;
    let mut target = 0.0;
    for i in 0..k {
        for j in 0..k {
            let g = gram[i * k + j];
            sq += g * g;
            target += labels[i] * labels[j] * g;
        }
    }
    if sq == 0.0 {
        return Err(NsvmError::ZeroGram);
    }
    Ok(BlockSums { gram, sq, target })
}

/// Chains `d objective / d K_ij` (over ordered pairs) into feature gradients.
fn chain_pairs(kernel: &KernelSpec, features: &[&[f64]], d_gram: &[f64]) -> Vec<Vec<f64>> {
    let k = features.len();
    let mut grads: Vec<Vec<f64>> = features.iter().map(|f| vec![0.0; f.len()]).collect();
    for i in 0..k {
        for j in 0..k {
            let w = d_gram[i * k + j];
            if w == 0.0 {
                continue;
            }
            if i == j {
                let mut ga = vec![0.0; features[i].len()];
                let mut gb = vec![0.0; features[i].len()];
                kernel.value_and_grad(features[i], features[i], w, Some(&mut ga), Some(&mut gb));
                for ((g, a), b) in grads[i].iter_mut().zip(ga).zip(gb) {
                    *g += a + b;
                }
            } else {
                let (gi, gj) = pair_mut(&mut grads, i, j);
                kernel.value_and_grad(features[i], features[j], w, Some(gi), Some(gj));
            }
        }
    }
    grads
}

fn pair_mut(v: &mut [Vec<f64>], i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    if i < j {
        let (a, b) = v.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

/// Mini-batch objective: `mu * (coefficient surrogate) - alignment`, where the
/// surrogate is
/// `sum a_i a_j y_i y_j K_ij / (sqrt(sum (a_i a_j)^2) sqrt(sum K_ij^2))`
/// and is replaced by 0 when every batch coefficient vanishes.
pub struct Alg3Objective<'a> {
    pub kernel: &'a KernelSpec,
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub mu: f64,
}

impl Alg3Objective<'_> {
    /// `sqrt(sum_ij (a_i a_j)^2)`, or `None` when all coefficients are zero.
    fn alpha_norm(&self) -> Option<f64> {
        let mut s = 0.0;
        for a in &self.alphas {
            for b in &self.alphas {
                s += (a * b).powi(2);
            }
        }
        (s > 0.0).then(|| s.sqrt())
    }

    fn weighted(&self, gram: &[f64]) -> f64 {
        let k = self.labels.len();
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                s += self.alphas[i] * self.alphas[j] * self.labels[i] * self.labels[j] * gram[i * k + j];
            }
        }
        s
    }

    /// The two fractions separately: (surrogate, alignment).
    pub fn terms(&self, features: &[&[f64]]) -> Result<(f64, f64)> {
        check_batch(&self.labels, features)?;
        let sums = block_sums(self.kernel, &self.labels, features)?;
        let root = sums.sq.sqrt();
        let k = self.labels.len() as f64;
        let surrogate = match self.alpha_norm() {
            Some(an) => self.weighted(&sums.gram) / (an * root),
            None => 0.0,
        };
        Ok((surrogate, sums.target / (k * root)))
    }
}

impl FeatureObjective for Alg3Objective<'_> {
    fn value(&self, features: &[&[f64]]) -> Result<f64> {
        let (s, a) = self.terms(features)?;
        Ok(self.mu * s - a)
    }

    fn value_and_grad(&self, features: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        check_batch(&self.labels, features)?;
        if self.alphas.len() != self.labels.len() {
            return Err(NsvmError::DimensionMismatch {
                expected: self.labels.len(),
                got: self.alphas.len(),
            });
        }
        let sums = block_sums(self.kernel, &self.labels, features)?;
        let k = self.labels.len();
        let kf = k as f64;
        let root = sums.sq.sqrt();
        let cube = root * sums.sq;
        let an = self.alpha_norm();
        let weighted = an.map(|_| self.weighted(&sums.gram));
        let mut d_gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let g = sums.gram[i * k + j];
                let yy = self.labels[i] * self.labels[j];
                let mut d = -(yy / (kf * root) - sums.target * g / (kf * cube));
                if let (Some(an), Some(w)) = (an, weighted) {
                    let aa = self.alphas[i] * self.alphas[j] * yy;
                    d += self.mu * (aa / (an * root) - w * g / (an * cube));
                }
                d_gram[i * k + j] = d;
            }
        }
        let surrogate = match (an, weighted) {
            (Some(an), Some(w)) => w / (an * root),
            _ => 0.0,
        };
        let value = self.mu * surrogate - sums.target / (kf * root);
        Ok((value, chain_pairs(self.kernel, features, &d_gram)))
    }
}

/// Alignment objective of the two-stage algorithm: `L(1, alignment)` of the batch block.
pub struct AlignmentObjective<'a> {
    pub kernel: &'a KernelSpec,
    pub labels: Vec<f64>,
    pub loss: &'a dyn AlignmentLoss,
}

impl FeatureObjective for AlignmentObjective<'_> {
    fn value(&self, features: &[&[f64]]) -> Result<f64> {
        check_batch(&self.labels, features)?;
        let sums = block_sums(self.kernel, &self.labels, features)?;
        let a = sums.target / (self.labels.len() as f64 * sums.sq.sqrt());
        Ok(self.loss.value(1.0, a))
    }

    fn value_and_grad(&self, features: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
        check_batch(&self.labels, features)?;
        let sums = block_sums(self.kernel, &self.labels, features)?;
        let k = self.labels.len();
        let kf = k as f64;
        let root = sums.sq.sqrt();
        let cube = root * sums.sq;
        let a = sums.target / (kf * root);
        let outer = self.loss.d_achieved(1.0, a);
        let mut d_gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let g = sums.gram[i * k + j];
                let yy = self.labels[i] * self.labels[j];
                d_gram[i * k + j] = outer * (yy / (kf * root) - sums.target * g / (kf * cube));
            }
        }
        Ok((self.loss.value(1.0, a), chain_pairs(self.kernel, features, &d_gram)))
    }
}

/// A feature objective bound to a network and its inputs: a scalar function
/// of the parameters alone.
pub struct ThetaObjective<'a, O> {
    pub net: &'a Network,
    pub inputs: Vec<&'a [f64]>,
    pub objective: O,
    pub mode: Mode,
}

impl<O: FeatureObjective> ThetaObjective<'_, O> {
    pub fn value(&self, theta: &ParameterVector, rng: &mut RngState) -> Result<f64> {
        let features = self
            .inputs
            .iter()
            .map(|x| self.net.forward(theta, x, self.mode, rng))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        self.objective.value(&refs)
    }

    pub fn value_and_grad(&self, theta: &ParameterVector, rng: &mut RngState) -> Result<(f64, Vec<f64>)> {
        self.net.grad_theta(theta, &self.objective, &self.inputs, self.mode, rng)
    }
}

pub fn theta_objective_alg1<'a>(
    state: &'a ExpansionState,
    kernel: &'a KernelSpec,
    net: &'a Network,
    x_it: &'a [f64],
    y_it: f64,
) -> ThetaObjective<'a, Alg1Objective<'a>> {
    ThetaObjective {
        net,
        inputs: vec![x_it],
        objective: Alg1Objective {
            state,
            kernel,
            label: y_it,
        },
        mode: Mode::Train,
    }
}

pub fn theta_objective_alg3<'a>(
    alphas_batch: Vec<f64>,
    labels_batch: Vec<f64>,
    inputs_batch: Vec<&'a [f64]>,
    kernel: &'a KernelSpec,
    net: &'a Network,
    mu: f64,
) -> ThetaObjective<'a, Alg3Objective<'a>> {
    ThetaObjective {
        net,
        inputs: inputs_batch,
        objective: Alg3Objective {
            kernel,
            alphas: alphas_batch,
            labels: labels_batch,
            mu,
        },
        mode: Mode::Train,
    }
}
