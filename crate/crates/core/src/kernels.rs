//! Positive-semidefinite kernels on feature space and gram-matrix diagnostics.
//!
//! A [`KernelSpec`] is either the linear kernel `<a, b>` or the Gaussian
//! kernel `exp(-gamma * |a - b|^2)`, optionally wrapped in the cosine-style
//! normalization `K(a, b) / sqrt(K(a, a) K(b, b))` which maps every feature
//! vector onto the unit sphere of the associated Hilbert space.
//!
//! Besides evaluation, kernels expose their partial derivatives with respect
//! to both arguments; the training objectives chain these into the network
//! backward pass.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{NsvmError, Result};

/// Lower bound applied to the normalization denominator.
pub const NORMALIZATION_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Bandwidth of the RBF kernel; ignored for the linear kernel.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub normalized: bool,
}

fn default_gamma() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            gamma: 1.0,
            normalized: false,
        }
    }

    pub fn rbf(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            normalized: false,
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(NsvmError::invalid(format!(
                "rbf gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Evaluates `K(a, b)` after checking dimensions and finiteness.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.validate()?;
        check_pair(a, b)?;
        Ok(self.value(a, b))
    }

    /// Unchecked evaluation used on hot paths where inputs were validated upstream.
    pub fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        let raw = self.raw(a, b);
        if !self.normalized {
            return raw;
        }
        let denom = (self.raw_self(a) * self.raw_self(b)).sqrt();
        raw / denom.max(NORMALIZATION_FLOOR)
    }

    fn raw(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Rbf => (-self.gamma * sq_dist(a, b)).exp(),
        }
    }

    fn raw_self(&self, a: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(a, a),
            KernelKind::Rbf => 1.0,
        }
    }

    /// Evaluates `K(a, b)` and accumulates `scale * dK/da` into `grad_a` and
    /// `scale * dK/db` into `grad_b` when those buffers are given.
    pub fn value_and_grad(
        &self,
        a: &[f64],
        b: &[f64],
        scale: f64,
        grad_a: Option<&mut [f64]>,
        grad_b: Option<&mut [f64]>,
    ) -> f64 {
        let raw = self.raw(a, b);
        let (value, inv_denom, self_a, self_b) = if self.normalized {
            let ka = self.raw_self(a);
            let kb = self.raw_self(b);
            let denom = (ka * kb).sqrt();
            if denom > NORMALIZATION_FLOOR {
                (raw / denom, 1.0 / denom, Some(ka), Some(kb))
            } else {
                // floor active: the denominator is a constant
                let inv = 1.0 / NORMALIZATION_FLOOR;
                (raw * inv, inv, None, None)
            }
        } else {
            (raw, 1.0, None, None)
        };

        match self.kind {
            KernelKind::Linear => {
                if let Some(ga) = grad_a {
                    let c = scale * inv_denom;
                    let corr = self_a.map(|ka| scale * value / ka);
                    for i in 0..a.len() {
                        ga[i] += c * b[i] - corr.map_or(0.0, |k| k * a[i]);
                    }
                }
                if let Some(gb) = grad_b {
                    let c = scale * inv_denom;
                    let corr = self_b.map(|kb| scale * value / kb);
                    for i in 0..b.len() {
                        gb[i] += c * a[i] - corr.map_or(0.0, |k| k * b[i]);
                    }
                }
            }
            KernelKind::Rbf => {
                // K(a, a) = 1 for the Gaussian kernel, so normalization only
                // rescales when the floor is active.
                let c = scale * 2.0 * self.gamma * raw * inv_denom;
                if let Some(ga) = grad_a {
                    for i in 0..a.len() {
                        ga[i] -= c * (a[i] - b[i]);
                    }
                }
                if let Some(gb) = grad_b {
                    for i in 0..b.len() {
                        gb[i] += c * (a[i] - b[i]);
                    }
                }
            }
        }
        value
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(NsvmError::invalid("feature vectors must be non-empty"));
    }
    if a.len() != b.len() {
        return Err(NsvmError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(NsvmError::NonFinite("kernel input"));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Gram matrix `G[i][j] = K(p_i, p_j)`, evaluated once per unordered pair.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let first = points
        .first()
        .ok_or_else(|| NsvmError::invalid("gram needs at least one point"))?;
    for p in points {
        check_pair(first, p)?;
    }
    Ok(gram_unchecked(spec, points))
}

pub(crate) fn gram_unchecked(spec: &KernelSpec, points: &[Vec<f64>]) -> DMatrix<f64> {
    let m = points.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = spec.value(&points[i], &points[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn check_labels(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(NsvmError::invalid("labels must be -1 or 1"));
    }
    Ok(())
}

/// Kernel-target alignment of a gram block with the label outer product:
/// `sum y_i y_j G_ij / (k * sqrt(sum G_ij^2))`.
pub fn alignment(gram_block: &DMatrix<f64>, labels: &[f64]) -> Result<f64> {
    let k = labels.len();
    if k < 2 {
        return Err(NsvmError::invalid("alignment needs at least two samples"));
    }
    if gram_block.nrows() != k || gram_block.ncols() != k {
        return Err(NsvmError::DimensionMismatch {
            expected: k,
            got: gram_block.nrows(),
        });
    }
    check_labels(labels)?;
    let mut num = 0.0;
    let mut sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            let g = gram_block[(i, j)];
            num += labels[i] * labels[j] * g;
            sq += g * g;
        }
    }
    if sq == 0.0 {
        return Err(NsvmError::ZeroGram);
    }
    Ok(num / (k as f64 * sq.sqrt()))
}

/// Normalized von Neumann entropy of a PSD gram matrix: the Shannon entropy
/// of the trace-normalized spectrum divided by `ln m`, so that the identity
/// scores 1 and any rank-one matrix scores 0.
pub fn von_neumann_entropy(gram: &DMatrix<f64>) -> Result<f64> {
    let m = gram.nrows();
    if m < 2 || gram.ncols() != m {
        return Err(NsvmError::invalid("entropy needs a square matrix of size >= 2"));
    }
    let trace = gram.trace();
    if !(trace > 0.0) {
        return Err(NsvmError::invalid("entropy needs a positive trace"));
    }
    let eig = SymmetricEigen::new(gram / trace);
    let min = eig.eigenvalues.min();
    if min < -1e-6 {
        return Err(NsvmError::NotPositiveSemidefinite {
            min_eigenvalue: min * trace,
        });
    }
    let h: f64 = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.ln())
        .sum();
    Ok((h / (m as f64).ln()).clamp(0.0, 1.0))
}

/// Frobenius distance from the identity matrix.
pub fn distance_to_identity(gram: &DMatrix<f64>) -> f64 {
    let m = gram.nrows();
    (gram - DMatrix::<f64>::identity(m, m)).norm()
}

/// Frobenius distance from the all-ones matrix.
pub fn distance_to_ones(gram: &DMatrix<f64>) -> f64 {
    let (r, c) = gram.shape();
    (gram - DMatrix::<f64>::from_element(r, c, 1.0)).norm()
}
