//! Labeled datasets, generators, loaders, standardization and splitting.

mod csv_io;
mod idx;
mod synthetic;

use rand::seq::SliceRandom;

use crate::error::{NsvmError, Result};
use crate::rng::{RngState, Stream};

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use idx::{load_idx_images, parse_idx_images, parse_idx_labels};
pub use synthetic::{gen_gaussian_images, gen_ringnorm, gen_separable_2d, RINGNORM_DIM};

/// Per-feature mean and sample standard deviation fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Samples `(x_i, y_i)` with `y_i` in {-1, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub standardization: Option<Standardizer>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(NsvmError::invalid("dataset must contain at least one sample"));
        }
        if inputs.len() != labels.len() {
            return Err(NsvmError::DimensionMismatch {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(NsvmError::invalid("samples must have at least one feature"));
        }
        for x in &inputs {
            if x.len() != d {
                return Err(NsvmError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(NsvmError::NonFinite("dataset input"));
            }
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(NsvmError::invalid("labels must be -1 or 1"));
        }
        Ok(Dataset {
            inputs,
            labels,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Number of samples labeled (-1, +1).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y > 0.0).count();
        (self.len() - pos, pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }

    /// Error unless both labels are present.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(NsvmError::SingleClass)
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            standardization: self.standardization.clone(),
        }
    }
}

/// Fits per-feature statistics. Features with zero spread get a unit
/// standard deviation so that applying the statistics leaves them centered
/// but unscaled.
pub fn standardize_fit(train: &Dataset) -> Result<Standardizer> {
    let n = train.len();
    if n < 2 {
        return Err(NsvmError::invalid("standardization needs at least two samples"));
    }
    let d = train.dim();
    let mut mean = vec![0.0; d];
    for x in &train.inputs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for x in &train.inputs {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(Standardizer { mean, std })
}

pub fn standardize_apply(stats: &Standardizer, data: &Dataset) -> Result<Dataset> {
    if data.dim() != stats.mean.len() {
        return Err(NsvmError::DimensionMismatch {
            expected: stats.mean.len(),
            got: data.dim(),
        });
    }
    let inputs = data
        .inputs
        .iter()
        .map(|x| {
            x.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    Ok(Dataset {
        inputs,
        labels: data.labels.clone(),
        standardization: Some(stats.clone()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    /// Split off this fraction of the samples (rounded to the nearest count).
    Fraction(f64),
    /// Split off exactly this many samples of each class.
    PerClass(usize),
}

/// Splits `data` into `(kept, split_off)`. Both parts preserve the original
/// sample order. `PerClass` splits are always stratified.
pub fn split(data: &Dataset, spec: SplitSpec, stratified: bool, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = RngState::for_stream(seed, Stream::Split);
    let n = data.len();
    let mut off = vec![false; n];
    let mut pick = |pool: Vec<usize>, count: usize, rng: &mut RngState| -> Result<()> {
        if count > pool.len() {
            return Err(NsvmError::invalid(format!(
                "cannot split off {count} of {} samples",
                pool.len()
            )));
        }
        let mut pool = pool;
        pool.shuffle(rng);
        for &i in &pool[..count] {
            off[i] = true;
        }
        Ok(())
    };
    let classes = |label: f64| -> Vec<usize> { (0..n).filter(|&i| data.labels[i] == label).collect() };
    match spec {
        SplitSpec::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(NsvmError::invalid("split fraction must lie in [0, 1]"));
            }
            if stratified {
                for label in [-1.0, 1.0] {
                    let pool = classes(label);
                    let count = (pool.len() as f64 * f).round() as usize;
                    pick(pool, count, &mut rng)?;
                }
            } else {
                let count = (n as f64 * f).round() as usize;
                pick((0..n).collect(), count, &mut rng)?;
            }
        }
        SplitSpec::PerClass(count) => {
            for label in [-1.0, 1.0] {
                pick(classes(label), count, &mut rng)?;
            }
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| !off[i]).collect();
    let taken: Vec<usize> = (0..n).filter(|&i| off[i]).collect();
    if kept.is_empty() || taken.is_empty() {
        return Err(NsvmError::invalid("split would leave an empty part"));
    }
    Ok((data.subset(&kept), data.subset(&taken)))
}
