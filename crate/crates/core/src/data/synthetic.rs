use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Dataset;
use crate::rng::{RngState, Stream};

pub const RINGNORM_DIM: usize = 20;

fn balanced_labels(n: usize, rng: &mut RngState) -> Vec<f64> {
    let mut labels: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
    labels.shuffle(rng);
    labels
}

/// Synthetic ringnorm: label +1 is drawn from `N(0, 4 I)`, label -1 from
/// `N(a, I)` with `a = (2 / sqrt(20), ..., 2 / sqrt(20))`, in 20 dimensions.
pub fn gen_ringnorm(n_samples: usize, seed: u64) -> Dataset {
    let mut rng = RngState::for_stream(seed, Stream::Data);
    let labels = balanced_labels(n_samples, &mut rng);
    let shift = 2.0 / (RINGNORM_DIM as f64).sqrt();
    let inputs = labels
        .iter()
        .map(|&y| {
            (0..RINGNORM_DIM)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    if y > 0.0 {
                        2.0 * z
                    } else {
                        z + shift
                    }
                })
                .collect()
        })
        .collect();
    Dataset {
        inputs,
        labels,
        standardization: None,
    }
}

/// Two-dimensional linearly separable set: points uniform in the unit box,
/// labeled by the side of the line `x0 + x1 = 0`, with a gap of `margin`
/// around the line.
///
/// # Panics
///
/// If `margin` is outside `[0, 1)`.
pub fn gen_separable_2d(n_samples: usize, margin: f64, seed: u64) -> Dataset {
    assert!((0.0..1.0).contains(&margin), "margin must lie in [0, 1)");
    let mut rng = RngState::for_stream(seed, Stream::Data);
    let labels = balanced_labels(n_samples, &mut rng);
    let inputs = labels
        .iter()
        .map(|&y| loop {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s = (p[0] + p[1]) / 2f64.sqrt();
            if s * y > margin {
                break p.to_vec();
            }
        })
        .collect();
    Dataset {
        inputs,
        labels,
        standardization: None,
    }
}

fn class_mean(label: f64, side: usize) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for q in 0..side {
            let (dy, dx) = (r as f64 - c, q as f64 - c);
            let v = if label < 0.0 {
                // ring
                let rad = (dx * dx + dy * dy).sqrt();
                (-(rad - side as f64 * 0.3).powi(2) / 4.0).exp()
            } else {
                // vertical bar
                (-(dx * dx) / 3.0).exp() * if dy.abs() < side as f64 * 0.35 { 1.0 } else { 0.0 }
            };
            img[r * side + q] = v;
        }
    }
    img
}

/// Two isotropic Gaussian classes of `side x side` images around fixed mean
/// images (a ring for label -1, a vertical bar for label +1), flattened in
/// row-major order.
///
/// # Panics
///
/// If `noise` is negative or not finite.
pub fn gen_gaussian_images(n_samples: usize, side: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = RngState::for_stream(seed, Stream::Data);
    let labels = balanced_labels(n_samples, &mut rng);
    let means = [class_mean(-1.0, side), class_mean(1.0, side)];
    let normal = Normal::new(0.0, noise).expect("noise must be non-negative");
    let inputs = labels
        .iter()
        .map(|&y| {
            let mean = &means[usize::from(y > 0.0)];
            mean.iter().map(|m| m + normal.sample(&mut rng)).collect()
        })
        .collect();
    Dataset {
        inputs,
        labels,
        standardization: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ringnorm_shape_and_balance() {
        let d = gen_ringnorm(7400, 1);
        assert_eq!(d.len(), 7400);
        assert_eq!(d.dim(), 20);
        let (neg, pos) = d.class_counts();
        assert!(neg.abs_diff(pos) <= 1);
        let odd = gen_ringnorm(7, 1);
        let (neg, pos) = odd.class_counts();
        assert!(neg.abs_diff(pos) <= 1);
    }

    #[test]
    fn ringnorm_is_deterministic() {
        assert_eq!(gen_ringnorm(50, 8), gen_ringnorm(50, 8));
        assert_ne!(gen_ringnorm(50, 8), gen_ringnorm(50, 9));
    }

    /// Per-coordinate class means: sigma is 2 for label +1 and 1 for label -1.
    #[test]
    fn ringnorm_class_means() {
        let d = gen_ringnorm(100_000, 2);
        let shift = 2.0 / 20f64.sqrt();
        for (label, center, sigma) in [(1.0, 0.0, 2.0), (-1.0, shift, 1.0)] {
            let rows: Vec<&Vec<f64>> = d.inputs.iter().zip(&d.labels).filter(|(_, &y)| y == label).map(|(x, _)| x).collect();
            let n = rows.len() as f64;
            for f in 0..20 {
                let mean = rows.iter().map(|x| x[f]).sum::<f64>() / n;
                assert!((mean - center).abs() < 3.0 * sigma / n.sqrt(), "feature {f}: {mean}");
            }
        }
    }

    #[test]
    fn separable_respects_margin() {
        let d = gen_separable_2d(40, 0.1, 3);
        for (x, y) in d.inputs.iter().zip(&d.labels) {
            assert!((x[0] + x[1]) * y > 0.0);
        }
    }

    #[test]
    fn gaussian_images_shape() {
        let d = gen_gaussian_images(10, 28, 0.3, 1);
        assert_eq!(d.dim(), 784);
        assert_eq!(d.class_counts(), (5, 5));
    }
}
