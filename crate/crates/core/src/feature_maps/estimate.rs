//! Derivative-free gradient estimators, for kernels or maps without
//! analytic derivatives.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureObjective, Mode, Network, ParameterVector};
use crate::error::{NsvmError, Result};
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMethod {
    /// Central differences, one coordinate at a time (2L evaluations).
    Fd,
    /// Simultaneous perturbation with a Rademacher direction (2 evaluations).
    Spsa,
    /// Random direction uniform on the unit sphere (2 evaluations).
    Rdsa,
}

/// Estimates the gradient of `f` at `theta`.
///
/// For `Fd` the step for coordinate `i` is `step * (1 + |theta_i|)`; for the
/// stochastic methods `step` is the perturbation radius.
pub fn estimate_gradient<F>(
    mut f: F,
    theta: &[f64],
    method: EstimatorMethod,
    step: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(NsvmError::invalid("estimator step must be positive"));
    }
    let l = theta.len();
    let mut probe = theta.to_vec();
    match method {
        EstimatorMethod::Fd => {
            let mut g = vec![0.0; l];
            for i in 0..l {
                let h = step * (1.0 + theta[i].abs());
                probe[i] = theta[i] + h;
                let fp = f(&probe)?;
                probe[i] = theta[i] - h;
                let fm = f(&probe)?;
                probe[i] = theta[i];
                g[i] = (fp - fm) / (2.0 * h);
            }
            Ok(g)
        }
        EstimatorMethod::Spsa => {
            let delta: Vec<f64> = (0..l)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let diff = two_sided(&mut f, theta, &delta, step, &mut probe)?;
            Ok(delta.iter().map(|d| diff / d).collect())
        }
        EstimatorMethod::Rdsa => {
            let mut u: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok(vec![0.0; l]);
            }
            u.iter_mut().for_each(|v| *v /= norm);
            let diff = two_sided(&mut f, theta, &u, step, &mut probe)?;
            // E[u u^T] = I / L on the sphere
            Ok(u.iter().map(|v| l as f64 * diff * v).collect())
        }
    }
}

fn two_sided<F>(f: &mut F, theta: &[f64], dir: &[f64], step: f64, probe: &mut [f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    for i in 0..theta.len() {
        probe[i] = theta[i] + step * dir[i];
    }
    let fp = f(probe)?;
    for i in 0..theta.len() {
        probe[i] = theta[i] - step * dir[i];
    }
    let fm = f(probe)?;
    Ok((fp - fm) / (2.0 * step))
}

/// Gradient estimate of `objective ∘ forward` with respect to `theta`.
///
/// Every objective evaluation replays the same dropout masks, drawn from a
/// generator split off `rng` before any perturbation is sampled.
pub fn grad_estimate<O: FeatureObjective + ?Sized>(
    net: &Network,
    theta: &ParameterVector,
    objective: &O,
    inputs: &[&[f64]],
    method: EstimatorMethod,
    mode: Mode,
    rng: &mut RngState,
    step: f64,
) -> Result<Vec<f64>> {
    let masks = rng.split();
    let eval = |t: &[f64]| -> Result<f64> {
        let params = ParameterVector(t.to_vec());
        let mut replay = masks.clone();
        let features = inputs
            .iter()
            .map(|x| net.forward(&params, x, mode, &mut replay))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        objective.value(&refs)
    };
    estimate_gradient(eval, theta.as_slice(), method, step, rng)
}
