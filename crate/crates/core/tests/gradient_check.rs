//! Backpropagated parameter gradients of the training objectives against
//! central finite differences on small random networks.

use nsvm::feature_maps::{estimate_gradient, EstimatorMethod, FeatureObjective, LayerSpec, Mode, NetSpec, Network, ParameterVector};
use nsvm::kernels::KernelSpec;
use nsvm::objectives::{Alg1Objective, Alg3Objective, AlignmentObjective, ExpansionState, LossSpec};
use nsvm::rng::RngState;
use rand::Rng;

const INSTANCES: usize = 50;

fn random_net(rng: &mut RngState) -> Network {
    loop {
        let d = rng.gen_range(2..=5);
        let h = rng.gen_range(2..=8);
        let o = rng.gen_range(2..=5);
        let mut layers = vec![
            LayerSpec::Dense {
                in_dim: d,
                out_dim: h,
                bias: rng.gen(),
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                in_dim: h,
                out_dim: o,
                bias: rng.gen(),
            },
        ];
        if rng.gen() {
            layers.push(LayerSpec::L2Normalize { epsilon: 1e-12 });
        }
        let net = Network::new(NetSpec::new(vec![d], layers)).unwrap();
        if net.n_params() <= 200 {
            return net;
        }
    }
}

/// Initial parameters have zero biases; move every entry off its initial value.
fn jitter(mut theta: ParameterVector, rng: &mut RngState) -> ParameterVector {
    theta.as_mut_slice().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    theta
}

fn random_kernel(rng: &mut RngState) -> KernelSpec {
    match rng.gen_range(0..3) {
        0 => KernelSpec::linear(),
        1 => KernelSpec::linear().normalized(),
        _ => KernelSpec::rbf(rng.gen_range(0.2..2.0)),
    }
}

fn point(rng: &mut RngState, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

fn sign(rng: &mut RngState) -> f64 {
    if rng.gen() {
        1.0
    } else {
        -1.0
    }
}

fn rel_error(exact: &[f64], approx: &[f64]) -> f64 {
    let diff = exact.iter().zip(approx).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

fn fd(net: &Network, theta: &ParameterVector, obj: &dyn FeatureObjective, inputs: &[&[f64]], step: f64) -> Vec<f64> {
    let f = |t: &[f64]| {
        let p = ParameterVector(t.to_vec());
        let feats = inputs
            .iter()
            .map(|x| net.forward(&p, x, Mode::Infer, &mut RngState::new(0)))
            .collect::<nsvm::Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        obj.value(&refs)
    };
    estimate_gradient(f, theta.as_slice(), EstimatorMethod::Fd, step, &mut RngState::new(0)).unwrap()
}

/// Relative error of the backpropagated gradient, or `None` when the
/// instance sits on a ReLU kink (differences at two step sizes disagree).
fn instance_error(net: &Network, theta: &ParameterVector, obj: &dyn FeatureObjective, inputs: &[Vec<f64>]) -> Option<f64> {
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let (_, exact) = net
        .grad_theta(theta, obj, &refs, Mode::Infer, &mut RngState::new(0))
        .unwrap();
    let coarse = fd(net, theta, obj, &refs, 1e-5);
    let fine = fd(net, theta, obj, &refs, 2.5e-6);
    if rel_error(&fine, &coarse) > 1e-5 {
        return None;
    }
    Some(rel_error(&exact, &coarse))
}

fn check<F>(name: &str, seed: u64, mut instance: F)
where
    F: FnMut(&mut RngState) -> Option<f64>,
{
    let mut rng = RngState::new(seed);
    let (mut done, mut skipped) = (0, 0);
    while done < INSTANCES {
        match instance(&mut rng) {
            Some(err) => {
                assert!(err < 1e-4, "{name} instance {done}: relative error {err:e}");
                done += 1;
            }
            None => {
                skipped += 1;
                assert!(skipped < INSTANCES, "{name}: too many instances near kinks");
            }
        }
    }
}

#[test]
fn single_sample_objective() {
    check("single-sample", 1, |rng| {
        let net = random_net(rng);
        let theta = jitter(net.init_params(rng), rng);
        let kernel = random_kernel(rng);
        let mut state = ExpansionState::new(rng.gen_range(0.05..1.0));
        let terms = rng.gen_range(1..6);
        for _ in 0..terms {
            let p = point(rng, net.output_dim());
            state.push(1.0, sign(rng), p);
        }
        state.t = terms + 1 + rng.gen_range(0..5);
        let obj = Alg1Objective {
            state: &state,
            kernel: &kernel,
            label: sign(rng),
        };
        let x = point(rng, net.input_dim());
        instance_error(&net, &theta, &obj, &[x])
    });
}

#[test]
fn mini_batch_objective() {
    check("mini-batch", 2, |rng| {
        let net = random_net(rng);
        let theta = jitter(net.init_params(rng), rng);
        let kernel = random_kernel(rng);
        let k = rng.gen_range(2..6);
        let alphas = (0..k)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(1..4) as f64 / k as f64 })
            .collect();
        let obj = Alg3Objective {
            kernel: &kernel,
            alphas,
            labels: (0..k).map(|_| sign(rng)).collect(),
            mu: rng.gen_range(0.1..2.0),
        };
        let inputs: Vec<Vec<f64>> = (0..k).map(|_| point(rng, net.input_dim())).collect();
        instance_error(&net, &theta, &obj, &inputs)
    });
}

#[test]
fn alignment_objective() {
    check("alignment", 3, |rng| {
        let net = random_net(rng);
        let theta = jitter(net.init_params(rng), rng);
        let kernel = random_kernel(rng);
        let k = rng.gen_range(2..6);
        let obj = AlignmentObjective {
            kernel: &kernel,
            labels: (0..k).map(|_| sign(rng)).collect(),
            loss: &LossSpec::Squared,
        };
        let inputs: Vec<Vec<f64>> = (0..k).map(|_| point(rng, net.input_dim())).collect();
        instance_error(&net, &theta, &obj, &inputs)
    });
}
