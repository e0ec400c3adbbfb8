//! Parameterized feature maps `F_theta: R^d -> R^n`.
//!
//! A [`Network`] is an ordered list of layers compiled against an input
//! shape. Parameters live in one flat [`ParameterVector`]; each layer owns a
//! contiguous slice of it. Forward passes can record a [`Tape`] which the
//! reverse pass consumes to produce exact gradients with respect to every
//! parameter.

mod estimate;
mod layers;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NsvmError, Result};
use crate::rng::RngState;

pub use estimate::{estimate_gradient, grad_estimate, EstimatorMethod};
use layers::LayerAux;

pub const DEFAULT_L2_EPSILON: f64 = 1e-12;
pub const DEFAULT_DROPOUT_RATE: f64 = 0.5;

fn default_bias() -> bool {
    true
}

fn default_epsilon() -> f64 {
    DEFAULT_L2_EPSILON
}

fn default_rate() -> f64 {
    DEFAULT_DROPOUT_RATE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        #[serde(default = "default_bias")]
        bias: bool,
    },
    Relu,
    L2Normalize {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Scale {
        factor: f64,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        filter_size: usize,
        #[serde(default = "default_bias")]
        bias: bool,
    },
    Maxpool2d {
        window: usize,
    },
    ChannelDropout {
        #[serde(default = "default_rate")]
        rate: f64,
    },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            bias: true,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::L2Normalize { .. } => "l2_normalize",
            LayerSpec::Scale { .. } => "scale",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::ChannelDropout { .. } => "channel_dropout",
        }
    }
}

/// Activation shape as (channels, height, width); flat vectors use `(d, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(d: usize) -> Self {
        Shape {
            channels: d,
            height: 1,
            width: 1,
        }
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [d] => Ok(Shape::flat(d)),
            [c, h, w] => Ok(Shape {
                channels: c,
                height: h,
                width: w,
            }),
            _ => Err(NsvmError::invalid(format!(
                "input shape must be [d] or [channels, height, width], got {dims:?}"
            ))),
        }
    }
}

/// Serializable network description: input shape plus ordered layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_shape: Vec<usize>,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// The identity map on `R^d`.
    pub fn identity(d: usize) -> Self {
        NetSpec {
            input_shape: vec![d],
            layers: Vec::new(),
        }
    }

    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        NetSpec {
            input_shape,
            layers,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug)]
struct LayerPlan {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    params: Range<usize>,
}

/// Flat parameter vector `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        ParameterVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Recorded intermediate state of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// `activations[i]` is the input of layer `i`; the last entry is the output.
    activations: Vec<Vec<f64>>,
    aux: Vec<LayerAux>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape holds at least the input")
    }
}

/// A compiled network: layer plans with resolved shapes and parameter slices.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetSpec,
    input: Shape,
    plan: Vec<LayerPlan>,
    n_params: usize,
}

impl Network {
    pub fn new(spec: NetSpec) -> Result<Self> {
        let input = Shape::from_dims(&spec.input_shape)?;
        if input.size() == 0 {
            return Err(NsvmError::invalid("input shape must be non-empty"));
        }
        let mut plan = Vec::with_capacity(spec.layers.len());
        let mut shape = input;
        let mut offset = 0;
        for (idx, layer) in spec.layers.iter().enumerate() {
            let (output, n) = layers::resolve(layer, shape)
                .map_err(|e| NsvmError::invalid(format!("layer {idx} ({}): {e}", layer.kind_name())))?;
            plan.push(LayerPlan {
                spec: layer.clone(),
                input: shape,
                output,
                params: offset..offset + n,
            });
            offset += n;
            shape = output;
        }
        Ok(Network {
            spec,
            input,
            plan,
            n_params: offset,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input.size()
    }

    pub fn output_dim(&self) -> usize {
        self.plan.last().map_or(self.input.size(), |p| p.output.size())
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn has_dropout(&self) -> bool {
        self.plan
            .iter()
            .any(|p| matches!(p.spec, LayerSpec::ChannelDropout { .. }))
    }

    /// Parameter slice owned by each layer (empty for parameter-free layers).
    pub fn param_ranges(&self) -> Vec<Range<usize>> {
        self.plan.iter().map(|p| p.params.clone()).collect()
    }

    /// Splits `theta` into per-layer slices.
    pub fn unflatten(&self, theta: &ParameterVector) -> Result<Vec<Vec<f64>>> {
        self.check_theta(theta)?;
        Ok(self
            .plan
            .iter()
            .map(|p| theta.0[p.params.clone()].to_vec())
            .collect())
    }

    /// Inverse of [`Network::unflatten`].
    pub fn flatten(&self, parts: &[Vec<f64>]) -> Result<ParameterVector> {
        if parts.len() != self.plan.len() {
            return Err(NsvmError::DimensionMismatch {
                expected: self.plan.len(),
                got: parts.len(),
            });
        }
        let mut out = Vec::with_capacity(self.n_params);
        for (p, part) in self.plan.iter().zip(parts) {
            if part.len() != p.params.len() {
                return Err(NsvmError::DimensionMismatch {
                    expected: p.params.len(),
                    got: part.len(),
                });
            }
            out.extend_from_slice(part);
        }
        Ok(ParameterVector(out))
    }

    /// He-style uniform initialization: weights in `[-s, s]` with
    /// `s = sqrt(6 / fan_in)`, biases zero.
    pub fn init_params(&self, rng: &mut RngState) -> ParameterVector {
        let mut theta = vec![0.0; self.n_params];
        for p in &self.plan {
            let (fan_in, n_weights) = match p.spec {
                LayerSpec::Dense { in_dim, out_dim, .. } => (in_dim, in_dim * out_dim),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    filter_size,
                    ..
                } => {
                    let fan = in_channels * filter_size * filter_size;
                    (fan, fan * out_channels)
                }
                _ => continue,
            };
            let s = (6.0 / fan_in as f64).sqrt();
            for w in &mut theta[p.params.start..p.params.start + n_weights] {
                *w = rng.gen_range(-s..=s);
            }
        }
        ParameterVector(theta)
    }

    fn check_theta(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(NsvmError::DimensionMismatch {
                expected: self.n_params,
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input.size() {
            return Err(NsvmError::DimensionMismatch {
                expected: self.input.size(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NsvmError::NonFinite("network input"));
        }
        Ok(())
    }

    /// Evaluates `F_theta(x)`. Dropout masks are drawn from `rng` in train mode.
    pub fn forward(
        &self,
        theta: &ParameterVector,
        x: &[f64],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_input(x)?;
        let mut act = x.to_vec();
        for (idx, p) in self.plan.iter().enumerate() {
            let (out, _) = layers::forward(p, &theta.0[p.params.clone()], &act, mode, rng, false);
            check_finite(&out, idx, &p.spec)?;
            act = out;
        }
        Ok(act)
    }

    /// Forward pass that records everything the reverse pass needs.
    pub fn forward_tape(
        &self,
        theta: &ParameterVector,
        x: &[f64],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Tape> {
        self.check_theta(theta)?;
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.plan.len() + 1);
        let mut aux = Vec::with_capacity(self.plan.len());
        activations.push(x.to_vec());
        for (idx, p) in self.plan.iter().enumerate() {
            let input = activations.last().unwrap();
            let (out, a) = layers::forward(p, &theta.0[p.params.clone()], input, mode, rng, true);
            check_finite(&out, idx, &p.spec)?;
            activations.push(out);
            aux.push(a);
        }
        Ok(Tape { activations, aux })
    }

    /// Reverse pass: accumulates `d objective / d theta` into `grad` given
    /// `d objective / d output`.
    pub fn backward(
        &self,
        tape: &Tape,
        theta: &ParameterVector,
        d_output: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_theta(theta)?;
        if grad.len() != self.n_params {
            return Err(NsvmError::DimensionMismatch {
                expected: self.n_params,
                got: grad.len(),
            });
        }
        if d_output.len() != self.output_dim() {
            return Err(NsvmError::DimensionMismatch {
                expected: self.output_dim(),
                got: d_output.len(),
            });
        }
        let mut delta = d_output.to_vec();
        for (idx, p) in self.plan.iter().enumerate().rev() {
            let range = p.params.clone();
            delta = layers::backward(
                p,
                &theta.0[range.clone()],
                &tape.activations[idx],
                &tape.activations[idx + 1],
                &tape.aux[idx],
                &delta,
                &mut grad[range],
            );
        }
        Ok(())
    }

    /// Gradient of `objective(F_theta(x_1), ..., F_theta(x_k))` with respect
    /// to `theta`, returned with the objective value. Dropout masks are drawn
    /// once per input and shared between the forward and reverse passes.
    pub fn grad_theta<O: FeatureObjective + ?Sized>(
        &self,
        theta: &ParameterVector,
        objective: &O,
        inputs: &[&[f64]],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(f64, Vec<f64>)> {
        let tapes = inputs
            .iter()
            .map(|x| self.forward_tape(theta, x, mode, rng))
            .collect::<Result<Vec<_>>>()?;
        let features: Vec<&[f64]> = tapes.iter().map(|t| t.output()).collect();
        let (value, d_features) = objective.value_and_grad(&features)?;
        let mut grad = vec![0.0; self.n_params];
        for (tape, d) in tapes.iter().zip(&d_features) {
            self.backward(tape, theta, d, &mut grad)?;
        }
        Ok((value, grad))
    }
}

fn check_finite(out: &[f64], layer: usize, spec: &LayerSpec) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NsvmError::NonFiniteActivation {
            layer,
            kind: spec.kind_name(),
        })
    }
}

/// A scalar function of a list of network outputs, with its gradient with
/// respect to each output.
pub trait FeatureObjective {
    fn value(&self, features: &[&[f64]]) -> Result<f64>;

    fn value_and_grad(&self, features: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use rand::Rng;

    struct FirstCoordinate;

    impl FeatureObjective for FirstCoordinate {
        fn value(&self, f: &[&[f64]]) -> Result<f64> {
            Ok(f[0][0])
        }
        fn value_and_grad(&self, f: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
            let mut g = vec![0.0; f[0].len()];
            g[0] = 1.0;
            Ok((f[0][0], vec![g]))
        }
    }

    /// Sum of squared norms of all outputs.
    pub(crate) struct SquaredNorm;

    impl FeatureObjective for SquaredNorm {
        fn value(&self, f: &[&[f64]]) -> Result<f64> {
            Ok(f.iter().flat_map(|v| v.iter()).map(|v| v * v).sum())
        }
        fn value_and_grad(&self, f: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>)> {
            let g = f.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
            Ok((self.value(f)?, g))
        }
    }

    fn net(input: Vec<usize>, layers: Vec<LayerSpec>) -> Network {
        Network::new(NetSpec::new(input, layers)).unwrap()
    }

    #[test]
    fn zero_dense_gives_zero() {
        let n = net(vec![3], vec![LayerSpec::dense(3, 4)]);
        let theta = ParameterVector::zeros(n.n_params());
        let out = n
            .forward(&theta, &[1.0, -2.0, 3.0], Mode::Infer, &mut RngState::new(0))
            .unwrap();
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn relu_clamps() {
        let n = net(vec![3], vec![LayerSpec::Relu]);
        let out = n
            .forward(&ParameterVector::zeros(0), &[-1.0, 2.0, 0.0], Mode::Infer, &mut RngState::new(0))
            .unwrap();
        assert_eq!(out, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn normalize_then_scale() {
        let s = 2f64.sqrt();
        let n = net(
            vec![2],
            vec![
                LayerSpec::L2Normalize { epsilon: 1e-12 },
                LayerSpec::Scale { factor: s },
            ],
        );
        let out = n
            .forward(&ParameterVector::zeros(0), &[3.0, 4.0], Mode::Infer, &mut RngState::new(0))
            .unwrap();
        assert!((out[0] - 0.6 * s).abs() < 1e-15);
        assert!((out[1] - 0.8 * s).abs() < 1e-15);
    }

    #[test]
    fn normalize_respects_floor() {
        let n = net(vec![2], vec![LayerSpec::L2Normalize { epsilon: 1e-3 }]);
        let out = n
            .forward(&ParameterVector::zeros(0), &[1e-5, 0.0], Mode::Infer, &mut RngState::new(0))
            .unwrap();
        assert!((out[0] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn first_coordinate_gradient() {
        let n = net(
            vec![3],
            vec![LayerSpec::Dense {
                in_dim: 3,
                out_dim: 2,
                bias: false,
            }],
        );
        let theta = n.init_params(&mut RngState::new(1));
        let x = [1.0, 0.0, 0.0];
        let (_, g) = n
            .grad_theta(&theta, &FirstCoordinate, &[&x], Mode::Infer, &mut RngState::new(0))
            .unwrap();
        let mut expected = vec![0.0; 6];
        expected[0] = 1.0;
        assert_eq!(g, expected);
    }

    #[test]
    fn dead_relu_unit_has_zero_gradient() {
        let n = net(vec![2], vec![LayerSpec::dense(2, 2), LayerSpec::Relu]);
        // unit 0 pre-activation -1, unit 1 pre-activation +3
        let theta = ParameterVector(vec![-1.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        let x = [1.0, 0.5];
        let (_, g) = n
            .grad_theta(&theta, &SquaredNorm, &[&x], Mode::Infer, &mut RngState::new(0))
            .unwrap();
        assert_eq!(&g[0..2], &[0.0, 0.0]);
        assert_eq!(g[4], 0.0);
        assert!(g[2] != 0.0);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let n = net(vec![20], vec![LayerSpec::dense(20, 40)]);
        let a = n.init_params(&mut RngState::new(9));
        let b = n.init_params(&mut RngState::new(9));
        assert_eq!(a, b);
        let s = (6.0f64 / 20.0).sqrt();
        assert!(a.0[..800].iter().all(|w| w.abs() <= s));
        assert!(a.0[800..].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn init_mean_is_centered() {
        // uniform on [-s, s] has sigma = s / sqrt(3)
        let n = net(
            vec![10],
            vec![LayerSpec::Dense {
                in_dim: 10,
                out_dim: 10_000,
                bias: false,
            }],
        );
        let theta = n.init_params(&mut RngState::new(4));
        let count = theta.len() as f64;
        let mean = theta.0.iter().sum::<f64>() / count;
        let sigma = (6.0f64 / 10.0).sqrt() / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / count.sqrt(), "mean {mean}");
    }

    #[test]
    fn dimension_errors() {
        let n = net(vec![3], vec![LayerSpec::dense(3, 2)]);
        let theta = ParameterVector::zeros(n.n_params());
        let mut rng = RngState::new(0);
        assert!(matches!(
            n.forward(&theta, &[1.0], Mode::Infer, &mut rng),
            Err(NsvmError::DimensionMismatch { .. })
        ));
        assert!(n
            .forward(&ParameterVector::zeros(2), &[1.0, 2.0, 3.0], Mode::Infer, &mut rng)
            .is_err());
        assert!(Network::new(NetSpec::new(vec![3], vec![LayerSpec::dense(4, 2)])).is_err());
    }

    #[test]
    fn overflow_names_layer() {
        let n = net(vec![1], vec![LayerSpec::Scale { factor: 1e300 }, LayerSpec::Scale { factor: 1e300 }]);
        let err = n
            .forward(&ParameterVector::zeros(0), &[1.0], Mode::Infer, &mut RngState::new(0))
            .unwrap_err();
        assert!(matches!(err, NsvmError::NonFiniteActivation { layer: 1, kind: "scale" }));
    }

    #[test]
    fn image_cnn_has_320_features() {
        let n = net(vec![1, 28, 28], crate::presets::mnist_cnn(false));
        assert_eq!(n.output_dim(), 320);
    }

    #[test]
    fn flatten_round_trip() {
        let n = net(vec![1, 8, 8], {
            vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 2, filter_size: 3, bias: true },
                LayerSpec::Maxpool2d { window: 2 },
                LayerSpec::Relu,
                LayerSpec::ChannelDropout { rate: 0.5 },
                LayerSpec::dense(18, 4),
                LayerSpec::L2Normalize { epsilon: 1e-12 },
            ]
        });
        let mut rng = RngState::new(2);
        let mut theta = n.init_params(&mut rng);
        for v in theta.as_mut_slice() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let parts = n.unflatten(&theta).unwrap();
        assert_eq!(n.flatten(&parts).unwrap(), theta);
    }

    #[test]
    fn dropout_train_vs_infer() {
        let n = net(vec![4], vec![LayerSpec::ChannelDropout { rate: 0.5 }]);
        let theta = ParameterVector::zeros(0);
        let x = [1.0, 2.0, 3.0, 4.0];
        let inf = n.forward(&theta, &x, Mode::Infer, &mut RngState::new(0)).unwrap();
        assert_eq!(inf, x.to_vec());
        let mut rng = RngState::new(3);
        for _ in 0..10 {
            let tr = n.forward(&theta, &x, Mode::Train, &mut rng).unwrap();
            for (o, i) in tr.iter().zip(&x) {
                assert!(*o == 0.0 || *o == 2.0 * i);
            }
        }
    }
}
