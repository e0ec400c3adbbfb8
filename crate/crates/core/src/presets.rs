//! Network architectures used in the reference experiments.

use crate::feature_maps::{LayerSpec, NetSpec, DEFAULT_DROPOUT_RATE, DEFAULT_L2_EPSILON};

/// Four ReLU dense layers of widths 40, 30, 20, 20 on 20 input features,
/// optionally followed by Euclidean normalization of the output.
pub fn ringnorm_mlp(normalize: bool) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = 20;
    for width in [40, 30, 20, 20] {
        layers.push(LayerSpec::dense(prev, width));
        layers.push(LayerSpec::Relu);
        prev = width;
    }
    if normalize {
        layers.push(LayerSpec::L2Normalize {
            epsilon: DEFAULT_L2_EPSILON,
        });
    }
    layers
}

pub fn ringnorm_net(normalize: bool) -> NetSpec {
    NetSpec::new(vec![20], ringnorm_mlp(normalize))
}

/// Two valid 5x5 convolutions (10 and 20 channels), each followed by 2x2
/// max pooling and ReLU, with channel dropout between the second
/// convolution and its pooling. A 28x28 image yields 320 features. With
/// `normalize`, the output is projected to the sphere of radius sqrt(2).
pub fn mnist_cnn(normalize: bool) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 10,
            filter_size: 5,
            bias: true,
        },
        LayerSpec::Maxpool2d { window: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            in_channels: 10,
            out_channels: 20,
            filter_size: 5,
            bias: true,
        },
        LayerSpec::ChannelDropout {
            rate: DEFAULT_DROPOUT_RATE,
        },
        LayerSpec::Maxpool2d { window: 2 },
        LayerSpec::Relu,
    ];
    if normalize {
        layers.push(LayerSpec::L2Normalize {
            epsilon: DEFAULT_L2_EPSILON,
        });
        layers.push(LayerSpec::Scale {
            factor: std::f64::consts::SQRT_2,
        });
    }
    layers
}

pub fn mnist_net(normalize: bool) -> NetSpec {
    NetSpec::new(vec![1, 28, 28], mnist_cnn(normalize))
}
