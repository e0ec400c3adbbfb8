use rand::Rng;

use super::{LayerPlan, LayerSpec, Mode, Shape};
use crate::rng::RngState;

#[derive(Clone, Debug)]
pub(super) enum LayerAux {
    None,
    Norm { norm: f64 },
    Pool { argmax: Vec<usize> },
    Dropout { channel_scale: Option<Vec<f64>> },
}

/// Output shape and parameter count of `layer` applied to `input`.
pub(super) fn resolve(layer: &LayerSpec, input: Shape) -> Result<(Shape, usize), String> {
    match *layer {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            bias,
        } => {
            if in_dim != input.size() {
                return Err(format!("expects {in_dim} inputs, previous layer yields {}", input.size()));
            }
            if out_dim == 0 {
                return Err("out_dim must be positive".into());
            }
            Ok((Shape::flat(out_dim), in_dim * out_dim + if bias { out_dim } else { 0 }))
        }
        LayerSpec::Relu => Ok((input, 0)),
        LayerSpec::L2Normalize { epsilon } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err("epsilon must be positive".into());
            }
            Ok((input, 0))
        }
        LayerSpec::Scale { factor } => {
            if !factor.is_finite() {
                return Err("factor must be finite".into());
            }
            Ok((input, 0))
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            filter_size,
            bias,
        } => {
            if in_channels != input.channels {
                return Err(format!(
                    "expects {in_channels} channels, previous layer yields {}",
                    input.channels
                ));
            }
            if filter_size == 0 || filter_size > input.height || filter_size > input.width {
                return Err(format!(
                    "filter {filter_size} does not fit a {}x{} input",
                    input.height, input.width
                ));
            }
            if out_channels == 0 {
                return Err("out_channels must be positive".into());
            }
            let out = Shape {
                channels: out_channels,
                height: input.height - filter_size + 1,
                width: input.width - filter_size + 1,
            };
            let n = out_channels * in_channels * filter_size * filter_size
                + if bias { out_channels } else { 0 };
            Ok((out, n))
        }
        LayerSpec::Maxpool2d { window } => {
            if window == 0 || window > input.height || window > input.width {
                return Err(format!(
                    "window {window} does not fit a {}x{} input",
                    input.height, input.width
                ));
            }
            Ok((
                Shape {
                    channels: input.channels,
                    height: input.height / window,
                    width: input.width / window,
                },
                0,
            ))
        }
        LayerSpec::ChannelDropout { rate } => {
            if !(0.0..1.0).contains(&rate) {
                return Err("rate must lie in [0, 1)".into());
            }
            Ok((input, 0))
        }
    }
}

pub(super) fn forward(
    p: &LayerPlan,
    params: &[f64],
    x: &[f64],
    mode: Mode,
    rng: &mut RngState,
    record: bool,
) -> (Vec<f64>, LayerAux) {
    match p.spec {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            bias,
        } => {
            let (w, b) = params.split_at(in_dim * out_dim);
            let out = (0..out_dim)
                .map(|o| {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                    if bias {
                        z + b[o]
                    } else {
                        z
                    }
                })
                .collect();
            (out, LayerAux::None)
        }
        LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), LayerAux::None),
        LayerSpec::L2Normalize { epsilon } => {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(epsilon);
            let out = x.iter().map(|v| v / denom).collect();
            (out, if record { LayerAux::Norm { norm } } else { LayerAux::None })
        }
        LayerSpec::Scale { factor } => (x.iter().map(|v| v * factor).collect(), LayerAux::None),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            filter_size: f,
            bias,
        } => {
            let (ih, iw) = (p.input.height, p.input.width);
            let (oh, ow) = (p.output.height, p.output.width);
            let per_out = in_channels * f * f;
            let mut out = vec![0.0; out_channels * oh * ow];
            for o in 0..out_channels {
                let kernel = &params[o * per_out..(o + 1) * per_out];
                let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                if bias {
                    plane.fill(params[out_channels * per_out + o]);
                }
                for c in 0..in_channels {
                    let src = &x[c * ih * iw..(c + 1) * ih * iw];
                    for ky in 0..f {
                        for kx in 0..f {
                            let w = kernel[(c * f + ky) * f + kx];
                            for r in 0..oh {
                                let srow = &src[(r + ky) * iw + kx..(r + ky) * iw + kx + ow];
                                let orow = &mut plane[r * ow..(r + 1) * ow];
                                for (acc, s) in orow.iter_mut().zip(srow) {
                                    *acc += w * s;
                                }
                            }
                        }
                    }
                }
            }
            (out, LayerAux::None)
        }
        LayerSpec::Maxpool2d { window } => {
            let (ih, iw) = (p.input.height, p.input.width);
            let (oh, ow) = (p.output.height, p.output.width);
            let n = p.output.size();
            let mut out = Vec::with_capacity(n);
            let mut argmax = Vec::with_capacity(if record { n } else { 0 });
            for c in 0..p.input.channels {
                for r in 0..oh {
                    for q in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for dy in 0..window {
                            for dx in 0..window {
                                let idx = c * ih * iw + (r * window + dy) * iw + q * window + dx;
                                // strict comparison keeps the first maximum in row-major order
                                if x[idx] > best || best_idx == usize::MAX {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.push(best);
                        if record {
                            argmax.push(best_idx);
                        }
                    }
                }
            }
            (out, LayerAux::Pool { argmax })
        }
        LayerSpec::ChannelDropout { rate } => {
            if mode == Mode::Infer || rate == 0.0 {
                return (x.to_vec(), LayerAux::Dropout { channel_scale: None });
            }
            let keep = 1.0 - rate;
            let scale: Vec<f64> = (0..p.input.channels)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let plane = p.input.height * p.input.width;
            let out = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * scale[i / plane])
                .collect();
            (
                out,
                LayerAux::Dropout {
                    channel_scale: Some(scale),
                },
            )
        }
    }
}

/// Reverse pass through one layer. Accumulates parameter gradients into
/// `grad` and returns the gradient with respect to the layer input.
pub(super) fn backward(
    p: &LayerPlan,
    params: &[f64],
    x: &[f64],
    y: &[f64],
    aux: &LayerAux,
    dy: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    match p.spec {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            bias,
        } => {
            let mut dx = vec![0.0; in_dim];
            let (w, _) = params.split_at(in_dim * out_dim);
            let (gw, gb) = grad.split_at_mut(in_dim * out_dim);
            for o in 0..out_dim {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    grow[i] += d * x[i];
                    dx[i] += d * row[i];
                }
                if bias {
                    gb[o] += d;
                }
            }
            dx
        }
        LayerSpec::Relu => x
            .iter()
            .zip(dy)
            .map(|(&xi, &d)| if xi > 0.0 { d } else { 0.0 })
            .collect(),
        LayerSpec::L2Normalize { epsilon } => {
            let norm = match aux {
                LayerAux::Norm { norm } => *norm,
                _ => unreachable!("normalize tape entry"),
            };
            if norm > epsilon {
                let proj: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                y.iter()
                    .zip(dy)
                    .map(|(yi, di)| (di - yi * proj) / norm)
                    .collect()
            } else {
                dy.iter().map(|d| d / epsilon).collect()
            }
        }
        LayerSpec::Scale { factor } => dy.iter().map(|d| d * factor).collect(),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            filter_size: f,
            bias,
        } => {
            let (ih, iw) = (p.input.height, p.input.width);
            let (oh, ow) = (p.output.height, p.output.width);
            let per_out = in_channels * f * f;
            let mut dx = vec![0.0; x.len()];
            for o in 0..out_channels {
                let dplane = &dy[o * oh * ow..(o + 1) * oh * ow];
                if bias {
                    grad[out_channels * per_out + o] += dplane.iter().sum::<f64>();
                }
                for c in 0..in_channels {
                    let src = &x[c * ih * iw..(c + 1) * ih * iw];
                    for ky in 0..f {
                        for kx in 0..f {
                            let widx = o * per_out + (c * f + ky) * f + kx;
                            let w = params[widx];
                            let mut gw = 0.0;
                            for r in 0..oh {
                                let base = (r + ky) * iw + kx;
                                let drow = &dplane[r * ow..(r + 1) * ow];
                                let srow = &src[base..base + ow];
                                gw += drow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                                let dxrow = &mut dx[c * ih * iw + base..c * ih * iw + base + ow];
                                for (acc, d) in dxrow.iter_mut().zip(drow) {
                                    *acc += w * d;
                                }
                            }
                            grad[widx] += gw;
                        }
                    }
                }
            }
            dx
        }
        LayerSpec::Maxpool2d { .. } => {
            let argmax = match aux {
                LayerAux::Pool { argmax } => argmax,
                _ => unreachable!("maxpool tape entry"),
            };
            let mut dx = vec![0.0; x.len()];
            for (&idx, &d) in argmax.iter().zip(dy) {
                dx[idx] += d;
            }
            dx
        }
        LayerSpec::ChannelDropout { .. } => match aux {
            LayerAux::Dropout {
                channel_scale: Some(scale),
            } => {
                let plane = p.input.height * p.input.width;
                dy.iter()
                    .enumerate()
                    .map(|(i, d)| d * scale[i / plane])
                    .collect()
            }
            _ => dy.to_vec(),
        },
    }
}
