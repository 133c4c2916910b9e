//! Single-precision inference path.
//!
//! Collection workers only need forward passes, and f32 halves their memory
//! traffic. This path is eval-mode only (running batchnorm statistics, no
//! caches); training stays in f64.

use crate::layer::LayerSpec;
use crate::net::{Network, Shape};
use crate::params::ParamSet;
use crate::NnError;

/// An f32 copy of a [`ParamSet`]'s values and buffers (optimizer state is not
/// needed for inference).
#[derive(Debug, Clone)]
pub struct Params32 {
    pub values: Vec<f32>,
    pub buffers: Vec<f32>,
}

impl Params32 {
    pub fn from_params(p: &ParamSet) -> Self {
        Params32 {
            values: p.values.iter().map(|&v| v as f32).collect(),
            buffers: p.buffers.iter().map(|&v| v as f32).collect(),
        }
    }
}

const BN_EPS: f32 = 1e-5;

impl Network {
    /// Eval-mode forward pass in f32. Mirrors
    /// `forward(.., Mode::Eval)` up to rounding.
    pub fn forward_eval32(
        &self,
        params: &Params32,
        image: &[f32],
        aux: &[f32],
        n: usize,
    ) -> Result<Vec<f32>, NnError> {
        if n == 0 || image.len() != n * self.input_len() || aux.len() != n * self.aux_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "eval32 inputs ({}, {}) do not match n {} (input {}, aux {})",
                image.len(),
                aux.len(),
                n,
                self.input_len(),
                self.aux_dim()
            )));
        }
        if params.values.len() != self.n_values() || params.buffers.len() != self.n_buffers() {
            return Err(NnError::ShapeMismatch("param set does not match network".into()));
        }
        let spec = self.spec().clone();
        let (c, h, w) = spec.input;
        let mut shape = Shape::Map { c, h, w };
        let mut cur = image.to_vec();
        let mut val_off = 0usize;
        let mut buf_off = 0usize;
        for l in &spec.trunk {
            cur = apply32(&cur, shape, n, l, &params.values, &mut val_off, &params.buffers, &mut buf_off);
            shape = walk32(shape, l);
        }
        let trunk_out = shape.len();
        let head_in = trunk_out + spec.aux_dim;
        let mut combined = vec![0.0f32; n * head_in];
        for s in 0..n {
            combined[s * head_in..s * head_in + trunk_out]
                .copy_from_slice(&cur[s * trunk_out..(s + 1) * trunk_out]);
            combined[s * head_in + trunk_out..(s + 1) * head_in]
                .copy_from_slice(&aux[s * spec.aux_dim..(s + 1) * spec.aux_dim]);
        }
        let mut cur = combined;
        let mut dim = Shape::Flat(head_in);
        for l in &spec.head {
            cur = apply32(&cur, dim, n, l, &params.values, &mut val_off, &params.buffers, &mut buf_off);
            dim = walk32(dim, l);
        }
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("eval32 output".into()));
        }
        Ok(cur)
    }
}

fn walk32(shape: Shape, l: &LayerSpec) -> Shape {
    match *l {
        LayerSpec::Conv2d { kernel, out_channels, stride } => {
            let Shape::Map { h, w, .. } = shape else { unreachable!() };
            let pad = kernel / 2;
            Shape::Map {
                c: out_channels,
                h: (h + 2 * pad - kernel) / stride + 1,
                w: (w + 2 * pad - kernel) / stride + 1,
            }
        }
        LayerSpec::MaxPool { kernel, stride } => {
            let Shape::Map { c, h, w } = shape else { unreachable!() };
            Shape::Map {
                c,
                h: (h - kernel) / stride + 1,
                w: (w - kernel) / stride + 1,
            }
        }
        LayerSpec::GlobalAvgPool => {
            let Shape::Map { c, .. } = shape else { unreachable!() };
            Shape::Flat(c)
        }
        LayerSpec::FullyConnected { out } => Shape::Flat(out),
        LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::LeakyRelu { .. } => shape,
    }
}

#[allow(clippy::too_many_arguments)]
fn apply32(
    input: &[f32],
    shape: Shape,
    n: usize,
    l: &LayerSpec,
    values: &[f32],
    val_off: &mut usize,
    buffers: &[f32],
    buf_off: &mut usize,
) -> Vec<f32> {
    match *l {
        LayerSpec::Conv2d { kernel, out_channels, stride } => {
            let Shape::Map { c, h, w } = shape else { unreachable!() };
            let pad = kernel / 2;
            let oh = (h + 2 * pad - kernel) / stride + 1;
            let ow = (w + 2 * pad - kernel) / stride + 1;
            let n_w = out_channels * c * kernel * kernel;
            let weights = &values[*val_off..*val_off + n_w];
            let bias = &values[*val_off + n_w..*val_off + n_w + out_channels];
            *val_off += n_w + out_channels;
            let mut out = vec![0.0f32; n * out_channels * oh * ow];
            for s in 0..n {
                let in_base = s * c * h * w;
                let out_base = s * out_channels * oh * ow;
                for oc in 0..out_channels {
                    let plane = &mut out[out_base + oc * oh * ow..out_base + (oc + 1) * oh * ow];
                    plane.fill(bias[oc]);
                    for ic in 0..c {
                        let in_plane = &input[in_base + ic * h * w..in_base + (ic + 1) * h * w];
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wv = weights[((oc * c + ic) * kernel + ky) * kernel + kx];
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                                    let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                                    for ox in 0..ow {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        out_row[ox] += wv * in_row[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        LayerSpec::BatchNorm => {
            let Shape::Map { c, h, w } = shape else { unreachable!() };
            let hw = h * w;
            let gamma = &values[*val_off..*val_off + c];
            let beta = &values[*val_off + c..*val_off + 2 * c];
            *val_off += 2 * c;
            let rm = &buffers[*buf_off..*buf_off + c];
            let rv = &buffers[*buf_off + c..*buf_off + 2 * c];
            *buf_off += 2 * c;
            let mut out = vec![0.0f32; input.len()];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    let is = 1.0 / (rv[ch] + BN_EPS).sqrt();
                    for i in 0..hw {
                        out[base + i] = gamma[ch] * (input[base + i] - rm[ch]) * is + beta[ch];
                    }
                }
            }
            out
        }
        LayerSpec::MaxPool { kernel, stride } => {
            let Shape::Map { c, h, w } = shape else { unreachable!() };
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            let mut out = vec![0.0f32; n * c * oh * ow];
            for s in 0..n {
                for ch in 0..c {
                    let in_base = (s * c + ch) * h * w;
                    let out_base = (s * c + ch) * oh * ow;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let v = input[in_base + (oy * stride + ky) * w + ox * stride + kx];
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                            out[out_base + oy * ow + ox] = best;
                        }
                    }
                }
            }
            out
        }
        LayerSpec::GlobalAvgPool => {
            let Shape::Map { c, h, w } = shape else { unreachable!() };
            let hw = h * w;
            let mut out = vec![0.0f32; n * c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    out[s * c + ch] = input[base..base + hw].iter().sum::<f32>() / hw as f32;
                }
            }
            out
        }
        LayerSpec::FullyConnected { out: out_dim } => {
            let in_dim = shape.len();
            let n_w = out_dim * in_dim;
            let weights = &values[*val_off..*val_off + n_w];
            let bias = &values[*val_off + n_w..*val_off + n_w + out_dim];
            *val_off += n_w + out_dim;
            let mut out = vec![0.0f32; n * out_dim];
            for s in 0..n {
                let x = &input[s * in_dim..(s + 1) * in_dim];
                for o in 0..out_dim {
                    let row = &weights[o * in_dim..(o + 1) * in_dim];
                    let mut acc = bias[o];
                    for i in 0..in_dim {
                        acc += row[i] * x[i];
                    }
                    out[s * out_dim + o] = acc;
                }
            }
            out
        }
        LayerSpec::Relu => input.iter().map(|&x| if x >= 0.0 { x } else { 0.0 }).collect(),
        LayerSpec::LeakyRelu { slope } => {
            let s = slope as f32;
            input.iter().map(|&x| if x >= 0.0 { x } else { s * x }).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_f64_eval_path_closely() {
        let spec = crate::net::NetworkSpec {
            input: (1, 8, 10),
            trunk: vec![
                LayerSpec::Conv2d { kernel: 3, out_channels: 4, stride: 1 },
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::GlobalAvgPool,
            ],
            aux_dim: 5,
            head: vec![
                LayerSpec::FullyConnected { out: 16 },
                LayerSpec::LeakyRelu { slope: 0.01 },
                LayerSpec::FullyConnected { out: 3 },
            ],
        };
        let net = Network::new(spec).unwrap();
        let mut p = net.init_params(5);
        // make running stats non-trivial so the bn path is exercised
        for (i, b) in p.buffers.iter_mut().enumerate() {
            *b += 0.01 * (i as f64 + 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let image: Vec<f64> = (0..2 * 80).map(|_| rng.random::<f64>()).collect();
        let aux: Vec<f64> = (0..2 * 5).map(|_| rng.random::<f64>() - 0.5).collect();
        let (y64, _, _) = net
            .forward(&p, &image, &aux, 2, crate::net::Mode::Eval)
            .unwrap();

        let p32 = Params32::from_params(&p);
        let image32: Vec<f32> = image.iter().map(|&v| v as f32).collect();
        let aux32: Vec<f32> = aux.iter().map(|&v| v as f32).collect();
        let y32 = net.forward_eval32(&p32, &image32, &aux32, 2).unwrap();

        assert_eq!(y64.len(), y32.len());
        for (a, b) in y64.iter().zip(y32.iter()) {
            assert!((a - *b as f64).abs() < 1e-4, "f64 {a} vs f32 {b}");
        }
    }
}
