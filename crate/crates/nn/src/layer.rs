use serde::{Deserialize, Serialize};

/// One layer of a network description.
///
/// Convolutions use zero padding of `kernel / 2` so odd kernels with stride 1
/// preserve the map size. Pooling uses no padding and floors the output size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        kernel: usize,
        out_channels: usize,
        stride: usize,
    },
    BatchNorm,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    FullyConnected {
        out: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

pub(crate) fn conv_out_dim(in_dim: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (in_dim + 2 * pad - kernel) / stride + 1
}

pub(crate) fn pool_out_dim(in_dim: usize, kernel: usize, stride: usize) -> usize {
    (in_dim - kernel) / stride + 1
}

/// Valid output-index range `[lo, hi)` such that `o*stride + k_off - pad`
/// stays inside `[0, in_dim)`.
fn valid_range(in_dim: usize, out_dim: usize, k_off: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi_incl = (in_dim - 1 + pad).checked_sub(k_off).map(|v| v / stride);
    match hi_incl {
        Some(h) => (lo.min(out_dim), (h + 1).min(out_dim)),
        None => (0, 0),
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward(
    input: &[f64],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    co: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let pad = kernel / 2;
    let oh = conv_out_dim(h, kernel, stride);
    let ow = conv_out_dim(w, kernel, stride);
    let mut out = vec![0.0; n * co * oh * ow];
    for s in 0..n {
        let in_base = s * ci * h * w;
        let out_base = s * co * oh * ow;
        for oc in 0..co {
            let plane = &mut out[out_base + oc * oh * ow..out_base + (oc + 1) * oh * ow];
            plane.fill(bias[oc]);
            for ic in 0..ci {
                let in_plane = &input[in_base + ic * h * w..in_base + (ic + 1) * h * w];
                for ky in 0..kernel {
                    let (oh_lo, oh_hi) = valid_range(h, oh, ky, pad, stride);
                    for kx in 0..kernel {
                        let (ow_lo, ow_hi) = valid_range(w, ow, kx, pad, stride);
                        let wv = weights[((oc * ci + ic) * kernel + ky) * kernel + kx];
                        for oy in oh_lo..oh_hi {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in ow_lo..ow_hi {
                                let ix = ox * stride + kx - pad;
                                out_row[ox] += wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Returns `(grad_input, grad_weights, grad_bias)`. `grad_input` is skipped
/// when `need_input_grad` is false (first trunk layer).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    input: &[f64],
    grad_out: &[f64],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    co: usize,
    kernel: usize,
    stride: usize,
    need_input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let pad = kernel / 2;
    let oh = conv_out_dim(h, kernel, stride);
    let ow = conv_out_dim(w, kernel, stride);
    let mut grad_w = vec![0.0; co * ci * kernel * kernel];
    let mut grad_b = vec![0.0; co];
    let mut grad_in = if need_input_grad {
        Some(vec![0.0; n * ci * h * w])
    } else {
        None
    };
    for s in 0..n {
        let in_base = s * ci * h * w;
        let out_base = s * co * oh * ow;
        for oc in 0..co {
            let g_plane = &grad_out[out_base + oc * oh * ow..out_base + (oc + 1) * oh * ow];
            grad_b[oc] += g_plane.iter().sum::<f64>();
            for ic in 0..ci {
                let in_plane = &input[in_base + ic * h * w..in_base + (ic + 1) * h * w];
                for ky in 0..kernel {
                    let (oh_lo, oh_hi) = valid_range(h, oh, ky, pad, stride);
                    for kx in 0..kernel {
                        let (ow_lo, ow_hi) = valid_range(w, ow, kx, pad, stride);
                        let widx = ((oc * ci + ic) * kernel + ky) * kernel + kx;
                        let wv = weights[widx];
                        let mut acc = 0.0;
                        for oy in oh_lo..oh_hi {
                            let iy = oy * stride + ky - pad;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                            if let Some(gi) = grad_in.as_deref_mut() {
                                let gi_row = &mut gi
                                    [in_base + ic * h * w + iy * w..in_base + ic * h * w + (iy + 1) * w];
                                for ox in ow_lo..ow_hi {
                                    let ix = ox * stride + kx - pad;
                                    acc += g_row[ox] * in_row[ix];
                                    gi_row[ix] += g_row[ox] * wv;
                                }
                            } else {
                                for ox in ow_lo..ow_hi {
                                    let ix = ox * stride + kx - pad;
                                    acc += g_row[ox] * in_row[ix];
                                }
                            }
                        }
                        grad_w[widx] += acc;
                    }
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

pub(crate) struct BnTrainOut {
    pub out: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch statistics over N*H*W per channel, two-pass for accuracy.
pub(crate) fn batchnorm_forward_train(
    input: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
) -> BnTrainOut {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let plane = &input[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            mean[ch] += plane.iter().sum::<f64>();
        }
    }
    for mu in mean.iter_mut() {
        *mu /= m;
    }
    for s in 0..n {
        for ch in 0..c {
            let plane = &input[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            let mu = mean[ch];
            var[ch] += plane.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>();
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; input.len()];
    let mut out = vec![0.0; input.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in 0..hw {
                let xh = (input[base + i] - mu) * is;
                xhat[base + i] = xh;
                out[base + i] = g * xh + b;
            }
        }
    }
    BnTrainOut {
        out,
        xhat,
        inv_std,
        mean,
        var,
    }
}

pub(crate) fn batchnorm_forward_eval(
    input: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let is = 1.0 / (running_var[ch] + BN_EPS).sqrt();
            let (mu, g, b) = (running_mean[ch], gamma[ch], beta[ch]);
            for i in 0..hw {
                out[base + i] = g * (input[base + i] - mu) * is + b;
            }
        }
    }
    out
}

/// Train-mode batchnorm backward through the batch statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    grad_out: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in 0..hw {
                let dy = grad_out[base + i];
                sum_dy[ch] += dy;
                sum_dy_xhat[ch] += dy * xhat[base + i];
            }
        }
    }
    for ch in 0..c {
        grad_gamma[ch] = sum_dy_xhat[ch];
        grad_beta[ch] = sum_dy[ch];
    }
    let mut grad_in = vec![0.0; grad_out.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let scale = gamma[ch] * inv_std[ch] / m;
            for i in 0..hw {
                let dy = grad_out[base + i];
                grad_in[base + i] =
                    scale * (m * dy - sum_dy[ch] - xhat[base + i] * sum_dy_xhat[ch]);
            }
        }
    }
    (grad_in, grad_gamma, grad_beta)
}

/// Max pooling; ties break on the first element in scan order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool_forward(
    input: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let oh = pool_out_dim(h, kernel, stride);
    let ow = pool_out_dim(w, kernel, stride);
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    for s in 0..n {
        for ch in 0..c {
            let in_base = (s * c + ch) * h * w;
            let out_base = (s * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..kernel {
                        let iy = oy * stride + ky;
                        for kx in 0..kernel {
                            let ix = ox * stride + kx;
                            let idx = in_base + iy * w + ix;
                            if input[idx] > best {
                                best = input[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[out_base + oy * ow + ox] = best;
                    argmax[out_base + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    (out, argmax, oh, ow)
}

pub(crate) fn maxpool_backward(grad_out: &[f64], argmax: &[usize], in_len: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; in_len];
    for (g, &idx) in grad_out.iter().zip(argmax.iter()) {
        grad_in[idx] += g;
    }
    grad_in
}

pub(crate) fn global_avg_pool_forward(input: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            out[s * c + ch] = input[base..base + hw].iter().sum::<f64>() / hw as f64;
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward(grad_out: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; n * c * hw];
    for s in 0..n {
        for ch in 0..c {
            let g = grad_out[s * c + ch] / hw as f64;
            let base = (s * c + ch) * hw;
            grad_in[base..base + hw].fill(g);
        }
    }
    grad_in
}

pub(crate) fn fc_forward(
    input: &[f64],
    n: usize,
    in_dim: usize,
    weights: &[f64],
    bias: &[f64],
    out_dim: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * out_dim];
    for s in 0..n {
        let x = &input[s * in_dim..(s + 1) * in_dim];
        let y = &mut out[s * out_dim..(s + 1) * out_dim];
        for o in 0..out_dim {
            let row = &weights[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias[o];
            for i in 0..in_dim {
                acc += row[i] * x[i];
            }
            y[o] = acc;
        }
    }
    out
}

pub(crate) fn fc_backward(
    input: &[f64],
    grad_out: &[f64],
    n: usize,
    in_dim: usize,
    weights: &[f64],
    out_dim: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut grad_in = vec![0.0; n * in_dim];
    let mut grad_w = vec![0.0; out_dim * in_dim];
    let mut grad_b = vec![0.0; out_dim];
    for s in 0..n {
        let x = &input[s * in_dim..(s + 1) * in_dim];
        let gy = &grad_out[s * out_dim..(s + 1) * out_dim];
        let gx = &mut grad_in[s * in_dim..(s + 1) * in_dim];
        for o in 0..out_dim {
            let g = gy[o];
            grad_b[o] += g;
            let row = &weights[o * in_dim..(o + 1) * in_dim];
            let grow = &mut grad_w[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

/// Leaky ReLU with `slope == 0.0` serving as plain ReLU. The gradient at
/// exactly zero is 1.
pub(crate) fn leaky_relu_forward(input: &[f64], slope: f64) -> Vec<f64> {
    input
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect()
}

pub(crate) fn leaky_relu_backward(input: &[f64], grad_out: &[f64], slope: f64) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out.iter())
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect()
}
