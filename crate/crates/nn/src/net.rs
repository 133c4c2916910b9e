use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layer::{self, LayerSpec};
use crate::params::ParamSet;
use crate::NnError;

/// Shape of the activation between layers: a channel/height/width feature map
/// or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trunk that reads a feature map, an auxiliary flat input concatenated
/// after the trunk, and a head that maps the combined vector to the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input map as (channels, height, width).
    pub input: (usize, usize, usize),
    pub trunk: Vec<LayerSpec>,
    /// Flat vector concatenated to the flattened trunk output.
    pub aux_dim: usize,
    pub head: Vec<LayerSpec>,
}

/// Offsets of one layer's parameters inside a flat [`ParamSet`].
#[derive(Debug, Clone, Copy)]
struct Slot {
    val_off: usize,
    val_len: usize,
    buf_off: usize,
    buf_len: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    /// Shape after each trunk layer.
    trunk_shapes: Vec<Shape>,
    /// Dimension after each head layer.
    head_dims: Vec<usize>,
    head_in: usize,
    trunk_slots: Vec<Slot>,
    head_slots: Vec<Slot>,
    n_values: usize,
    n_buffers: usize,
}

/// Per-layer activations captured by a train-mode forward pass, consumed by
/// [`Network::backward`].
pub struct ForwardCache {
    n: usize,
    trunk: Vec<LayerCache>,
    head: Vec<LayerCache>,
}

enum LayerCache {
    Conv {
        input: Vec<f64>,
        in_dims: (usize, usize, usize),
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        dims: (usize, usize),
    },
    MaxPool {
        argmax: Vec<usize>,
        in_len: usize,
    },
    Gap {
        in_dims: (usize, usize),
    },
    Fc {
        input: Vec<f64>,
        in_dim: usize,
    },
    Act {
        input: Vec<f64>,
        slope: f64,
    },
}

/// Gradients from one backward pass: parameter gradients aligned with
/// `ParamSet::values` plus the gradient at the auxiliary input (needed when a
/// policy is trained through a critic).
pub struct Grads {
    pub values: Vec<f64>,
    pub aux_input: Vec<f64>,
}

fn walk_shape(shape: Shape, spec: &LayerSpec, where_: &str) -> Result<Shape, NnError> {
    match *spec {
        LayerSpec::Conv2d {
            kernel,
            out_channels,
            stride,
        } => {
            let Shape::Map { h, w, .. } = shape else {
                return Err(NnError::InvalidSpec(format!(
                    "{where_}: conv needs a feature-map input"
                )));
            };
            if kernel == 0 || stride == 0 || out_channels == 0 {
                return Err(NnError::InvalidSpec(format!("{where_}: conv dims must be nonzero")));
            }
            if kernel % 2 == 0 {
                return Err(NnError::InvalidSpec(format!(
                    "{where_}: conv kernel must be odd for symmetric padding"
                )));
            }
            Ok(Shape::Map {
                c: out_channels,
                h: layer::conv_out_dim(h, kernel, stride),
                w: layer::conv_out_dim(w, kernel, stride),
            })
        }
        LayerSpec::BatchNorm => match shape {
            Shape::Map { .. } => Ok(shape),
            Shape::Flat(_) => Err(NnError::InvalidSpec(format!(
                "{where_}: batchnorm needs a feature-map input"
            ))),
        },
        LayerSpec::MaxPool { kernel, stride } => {
            let Shape::Map { c, h, w } = shape else {
                return Err(NnError::InvalidSpec(format!(
                    "{where_}: maxpool needs a feature-map input"
                )));
            };
            if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                return Err(NnError::InvalidSpec(format!(
                    "{where_}: maxpool window {kernel} does not fit {h}x{w}"
                )));
            }
            Ok(Shape::Map {
                c,
                h: layer::pool_out_dim(h, kernel, stride),
                w: layer::pool_out_dim(w, kernel, stride),
            })
        }
        LayerSpec::GlobalAvgPool => {
            let Shape::Map { c, .. } = shape else {
                return Err(NnError::InvalidSpec(format!(
                    "{where_}: global average pool needs a feature-map input"
                )));
            };
            Ok(Shape::Flat(c))
        }
        LayerSpec::FullyConnected { out } => {
            if out == 0 {
                return Err(NnError::InvalidSpec(format!("{where_}: fc width must be nonzero")));
            }
            Ok(Shape::Flat(out))
        }
        LayerSpec::Relu | LayerSpec::LeakyRelu { .. } => Ok(shape),
    }
}

/// Parameter sizes (values, buffers) for one layer at a given input shape.
fn slot_sizes(shape: Shape, spec: &LayerSpec) -> (usize, usize) {
    match *spec {
        LayerSpec::Conv2d {
            kernel,
            out_channels,
            ..
        } => {
            let Shape::Map { c, .. } = shape else { unreachable!() };
            (out_channels * c * kernel * kernel + out_channels, 0)
        }
        LayerSpec::BatchNorm => {
            let Shape::Map { c, .. } = shape else { unreachable!() };
            // gamma+beta values; running mean+var buffers
            (2 * c, 2 * c)
        }
        LayerSpec::FullyConnected { out } => (out * shape.len() + out, 0),
        _ => (0, 0),
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NnError> {
        let (c, h, w) = spec.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(NnError::InvalidSpec("input map dims must be nonzero".into()));
        }
        let mut shape = Shape::Map { c, h, w };
        let mut trunk_shapes = Vec::with_capacity(spec.trunk.len());
        let mut trunk_slots = Vec::with_capacity(spec.trunk.len());
        let mut n_values = 0;
        let mut n_buffers = 0;
        for (i, l) in spec.trunk.iter().enumerate() {
            let next = walk_shape(shape, l, &format!("trunk[{i}]"))?;
            let (vl, bl) = slot_sizes(shape, l);
            trunk_slots.push(Slot {
                val_off: n_values,
                val_len: vl,
                buf_off: n_buffers,
                buf_len: bl,
            });
            n_values += vl;
            n_buffers += bl;
            shape = next;
            trunk_shapes.push(shape);
        }
        let head_in = shape.len() + spec.aux_dim;
        let mut dim = Shape::Flat(head_in);
        let mut head_dims = Vec::with_capacity(spec.head.len());
        let mut head_slots = Vec::with_capacity(spec.head.len());
        for (i, l) in spec.head.iter().enumerate() {
            let next = walk_shape(dim, l, &format!("head[{i}]"))?;
            let (vl, bl) = slot_sizes(dim, l);
            head_slots.push(Slot {
                val_off: n_values,
                val_len: vl,
                buf_off: n_buffers,
                buf_len: bl,
            });
            n_values += vl;
            n_buffers += bl;
            dim = next;
            head_dims.push(dim.len());
        }
        if dim.len() == 0 {
            return Err(NnError::InvalidSpec("network output is empty".into()));
        }
        Ok(Network {
            spec,
            trunk_shapes,
            head_dims,
            head_in,
            trunk_slots,
            head_slots,
            n_values,
            n_buffers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_values(&self) -> usize {
        self.n_values
    }

    pub fn n_buffers(&self) -> usize {
        self.n_buffers
    }

    pub fn out_dim(&self) -> usize {
        self.head_dims.last().copied().unwrap_or(self.head_in)
    }

    pub fn aux_dim(&self) -> usize {
        self.spec.aux_dim
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.spec.input;
        c * h * w
    }

    /// Shapes after each trunk layer, for inspection and tests.
    pub fn trunk_shapes(&self) -> &[Shape] {
        &self.trunk_shapes
    }

    /// `(offset, len)` of each trunk layer's trainable values in the flat
    /// parameter vector (zero-length for parameterless layers).
    pub fn trunk_value_slots(&self) -> Vec<(usize, usize)> {
        self.trunk_slots.iter().map(|s| (s.val_off, s.val_len)).collect()
    }

    /// Head counterpart of [`Network::trunk_value_slots`].
    pub fn head_value_slots(&self) -> Vec<(usize, usize)> {
        self.head_slots.iter().map(|s| (s.val_off, s.val_len)).collect()
    }

    pub fn head_dims(&self) -> &[usize] {
        &self.head_dims
    }

    /// Kaiming-uniform initialization: weights in `±sqrt(6/fan_in)`, biases
    /// in `±1/sqrt(fan_in)`, batchnorm gamma 1 / beta 0, running stats (0, 1).
    /// Draw order is fixed (layer order, weights then bias) so a seed pins
    /// every parameter.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::zeros(self.n_values, self.n_buffers);
        let mut shape = {
            let (c, h, w) = self.spec.input;
            Shape::Map { c, h, w }
        };
        for (i, l) in self.spec.trunk.iter().enumerate() {
            init_layer(&mut p, &mut rng, shape, l, self.trunk_slots[i]);
            shape = self.trunk_shapes[i];
        }
        let mut dim = Shape::Flat(self.head_in);
        for (i, l) in self.spec.head.iter().enumerate() {
            init_layer(&mut p, &mut rng, dim, l, self.head_slots[i]);
            dim = Shape::Flat(self.head_dims[i]);
        }
        p
    }

    /// Runs the network over a batch of `n` samples.
    ///
    /// `image` holds `n` flattened input maps, `aux` holds `n` auxiliary rows.
    /// Train mode uses batch statistics in batchnorm layers and returns both a
    /// cache for [`Network::backward`] and the updated buffer vector (running
    /// statistics after this batch); the caller decides whether to apply it.
    /// Eval mode uses running statistics and returns neither.
    #[allow(clippy::type_complexity)]
    pub fn forward(
        &self,
        params: &ParamSet,
        image: &[f64],
        aux: &[f64],
        n: usize,
        mode: Mode,
    ) -> Result<(Vec<f64>, Option<ForwardCache>, Option<Vec<f64>>), NnError> {
        if n == 0 {
            return Err(NnError::ShapeMismatch("batch size is zero".into()));
        }
        if image.len() != n * self.input_len() {
            return Err(NnError::ShapeMismatch(format!(
                "image len {} != n {} * input {}",
                image.len(),
                n,
                self.input_len()
            )));
        }
        if aux.len() != n * self.spec.aux_dim {
            return Err(NnError::ShapeMismatch(format!(
                "aux len {} != n {} * aux_dim {}",
                aux.len(),
                n,
                self.spec.aux_dim
            )));
        }
        if params.values.len() != self.n_values || params.buffers.len() != self.n_buffers {
            return Err(NnError::ShapeMismatch(format!(
                "param set ({}, {}) does not match network ({}, {})",
                params.values.len(),
                params.buffers.len(),
                self.n_values,
                self.n_buffers
            )));
        }
        let train = mode == Mode::Train;
        let mut caches = train.then(|| Vec::with_capacity(self.spec.trunk.len()));
        let mut new_buffers = train.then(|| params.buffers.clone());

        let mut cur = image.to_vec();
        let mut shape = {
            let (c, h, w) = self.spec.input;
            Shape::Map { c, h, w }
        };
        for (i, l) in self.spec.trunk.iter().enumerate() {
            cur = self.apply_layer(
                params,
                cur,
                shape,
                n,
                l,
                self.trunk_slots[i],
                caches.as_mut(),
                new_buffers.as_deref_mut(),
            )?;
            shape = self.trunk_shapes[i];
        }
        let trunk_out_dim = shape.len();

        // concatenate the flattened trunk output with the auxiliary row
        let mut combined = vec![0.0; n * self.head_in];
        for s in 0..n {
            combined[s * self.head_in..s * self.head_in + trunk_out_dim]
                .copy_from_slice(&cur[s * trunk_out_dim..(s + 1) * trunk_out_dim]);
            combined[s * self.head_in + trunk_out_dim..(s + 1) * self.head_in]
                .copy_from_slice(&aux[s * self.spec.aux_dim..(s + 1) * self.spec.aux_dim]);
        }

        let trunk_caches = caches.take();
        let mut head_caches = train.then(|| Vec::with_capacity(self.spec.head.len()));
        let mut cur = combined;
        let mut dim = Shape::Flat(self.head_in);
        for (i, l) in self.spec.head.iter().enumerate() {
            cur = self.apply_layer(
                params,
                cur,
                dim,
                n,
                l,
                self.head_slots[i],
                head_caches.as_mut(),
                new_buffers.as_deref_mut(),
            )?;
            dim = Shape::Flat(self.head_dims[i]);
        }
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("forward output".into()));
        }
        let cache = trunk_caches.map(|t| ForwardCache {
            n,
            trunk: t,
            head: head_caches.unwrap_or_default(),
        });
        Ok((cur, cache, new_buffers))
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_layer(
        &self,
        params: &ParamSet,
        input: Vec<f64>,
        shape: Shape,
        n: usize,
        l: &LayerSpec,
        slot: Slot,
        caches: Option<&mut Vec<LayerCache>>,
        new_buffers: Option<&mut [f64]>,
    ) -> Result<Vec<f64>, NnError> {
        let vals = &params.values[slot.val_off..slot.val_off + slot.val_len];
        match *l {
            LayerSpec::Conv2d {
                kernel,
                out_channels,
                stride,
            } => {
                let Shape::Map { c, h, w } = shape else { unreachable!() };
                let n_w = out_channels * c * kernel * kernel;
                let (out, _, _) = layer::conv2d_forward(
                    &input,
                    n,
                    c,
                    h,
                    w,
                    &vals[..n_w],
                    &vals[n_w..],
                    out_channels,
                    kernel,
                    stride,
                );
                if let Some(cs) = caches {
                    cs.push(LayerCache::Conv {
                        input,
                        in_dims: (c, h, w),
                    });
                }
                Ok(out)
            }
            LayerSpec::BatchNorm => {
                let Shape::Map { c, h, w } = shape else { unreachable!() };
                let (gamma, beta) = vals.split_at(c);
                if let Some(cs) = caches {
                    let bn = layer::batchnorm_forward_train(&input, n, c, h * w, gamma, beta);
                    if let Some(bufs) = new_buffers {
                        let run = &mut bufs[slot.buf_off..slot.buf_off + slot.buf_len];
                        for ch in 0..c {
                            run[ch] = (1.0 - layer::BN_MOMENTUM) * run[ch]
                                + layer::BN_MOMENTUM * bn.mean[ch];
                            run[c + ch] = (1.0 - layer::BN_MOMENTUM) * run[c + ch]
                                + layer::BN_MOMENTUM * bn.var[ch];
                        }
                    }
                    cs.push(LayerCache::BatchNorm {
                        xhat: bn.xhat,
                        inv_std: bn.inv_std,
                        dims: (c, h * w),
                    });
                    Ok(bn.out)
                } else {
                    let bufs = &params.buffers[slot.buf_off..slot.buf_off + slot.buf_len];
                    let (rm, rv) = bufs.split_at(c);
                    Ok(layer::batchnorm_forward_eval(
                        &input,
                        n,
                        c,
                        h * w,
                        gamma,
                        beta,
                        rm,
                        rv,
                    ))
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let Shape::Map { c, h, w } = shape else { unreachable!() };
                let (out, argmax, _, _) = layer::maxpool_forward(&input, n, c, h, w, kernel, stride);
                if let Some(cs) = caches {
                    cs.push(LayerCache::MaxPool {
                        argmax,
                        in_len: input.len(),
                    });
                }
                Ok(out)
            }
            LayerSpec::GlobalAvgPool => {
                let Shape::Map { c, h, w } = shape else { unreachable!() };
                let out = layer::global_avg_pool_forward(&input, n, c, h * w);
                if let Some(cs) = caches {
                    cs.push(LayerCache::Gap { in_dims: (c, h * w) });
                }
                Ok(out)
            }
            LayerSpec::FullyConnected { out } => {
                let in_dim = shape.len();
                let n_w = out * in_dim;
                let y = layer::fc_forward(&input, n, in_dim, &vals[..n_w], &vals[n_w..], out);
                if let Some(cs) = caches {
                    cs.push(LayerCache::Fc { input, in_dim });
                }
                Ok(y)
            }
            LayerSpec::Relu => {
                let out = layer::leaky_relu_forward(&input, 0.0);
                if let Some(cs) = caches {
                    cs.push(LayerCache::Act { input, slope: 0.0 });
                }
                Ok(out)
            }
            LayerSpec::LeakyRelu { slope } => {
                let out = layer::leaky_relu_forward(&input, slope);
                if let Some(cs) = caches {
                    cs.push(LayerCache::Act { input, slope });
                }
                Ok(out)
            }
        }
    }

    /// Backpropagates `grad_out` (`n` rows of output gradients) through the
    /// cached activations of the matching train-mode forward pass. Gradients
    /// sum over the batch; scale `grad_out` by `1/n` upstream for a mean loss.
    /// The input-image gradient is not materialized (nothing upstream of the
    /// first layer learns), but the auxiliary-input gradient is returned.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        grad_out: &[f64],
    ) -> Result<Grads, NnError> {
        let n = cache.n;
        if grad_out.len() != n * self.out_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "grad_out len {} != n {} * out {}",
                grad_out.len(),
                n,
                self.out_dim()
            )));
        }
        if cache.trunk.len() != self.spec.trunk.len() || cache.head.len() != self.spec.head.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads = vec![0.0; self.n_values];
        let mut g = grad_out.to_vec();
        for i in (0..self.spec.head.len()).rev() {
            g = self.backprop_layer(
                params,
                &self.spec.head[i],
                self.head_slots[i],
                &cache.head[i],
                g,
                n,
                &mut grads,
                true,
            )?;
        }
        // split the combined-gradient rows back into trunk and aux parts
        let trunk_out_dim = self.head_in - self.spec.aux_dim;
        let mut aux_input = vec![0.0; n * self.spec.aux_dim];
        let mut tg = vec![0.0; n * trunk_out_dim];
        for s in 0..n {
            tg[s * trunk_out_dim..(s + 1) * trunk_out_dim]
                .copy_from_slice(&g[s * self.head_in..s * self.head_in + trunk_out_dim]);
            aux_input[s * self.spec.aux_dim..(s + 1) * self.spec.aux_dim]
                .copy_from_slice(&g[s * self.head_in + trunk_out_dim..(s + 1) * self.head_in]);
        }
        let mut g = tg;
        for i in (0..self.spec.trunk.len()).rev() {
            g = self.backprop_layer(
                params,
                &self.spec.trunk[i],
                self.trunk_slots[i],
                &cache.trunk[i],
                g,
                n,
                &mut grads,
                i > 0,
            )?;
        }
        if !grads.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("parameter gradients".into()));
        }
        Ok(Grads {
            values: grads,
            aux_input,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_layer(
        &self,
        params: &ParamSet,
        l: &LayerSpec,
        slot: Slot,
        cache: &LayerCache,
        grad_out: Vec<f64>,
        n: usize,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Result<Vec<f64>, NnError> {
        let vals = &params.values[slot.val_off..slot.val_off + slot.val_len];
        match (l, cache) {
            (
                &LayerSpec::Conv2d {
                    kernel,
                    out_channels,
                    stride,
                },
                LayerCache::Conv { input, in_dims },
            ) => {
                let (c, h, w) = *in_dims;
                let n_w = out_channels * c * kernel * kernel;
                let (gin, gw, gb) = layer::conv2d_backward(
                    input,
                    &grad_out,
                    n,
                    c,
                    h,
                    w,
                    &vals[..n_w],
                    out_channels,
                    kernel,
                    stride,
                    need_input_grad,
                );
                let gslot = &mut grads[slot.val_off..slot.val_off + slot.val_len];
                gslot[..n_w].copy_from_slice(&gw);
                gslot[n_w..].copy_from_slice(&gb);
                Ok(gin.unwrap_or_default())
            }
            (LayerSpec::BatchNorm, LayerCache::BatchNorm { xhat, inv_std, dims }) => {
                let (c, hw) = *dims;
                let (gin, gg, gb) =
                    layer::batchnorm_backward(&grad_out, xhat, inv_std, n, c, hw, &vals[..c]);
                let gslot = &mut grads[slot.val_off..slot.val_off + slot.val_len];
                gslot[..c].copy_from_slice(&gg);
                gslot[c..].copy_from_slice(&gb);
                Ok(gin)
            }
            (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax, in_len }) => {
                Ok(layer::maxpool_backward(&grad_out, argmax, *in_len))
            }
            (LayerSpec::GlobalAvgPool, LayerCache::Gap { in_dims }) => {
                let (c, hw) = *in_dims;
                Ok(layer::global_avg_pool_backward(&grad_out, n, c, hw))
            }
            (&LayerSpec::FullyConnected { out }, LayerCache::Fc { input, in_dim }) => {
                let n_w = out * in_dim;
                let (gin, gw, gb) =
                    layer::fc_backward(input, &grad_out, n, *in_dim, &vals[..n_w], out);
                let gslot = &mut grads[slot.val_off..slot.val_off + slot.val_len];
                gslot[..n_w].copy_from_slice(&gw);
                gslot[n_w..].copy_from_slice(&gb);
                Ok(gin)
            }
            (LayerSpec::Relu, LayerCache::Act { input, slope })
            | (LayerSpec::LeakyRelu { .. }, LayerCache::Act { input, slope }) => {
                Ok(layer::leaky_relu_backward(input, &grad_out, *slope))
            }
            _ => Err(NnError::MissingCache),
        }
    }
}

fn init_layer(p: &mut ParamSet, rng: &mut ChaCha8Rng, shape: Shape, l: &LayerSpec, slot: Slot) {
    let uniform = |rng: &mut ChaCha8Rng, bound: f64| rng.random::<f64>() * 2.0 * bound - bound;
    match *l {
        LayerSpec::Conv2d {
            kernel,
            out_channels,
            ..
        } => {
            let Shape::Map { c, .. } = shape else { unreachable!() };
            let fan_in = (c * kernel * kernel) as f64;
            let wb = (6.0 / fan_in).sqrt();
            let bb = 1.0 / fan_in.sqrt();
            let n_w = out_channels * c * kernel * kernel;
            let vals = &mut p.values[slot.val_off..slot.val_off + slot.val_len];
            for v in vals[..n_w].iter_mut() {
                *v = uniform(rng, wb);
            }
            for v in vals[n_w..].iter_mut() {
                *v = uniform(rng, bb);
            }
        }
        LayerSpec::FullyConnected { out } => {
            let fan_in = shape.len() as f64;
            let wb = (6.0 / fan_in).sqrt();
            let bb = 1.0 / fan_in.sqrt();
            let n_w = out * shape.len();
            let vals = &mut p.values[slot.val_off..slot.val_off + slot.val_len];
            for v in vals[..n_w].iter_mut() {
                *v = uniform(rng, wb);
            }
            for v in vals[n_w..].iter_mut() {
                *v = uniform(rng, bb);
            }
        }
        LayerSpec::BatchNorm => {
            let Shape::Map { c, .. } = shape else { unreachable!() };
            let vals = &mut p.values[slot.val_off..slot.val_off + slot.val_len];
            for v in vals[..c].iter_mut() {
                *v = 1.0; // gamma
            }
            // beta stays 0
            let bufs = &mut p.buffers[slot.buf_off..slot.buf_off + slot.buf_len];
            for v in bufs[c..].iter_mut() {
                *v = 1.0; // running variance
            }
        }
        _ => {}
    }
}
