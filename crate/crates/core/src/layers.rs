//! Layer kernels with forward and reverse-mode passes.
//!
//! Every kernel works on a batch: the data slice holds `batch` samples of
//! the layer's per-sample shape, back to back. Convolutions are fixed to a
//! 3x3 window with stride 1 and zero padding 1; pooling is 2x2 with stride 2.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

const KERNEL: usize = 3;
const KERNEL_AREA: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_channels: usize, out_channels: usize },
    Relu,
    Sigmoid,
    Maxpool2d,
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Maxpool2d => "maxpool2d",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::Shape {
                        expected: vec![inputs],
                        actual: input.to_vec(),
                    });
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => match input {
                &[c, h, w] if c == in_channels => Ok(vec![out_channels, h, w]),
                _ => Err(Error::Shape {
                    expected: vec![in_channels, 0, 0],
                    actual: input.to_vec(),
                }),
            },
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Maxpool2d => match input {
                &[c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
                _ => config(format!("maxpool2d needs a [C,H,W] input with H,W >= 2, got {input:?}")),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of the trainable parameters, weight first.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => vec![
                vec![out_channels, in_channels, KERNEL, KERNEL],
                vec![out_channels],
            ],
            _ => Vec::new(),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => (in_channels * KERNEL_AREA, out_channels * KERNEL_AREA),
            _ => (0, 0),
        }
    }
}

/// A layer spec bound to its input shape and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: Vec<Tensor>,
}

impl Layer {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(spec: LayerSpec, input_shape: &[usize], rng: &mut R) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        let (fan_in, fan_out) = spec.fans();
        let params = spec
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                let data = if i == 0 {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
                } else {
                    vec![0.0; n]
                };
                Tensor::from_parts(shape, data)
            })
            .collect();
        Ok(Self {
            spec,
            input_shape: input_shape.to_vec(),
            output_shape,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> (Vec<f64>, LayerCache) {
        forward_batch(&self.spec, &self.params, &self.input_shape, input, batch)
    }

    /// Returns (parameter gradients, input gradient).
    pub fn backward(
        &self,
        cache: &LayerCache,
        upstream: &[f64],
        batch: usize,
    ) -> (Vec<Tensor>, Vec<f64>) {
        backward_batch(&self.spec, &self.params, &self.input_shape, cache, upstream, batch)
    }
}

/// Values retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense { input: Vec<f64> },
    Conv2d { cols: Vec<f64> },
    Activation { output: Vec<f64> },
    Maxpool2d { argmax: Vec<usize> },
    Flatten,
}

/// Forward pass of one layer on a single sample (no batch dimension).
pub fn layer_forward(spec: &LayerSpec, params: &[Tensor], input: &Tensor) -> Result<Tensor> {
    let out_shape = spec.output_shape(input.shape())?;
    let expected = spec.param_shapes();
    if expected.len() != params.len()
        || expected.iter().zip(params).any(|(s, p)| s.as_slice() != p.shape())
    {
        return config(format!(
            "{} expects parameters of shapes {expected:?}, got {:?}",
            spec.name(),
            params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
        ));
    }
    let (out, _) = forward_batch(spec, params, input.shape(), input.data(), 1);
    Ok(Tensor::from_parts(out_shape, out))
}

/// `c = a * b + beta * c` for row-major m x k and k x n operands with
/// explicit strides (transposes are expressed through the strides).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], channels: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(c * KERNEL_AREA + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(c * KERNEL_AREA + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn forward_batch(
    spec: &LayerSpec,
    params: &[Tensor],
    input_shape: &[usize],
    input: &[f64],
    batch: usize,
) -> (Vec<f64>, LayerCache) {
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let w = params[0].data();
            let b = params[1].data();
            let mut out = vec![0.0; batch * outputs];
            gemm(batch, inputs, outputs, input, (inputs, 1), w, (1, inputs), 0.0, &mut out);
            for row in out.chunks_exact_mut(outputs) {
                for (o, bias) in row.iter_mut().zip(b) {
                    *o += bias;
                }
            }
            (
                out,
                LayerCache::Dense {
                    input: input.to_vec(),
                },
            )
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
        } => {
            let (h, w) = (input_shape[1], input_shape[2]);
            let hw = h * w;
            let rows = in_channels * KERNEL_AREA;
            let in_len = in_channels * hw;
            let weight = params[0].data();
            let bias = params[1].data();
            let mut cols = vec![0.0; batch * rows * hw];
            let mut out = vec![0.0; batch * out_channels * hw];
            for n in 0..batch {
                let sample_cols = &mut cols[n * rows * hw..(n + 1) * rows * hw];
                im2col(&input[n * in_len..(n + 1) * in_len], in_channels, h, w, sample_cols);
                let y = &mut out[n * out_channels * hw..(n + 1) * out_channels * hw];
                for (o, plane) in y.chunks_exact_mut(hw).enumerate() {
                    plane.fill(bias[o]);
                }
                gemm(out_channels, rows, hw, weight, (rows, 1), sample_cols, (hw, 1), 1.0, y);
            }
            (out, LayerCache::Conv2d { cols })
        }
        LayerSpec::Relu => {
            let out: Vec<f64> = input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            (out.clone(), LayerCache::Activation { output: out })
        }
        LayerSpec::Sigmoid => {
            let out: Vec<f64> = input.iter().map(|&v| sigmoid(v)).collect();
            (out.clone(), LayerCache::Activation { output: out })
        }
        LayerSpec::Maxpool2d => {
            let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
            let (oh, ow) = (h / 2, w / 2);
            let in_len = c * h * w;
            let out_len = c * oh * ow;
            let mut out = vec![0.0; batch * out_len];
            let mut argmax = vec![0usize; batch * out_len];
            for n in 0..batch {
                let x = &input[n * in_len..(n + 1) * in_len];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = ch * h * w + 2 * oy * w + 2 * ox;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                                // strict comparison keeps the first maximum in row-major order
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                            let o = n * out_len + ch * oh * ow + oy * ow + ox;
                            out[o] = x[best];
                            argmax[o] = best;
                        }
                    }
                }
            }
            (out, LayerCache::Maxpool2d { argmax })
        }
        LayerSpec::Flatten => (input.to_vec(), LayerCache::Flatten),
    }
}

pub(crate) fn backward_batch(
    spec: &LayerSpec,
    params: &[Tensor],
    input_shape: &[usize],
    cache: &LayerCache,
    upstream: &[f64],
    batch: usize,
) -> (Vec<Tensor>, Vec<f64>) {
    match (*spec, cache) {
        (LayerSpec::Dense { inputs, outputs }, LayerCache::Dense { input }) => {
            let w = params[0].data();
            let mut dx = vec![0.0; batch * inputs];
            gemm(batch, outputs, inputs, upstream, (outputs, 1), w, (inputs, 1), 0.0, &mut dx);
            let mut dw = vec![0.0; outputs * inputs];
            gemm(outputs, batch, inputs, upstream, (1, outputs), input, (inputs, 1), 0.0, &mut dw);
            let mut db = vec![0.0; outputs];
            for row in upstream.chunks_exact(outputs) {
                for (d, u) in db.iter_mut().zip(row) {
                    *d += u;
                }
            }
            (
                vec![
                    Tensor::from_parts(vec![outputs, inputs], dw),
                    Tensor::from_parts(vec![outputs], db),
                ],
                dx,
            )
        }
        (
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            },
            LayerCache::Conv2d { cols },
        ) => {
            let (h, w) = (input_shape[1], input_shape[2]);
            let hw = h * w;
            let rows = in_channels * KERNEL_AREA;
            let in_len = in_channels * hw;
            let weight = params[0].data();
            let mut dw = vec![0.0; out_channels * rows];
            let mut db = vec![0.0; out_channels];
            let mut dx = vec![0.0; batch * in_len];
            let mut dcols = vec![0.0; rows * hw];
            for n in 0..batch {
                let dy = &upstream[n * out_channels * hw..(n + 1) * out_channels * hw];
                let sample_cols = &cols[n * rows * hw..(n + 1) * rows * hw];
                gemm(out_channels, hw, rows, dy, (hw, 1), sample_cols, (1, hw), 1.0, &mut dw);
                for (o, plane) in dy.chunks_exact(hw).enumerate() {
                    db[o] += plane.iter().sum::<f64>();
                }
                gemm(rows, out_channels, hw, weight, (1, rows), dy, (hw, 1), 0.0, &mut dcols);
                col2im(&dcols, in_channels, h, w, &mut dx[n * in_len..(n + 1) * in_len]);
            }
            (
                vec![
                    Tensor::from_parts(vec![out_channels, in_channels, KERNEL, KERNEL], dw),
                    Tensor::from_parts(vec![out_channels], db),
                ],
                dx,
            )
        }
        (LayerSpec::Relu, LayerCache::Activation { output }) => {
            let dx = upstream
                .iter()
                .zip(output)
                .map(|(&u, &o)| if o > 0.0 { u } else { 0.0 })
                .collect();
            (Vec::new(), dx)
        }
        (LayerSpec::Sigmoid, LayerCache::Activation { output }) => {
            let dx = upstream
                .iter()
                .zip(output)
                .map(|(&u, &o)| u * o * (1.0 - o))
                .collect();
            (Vec::new(), dx)
        }
        (LayerSpec::Maxpool2d, LayerCache::Maxpool2d { argmax }) => {
            let in_len: usize = input_shape.iter().product();
            let out_len = argmax.len() / batch.max(1);
            let mut dx = vec![0.0; batch * in_len];
            for n in 0..batch {
                for o in 0..out_len {
                    let k = n * out_len + o;
                    dx[n * in_len + argmax[k]] += upstream[k];
                }
            }
            (Vec::new(), dx)
        }
        (LayerSpec::Flatten, LayerCache::Flatten) => (Vec::new(), upstream.to_vec()),
        (spec, cache) => panic!("cache {cache:?} does not belong to a {} layer", spec.name()),
    }
}

/// Forward cache of a whole [`Sequential`] stack.
#[derive(Debug, Clone)]
pub struct SequentialCache {
    pub(crate) batch: usize,
    pub(crate) layers: Vec<LayerCache>,
}

/// A validated stack of layers where each output shape feeds the next input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn init<R: Rng>(input_shape: &[usize], specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = Layer::init(*spec, &shape, rng)?;
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> (Vec<f64>, SequentialCache) {
        debug_assert_eq!(input.len(), batch * self.input_len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&current, batch);
            caches.push(cache);
            current = out;
        }
        (
            current,
            SequentialCache {
                batch,
                layers: caches,
            },
        )
    }

    /// Returns per-layer parameter gradients and the input gradient.
    pub fn backward(
        &self,
        cache: &SequentialCache,
        upstream: &[f64],
    ) -> Result<(Vec<Vec<Tensor>>, Vec<f64>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache does not belong to this layer stack".into(),
            ));
        }
        if upstream.len() != cache.batch * self.output_len() {
            return Err(Error::Shape {
                expected: vec![cache.batch * self.output_len()],
                actual: vec![upstream.len()],
            });
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut current = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, dx) = layer.backward(&cache.layers[i], &current, cache.batch);
            grads[i] = g;
            current = dx;
        }
        Ok((grads, current))
    }
}
