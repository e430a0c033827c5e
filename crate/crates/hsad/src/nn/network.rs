//! Layer stacks with reverse-mode gradients.
//!
//! A [`Network`] owns an ordered list of layers with their parameters. In
//! train mode, batch normalization uses batch statistics and every forward
//! pass updates the running statistics; in infer mode it uses the running
//! statistics only and the network can be shared immutably across threads.
//!
//! Gradients require a [`Tape`] recorded by [`Network::forward_with_tape`];
//! the type system makes "backward without forward" unrepresentable.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::layer::{self, BnCache, LayerSpec};
use crate::nn::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One layer: its spec plus owned parameters.
///
/// `weights`/`bias` hold the kernel and bias for conv, deconv and linear
/// layers, and the per-channel scale/shift for batch normalization. The
/// running statistics are only populated for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Layer {
    fn new(spec: LayerSpec, rng: &mut impl Rng) -> Layer {
        let (n_w, n_b) = spec.param_sizes();
        let (weights, bias, running_mean, running_var) = match spec {
            LayerSpec::BatchNorm { channels } => (
                vec![1.0; channels],
                vec![0.0; channels],
                vec![0.0; channels],
                vec![1.0; channels],
            ),
            _ => {
                let w = (0..n_w)
                    .map(|_| INIT_STD * sample_standard_normal(rng))
                    .collect();
                (w, vec![0.0; n_b], Vec::new(), Vec::new())
            }
        };
        Layer {
            spec,
            weights,
            bias,
            running_mean,
            running_var,
        }
    }
}

fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero to keep ln finite.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gradients for one layer, aligned with [`Layer::weights`]/[`Layer::bias`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every layer of a network, in layer order.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &Network) -> NetGrads {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Elementwise sum with another gradient set of the same structure.
    pub fn add(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// Per-layer batch statistics queued for running-average updates:
/// `(layer index, batch mean, batch variance)`.
type BnStatUpdates = Vec<(usize, Vec<f64>, Vec<f64>)>;

/// Recorded activations from a forward pass, consumed by [`Network::backward`].
pub struct Tape {
    caches: Vec<LayerCache>,
}

enum LayerCache {
    /// Layer inputs: conv, deconv, linear, leaky ReLU.
    Inputs(Vec<Tensor>),
    /// Layer outputs: tanh, sigmoid (their gradients use the output).
    Outputs(Vec<Tensor>),
    Bn(BnCache),
    GapShape {
        h: usize,
        w: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub mode: Mode,
}

impl Network {
    /// Build a network with freshly initialized parameters: conv, deconv and
    /// linear weights drawn from a zero-mean normal with std 0.02, biases
    /// zero, batch-norm scale 1 and shift 0.
    pub fn new(specs: Vec<LayerSpec>, rng: &mut impl Rng) -> Network {
        Network {
            layers: specs.into_iter().map(|s| Layer::new(s, rng)).collect(),
            mode: Mode::Train,
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Statically propagate an input shape through the stack.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let mut shape = input;
        for (index, l) in self.layers.iter().enumerate() {
            shape = expected_output_shape(&l.spec, shape)
                .map_err(|reason| Error::Layer { index, reason })?;
        }
        Ok(shape)
    }

    /// Forward pass. Train mode uses batch statistics and updates the
    /// batch-norm running averages; infer mode is pure.
    pub fn forward(&mut self, batch: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut updates = BnStatUpdates::new();
        let out = run_layers(&self.layers, self.mode, batch, None, Some(&mut updates))?;
        self.apply_stat_updates(updates);
        Ok(out)
    }

    /// Forward pass recording a tape for [`Network::backward`].
    pub fn forward_with_tape(&mut self, batch: &[Tensor]) -> Result<(Vec<Tensor>, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut updates = Vec::new();
        let out = run_layers(
            &self.layers,
            self.mode,
            batch,
            Some(&mut caches),
            Some(&mut updates),
        )?;
        self.apply_stat_updates(updates);
        Ok((out, Tape { caches }))
    }

    /// Pure forward pass that never mutates running statistics. In train
    /// mode it still uses batch statistics.
    pub fn infer(&self, batch: &[Tensor]) -> Result<Vec<Tensor>> {
        run_layers(&self.layers, self.mode, batch, None, None)
    }

    fn apply_stat_updates(&mut self, updates: BnStatUpdates) {
        for (index, mean, var) in updates {
            let l = &mut self.layers[index];
            for (r, m) in l.running_mean.iter_mut().zip(&mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in l.running_var.iter_mut().zip(&var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }

    /// Reverse-mode gradients for every parameter and for the inputs, given
    /// upstream gradients of the loss with respect to the outputs.
    pub fn backward(&self, tape: &Tape, upstream: &[Tensor]) -> (NetGrads, Vec<Tensor>) {
        let mut grads = NetGrads::zeros_like(self);
        let mut gy: Vec<Tensor> = upstream.to_vec();
        for (index, l) in self.layers.iter().enumerate().rev() {
            let cache = &tape.caches[index];
            gy = match (&l.spec, cache) {
                (LayerSpec::Conv(spec), LayerCache::Inputs(xs)) => {
                    let per_sample: Vec<_> = xs
                        .par_iter()
                        .zip(gy.par_iter())
                        .map(|(x, g)| layer::conv_backward(spec, x, &l.weights, g))
                        .collect();
                    accumulate_param_grads(&mut grads.layers[index], &per_sample);
                    per_sample.into_iter().map(|(gx, _, _)| gx).collect()
                }
                (LayerSpec::Deconv(spec), LayerCache::Inputs(xs)) => {
                    let per_sample: Vec<_> = xs
                        .par_iter()
                        .zip(gy.par_iter())
                        .map(|(x, g)| layer::deconv_backward(spec, x, &l.weights, g))
                        .collect();
                    accumulate_param_grads(&mut grads.layers[index], &per_sample);
                    per_sample.into_iter().map(|(gx, _, _)| gx).collect()
                }
                (LayerSpec::BatchNorm { channels }, LayerCache::Bn(bn)) => {
                    let (gx, dgamma, dbeta) =
                        layer::batchnorm_backward(*channels, &l.weights, bn, &gy);
                    grads.layers[index].weights = dgamma;
                    grads.layers[index].bias = dbeta;
                    gx
                }
                (LayerSpec::LeakyRelu { slope }, LayerCache::Inputs(xs)) => xs
                    .iter()
                    .zip(&gy)
                    .map(|(x, g)| layer::leaky_relu_backward(*slope, x, g))
                    .collect(),
                (LayerSpec::Tanh, LayerCache::Outputs(ys)) => ys
                    .iter()
                    .zip(&gy)
                    .map(|(y, g)| layer::tanh_backward(y, g))
                    .collect(),
                (LayerSpec::Sigmoid, LayerCache::Outputs(ys)) => ys
                    .iter()
                    .zip(&gy)
                    .map(|(y, g)| layer::sigmoid_backward(y, g))
                    .collect(),
                (LayerSpec::GlobalAvgPool, LayerCache::GapShape { h, w }) => {
                    gy.iter().map(|g| layer::gap_backward(*h, *w, g)).collect()
                }
                (LayerSpec::Linear { .. }, LayerCache::Inputs(xs)) => {
                    let per_sample: Vec<_> = xs
                        .iter()
                        .zip(&gy)
                        .map(|(x, g)| layer::linear_backward(x, &l.weights, g))
                        .collect();
                    accumulate_param_grads(&mut grads.layers[index], &per_sample);
                    per_sample.into_iter().map(|(gx, _, _)| gx).collect()
                }
                _ => unreachable!("tape cache out of sync with layer list"),
            };
        }
        (grads, gy)
    }
}

fn accumulate_param_grads(out: &mut LayerGrads, per_sample: &[(Tensor, Vec<f64>, Vec<f64>)]) {
    for (_, gw, gb) in per_sample {
        for (a, b) in out.weights.iter_mut().zip(gw) {
            *a += b;
        }
        for (a, b) in out.bias.iter_mut().zip(gb) {
            *a += b;
        }
    }
}

fn expected_output_shape(
    spec: &LayerSpec,
    input: (usize, usize, usize),
) -> std::result::Result<(usize, usize, usize), String> {
    let (c, h, w) = input;
    match spec {
        LayerSpec::Conv(s) => {
            if c != s.in_ch {
                return Err(format!("conv expects {} channels, got {c}", s.in_ch));
            }
            let oh = layer::conv_out_size(h, s.kh, s.pad_h, s.stride)
                .ok_or_else(|| format!("conv kernel {}x{} too large for {h}x{w}", s.kh, s.kw))?;
            let ow = layer::conv_out_size(w, s.kw, s.pad_w, s.stride)
                .ok_or_else(|| format!("conv kernel {}x{} too large for {h}x{w}", s.kh, s.kw))?;
            Ok((s.out_ch, oh, ow))
        }
        LayerSpec::Deconv(s) => {
            if c != s.in_ch {
                return Err(format!("deconv expects {} channels, got {c}", s.in_ch));
            }
            Ok((s.out_ch, s.out_h, s.out_w))
        }
        LayerSpec::BatchNorm { channels } => {
            if c != *channels {
                return Err(format!("batchnorm expects {channels} channels, got {c}"));
            }
            Ok(input)
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            if c * h * w != *in_features {
                return Err(format!(
                    "linear expects {in_features} features, got {c}x{h}x{w}"
                ));
            }
            Ok((*out_features, 1, 1))
        }
        LayerSpec::GlobalAvgPool => Ok((c, 1, 1)),
        LayerSpec::LeakyRelu { .. } | LayerSpec::Tanh | LayerSpec::Sigmoid => Ok(input),
    }
}

fn run_layers(
    layers: &[Layer],
    mode: Mode,
    batch: &[Tensor],
    mut tape: Option<&mut Vec<LayerCache>>,
    mut stat_updates: Option<&mut BnStatUpdates>,
) -> Result<Vec<Tensor>> {
    if batch.is_empty() {
        return Err(Error::Shape("forward pass needs a nonempty batch".into()));
    }
    let first = batch[0].shape();
    if batch.iter().any(|t| t.shape() != first) {
        return Err(Error::Shape("batch tensors must share one shape".into()));
    }
    let mut cur: Vec<Tensor> = batch.to_vec();
    for (index, l) in layers.iter().enumerate() {
        expected_output_shape(&l.spec, cur[0].shape())
            .map_err(|reason| Error::Layer { index, reason })?;
        let next: Vec<Tensor> = match &l.spec {
            LayerSpec::Conv(spec) => {
                let out: Vec<Tensor> = cur
                    .par_iter()
                    .map(|x| layer::conv_forward(spec, x, &l.weights, &l.bias))
                    .collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::Inputs(std::mem::take(&mut cur)));
                }
                out
            }
            LayerSpec::Deconv(spec) => {
                let out: Vec<Tensor> = cur
                    .par_iter()
                    .map(|x| layer::deconv_forward(spec, x, &l.weights, &l.bias))
                    .collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::Inputs(std::mem::take(&mut cur)));
                }
                out
            }
            LayerSpec::BatchNorm { channels } => match mode {
                Mode::Train => {
                    let bn = layer::batchnorm_train_forward(
                        *channels, &l.weights, &l.bias, BN_EPS, &cur,
                    );
                    if let Some(updates) = stat_updates.as_deref_mut() {
                        updates.push((index, bn.batch_mean, bn.batch_var));
                    }
                    if let Some(tape) = tape.as_deref_mut() {
                        tape.push(LayerCache::Bn(bn.cache));
                    }
                    bn.outputs
                }
                Mode::Infer => {
                    let out = layer::batchnorm_infer_forward(
                        *channels,
                        &l.weights,
                        &l.bias,
                        &l.running_mean,
                        &l.running_var,
                        BN_EPS,
                        &cur,
                    );
                    if let Some(tape) = tape.as_deref_mut() {
                        // Inference tapes are not used for training; record
                        // nothing useful but keep indices aligned.
                        tape.push(LayerCache::GapShape { h: 0, w: 0 });
                    }
                    out
                }
            },
            LayerSpec::LeakyRelu { slope } => {
                let out: Vec<Tensor> = cur
                    .iter()
                    .map(|x| layer::leaky_relu_forward(*slope, x))
                    .collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::Inputs(std::mem::take(&mut cur)));
                }
                out
            }
            LayerSpec::Tanh => {
                let out: Vec<Tensor> = cur.iter().map(layer::tanh_forward).collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::Outputs(out.clone()));
                }
                out
            }
            LayerSpec::Sigmoid => {
                let out: Vec<Tensor> = cur.iter().map(layer::sigmoid_forward).collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::Outputs(out.clone()));
                }
                out
            }
            LayerSpec::GlobalAvgPool => {
                let (_, h, w) = cur[0].shape();
                let out: Vec<Tensor> = cur.iter().map(layer::gap_forward).collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::GapShape { h, w });
                }
                out
            }
            LayerSpec::Linear { out_features, .. } => {
                let out: Vec<Tensor> = cur
                    .iter()
                    .map(|x| layer::linear_forward(*out_features, x, &l.weights, &l.bias))
                    .collect();
                if let Some(tape) = tape.as_deref_mut() {
                    tape.push(LayerCache::Inputs(std::mem::take(&mut cur)));
                }
                out
            }
        };
        if next.iter().any(|t| !t.all_finite()) {
            return Err(Error::Layer {
                index,
                reason: "non-finite output".into(),
            });
        }
        cur = next;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Binary serialization (shared by the model checkpoint format)
// ---------------------------------------------------------------------------

const KIND_CONV: u8 = 1;
const KIND_DECONV: u8 = 2;
const KIND_BATCHNORM: u8 = 3;
const KIND_LRELU: u8 = 4;
const KIND_TANH: u8 = 5;
const KIND_SIGMOID: u8 = 6;
const KIND_GAP: u8 = 7;
const KIND_LINEAR: u8 = 8;

pub(crate) fn write_network(buf: &mut Vec<u8>, net: &Network) {
    buf.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        match &l.spec {
            LayerSpec::Conv(s) => {
                buf.push(KIND_CONV);
                for v in [s.in_ch, s.out_ch, s.kh, s.kw, s.stride, s.pad_h, s.pad_w] {
                    buf.extend_from_slice(&(v as u32).to_le_bytes());
                }
            }
            LayerSpec::Deconv(s) => {
                buf.push(KIND_DECONV);
                for v in [
                    s.in_ch, s.out_ch, s.kh, s.kw, s.stride, s.pad_h, s.pad_w, s.out_h, s.out_w,
                ] {
                    buf.extend_from_slice(&(v as u32).to_le_bytes());
                }
            }
            LayerSpec::BatchNorm { channels } => {
                buf.push(KIND_BATCHNORM);
                buf.extend_from_slice(&(*channels as u32).to_le_bytes());
            }
            LayerSpec::LeakyRelu { slope } => {
                buf.push(KIND_LRELU);
                buf.extend_from_slice(&slope.to_le_bytes());
            }
            LayerSpec::Tanh => buf.push(KIND_TANH),
            LayerSpec::Sigmoid => buf.push(KIND_SIGMOID),
            LayerSpec::GlobalAvgPool => buf.push(KIND_GAP),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                buf.push(KIND_LINEAR);
                buf.extend_from_slice(&(*in_features as u32).to_le_bytes());
                buf.extend_from_slice(&(*out_features as u32).to_le_bytes());
            }
        }
    }
    // Parameters and running stats as float32, in declaration order.
    for l in &net.layers {
        for group in [&l.weights, &l.bias, &l.running_mean, &l.running_var] {
            for &v in group.iter() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("truncated checkpoint".into());
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> std::result::Result<f32, String> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64(&mut self) -> std::result::Result<f64, String> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub(crate) fn read_network(r: &mut ByteReader<'_>) -> std::result::Result<Network, String> {
    let count = r.u32()? as usize;
    if count > 1024 {
        return Err(format!("implausible layer count {count}"));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8()?;
        let spec = match kind {
            KIND_CONV => {
                let mut v = [0usize; 7];
                for slot in v.iter_mut() {
                    *slot = r.u32()? as usize;
                }
                LayerSpec::Conv(crate::nn::layer::ConvSpec {
                    in_ch: v[0],
                    out_ch: v[1],
                    kh: v[2],
                    kw: v[3],
                    stride: v[4],
                    pad_h: v[5],
                    pad_w: v[6],
                })
            }
            KIND_DECONV => {
                let mut v = [0usize; 9];
                for slot in v.iter_mut() {
                    *slot = r.u32()? as usize;
                }
                LayerSpec::Deconv(crate::nn::layer::DeconvSpec {
                    in_ch: v[0],
                    out_ch: v[1],
                    kh: v[2],
                    kw: v[3],
                    stride: v[4],
                    pad_h: v[5],
                    pad_w: v[6],
                    out_h: v[7],
                    out_w: v[8],
                })
            }
            KIND_BATCHNORM => LayerSpec::BatchNorm {
                channels: r.u32()? as usize,
            },
            KIND_LRELU => LayerSpec::LeakyRelu { slope: r.f64()? },
            KIND_TANH => LayerSpec::Tanh,
            KIND_SIGMOID => LayerSpec::Sigmoid,
            KIND_GAP => LayerSpec::GlobalAvgPool,
            KIND_LINEAR => LayerSpec::Linear {
                in_features: r.u32()? as usize,
                out_features: r.u32()? as usize,
            },
            other => return Err(format!("unknown layer kind {other}")),
        };
        specs.push(spec);
    }
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        let (n_w, n_b) = spec.param_sizes();
        let n_run = match spec {
            LayerSpec::BatchNorm { channels } => channels,
            _ => 0,
        };
        let mut read_group = |n: usize| -> std::result::Result<Vec<f64>, String> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(r.f32()? as f64);
            }
            Ok(out)
        };
        let weights = read_group(n_w)?;
        let bias = read_group(n_b)?;
        let running_mean = read_group(n_run)?;
        let running_var = read_group(n_run)?;
        layers.push(Layer {
            spec,
            weights,
            bias,
            running_mean,
            running_var,
        });
    }
    Ok(Network {
        layers,
        mode: Mode::Infer,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{ConvSpec, DeconvSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_batch(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Vec<Tensor> {
        (0..n)
            .map(|_| {
                let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::from_vec(c, h, w, data).unwrap()
            })
            .collect()
    }

    /// Scalar test loss: sum of outputs weighted by fixed pseudo-random
    /// coefficients, so every output element influences the loss.
    fn loss_and_upstream(outputs: &[Tensor]) -> (f64, Vec<Tensor>) {
        let mut loss = 0.0;
        let upstream = outputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut u = t.clone();
                for (j, (uv, &ov)) in u.data_mut().iter_mut().zip(t.data()).enumerate() {
                    let coef = (((i * 131 + j * 31 + 7) % 23) as f64 - 11.0) / 7.0;
                    loss += coef * ov;
                    *uv = coef;
                }
                u
            })
            .collect();
        (loss, upstream)
    }

    fn loss_of(net: &Network, batch: &[Tensor]) -> f64 {
        let out = net.infer(batch).unwrap();
        loss_and_upstream(&out).0
    }

    fn check_gradients(mut net: Network, batch: &[Tensor], tol: f64) {
        let (out, tape) = net.forward_with_tape(batch).unwrap();
        let (_, upstream) = loss_and_upstream(&out);
        let (grads, gx) = net.backward(&tape, &upstream);

        let h = 1e-4;
        let mut worst = 0.0f64;
        // Parameter gradients.
        for li in 0..net.layers.len() {
            for (slot, analytic) in [
                (0usize, &grads.layers[li].weights),
                (1, &grads.layers[li].bias),
            ] {
                for pi in 0..analytic.len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    {
                        let p = if slot == 0 {
                            &mut plus.layers[li].weights
                        } else {
                            &mut plus.layers[li].bias
                        };
                        p[pi] += h;
                        let m = if slot == 0 {
                            &mut minus.layers[li].weights
                        } else {
                            &mut minus.layers[li].bias
                        };
                        m[pi] -= h;
                    }
                    let fd = (loss_of(&plus, batch) - loss_of(&minus, batch)) / (2.0 * h);
                    let a = analytic[pi];
                    let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(err);
                    assert!(
                        err < tol,
                        "layer {li} slot {slot} param {pi}: analytic {a}, fd {fd}, err {err}"
                    );
                }
            }
        }
        // Input gradients.
        for (si, sample) in batch.iter().enumerate() {
            for ei in 0..sample.len() {
                let mut plus = batch.to_vec();
                let mut minus = batch.to_vec();
                plus[si].data_mut()[ei] += h;
                minus[si].data_mut()[ei] -= h;
                let fd = (loss_of(&net, &plus) - loss_of(&net, &minus)) / (2.0 * h);
                let a = gx[si].data()[ei];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(err);
                assert!(
                    err < tol,
                    "input {si}/{ei}: analytic {a}, fd {fd}, err {err}"
                );
            }
        }
        assert!(worst < tol);
    }

    #[test]
    fn gradient_check_conv_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = Network::new(
            vec![
                LayerSpec::Conv(ConvSpec {
                    in_ch: 2,
                    out_ch: 3,
                    kh: 3,
                    kw: 3,
                    stride: 2,
                    pad_h: 1,
                    pad_w: 1,
                }),
                LayerSpec::LeakyRelu { slope: 0.2 },
            ],
            &mut rng,
        );
        let batch = rand_batch(&mut rng, 2, 2, 6, 6);
        check_gradients(net, &batch, 1e-4);
    }

    #[test]
    fn gradient_check_deconv_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::new(
            vec![
                LayerSpec::Deconv(DeconvSpec {
                    in_ch: 3,
                    out_ch: 2,
                    kh: 3,
                    kw: 3,
                    stride: 2,
                    pad_h: 1,
                    pad_w: 1,
                    out_h: 6,
                    out_w: 6,
                }),
                LayerSpec::Tanh,
            ],
            &mut rng,
        );
        let batch = rand_batch(&mut rng, 2, 3, 3, 3);
        check_gradients(net, &batch, 1e-4);
    }

    #[test]
    fn gradient_check_batchnorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = Network::new(
            vec![
                LayerSpec::BatchNorm { channels: 3 },
                LayerSpec::LeakyRelu { slope: 0.2 },
            ],
            &mut rng,
        );
        // Non-trivial scale/shift so their gradients are exercised.
        net.layers[0].weights = vec![1.3, 0.7, 2.0];
        net.layers[0].bias = vec![0.2, -0.4, 0.1];
        let batch = rand_batch(&mut rng, 3, 3, 2, 2);
        check_gradients(net, &batch, 1e-4);
    }

    #[test]
    fn gradient_check_gap_linear_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let net = Network::new(
            vec![
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear {
                    in_features: 4,
                    out_features: 2,
                },
                LayerSpec::Sigmoid,
            ],
            &mut rng,
        );
        let batch = rand_batch(&mut rng, 2, 4, 3, 3);
        check_gradients(net, &batch, 1e-4);
    }

    #[test]
    fn linear_bias_gradient_is_all_ones_for_sum_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::new(
            vec![LayerSpec::Linear {
                in_features: 3,
                out_features: 4,
            }],
            &mut rng,
        );
        let batch = rand_batch(&mut rng, 1, 3, 1, 1);
        let (out, tape) = net.forward_with_tape(&batch).unwrap();
        let upstream: Vec<Tensor> = out
            .iter()
            .map(|t| Tensor::from_vec(t.channels(), 1, 1, vec![1.0; t.len()]).unwrap())
            .collect();
        let (grads, _) = net.backward(&tape, &upstream);
        assert_eq!(grads.layers[0].bias, vec![1.0; 4]);
    }

    #[test]
    fn forward_rejects_shape_mismatch_with_layer_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::new(
            vec![
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear {
                    in_features: 8,
                    out_features: 1,
                },
            ],
            &mut rng,
        );
        let batch = rand_batch(&mut rng, 1, 4, 2, 2);
        let err = net.forward(&batch).unwrap_err();
        match err {
            Error::Layer { index, .. } => assert_eq!(index, 1),
            other => panic!("expected layer error, got {other:?}"),
        }
    }

    #[test]
    fn forward_is_pure_given_fixed_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = Network::new(
            vec![
                LayerSpec::Conv(ConvSpec {
                    in_ch: 1,
                    out_ch: 2,
                    kh: 3,
                    kw: 3,
                    stride: 2,
                    pad_h: 1,
                    pad_w: 1,
                }),
                LayerSpec::BatchNorm { channels: 2 },
                LayerSpec::Tanh,
            ],
            &mut rng,
        );
        let batch = rand_batch(&mut rng, 2, 1, 6, 6);
        let a = net.infer(&batch).unwrap();
        let b = net.infer(&batch).unwrap();
        assert_eq!(a, b);
        net.set_mode(Mode::Infer);
        let c = net.infer(&batch).unwrap();
        let d = net.infer(&batch).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn checkpoint_round_trip_preserves_structure_and_f32_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut net = Network::new(
            vec![
                LayerSpec::Conv(ConvSpec {
                    in_ch: 1,
                    out_ch: 2,
                    kh: 3,
                    kw: 3,
                    stride: 2,
                    pad_h: 1,
                    pad_w: 1,
                }),
                LayerSpec::BatchNorm { channels: 2 },
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear {
                    in_features: 2,
                    out_features: 1,
                },
                LayerSpec::Sigmoid,
            ],
            &mut rng,
        );
        net.layers[1].running_mean = vec![0.25, -0.5];
        net.layers[1].running_var = vec![2.0, 0.125];
        let mut buf = Vec::new();
        write_network(&mut buf, &net);
        let mut reader = ByteReader::new(&buf);
        let restored = read_network(&mut reader).unwrap();
        assert!(reader.is_done());
        assert_eq!(restored.layers.len(), net.layers.len());
        for (a, b) in restored.layers.iter().zip(&net.layers) {
            assert_eq!(a.spec, b.spec);
            // Parameters go through f32; compare after the same rounding.
            let round = |xs: &[f64]| xs.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>();
            assert_eq!(a.weights, round(&b.weights));
            assert_eq!(a.bias, round(&b.bias));
            assert_eq!(a.running_mean, round(&b.running_mean));
            assert_eq!(a.running_var, round(&b.running_var));
        }
    }
}
