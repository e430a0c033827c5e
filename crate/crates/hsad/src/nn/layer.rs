//! Layer definitions and their forward/backward math.
//!
//! Convolution is cross-correlation with zero padding. Transposed
//! convolution is implemented as the exact adjoint of a convolution with the
//! same kernel, stride, and padding, targeting an explicit output size; this
//! makes `<conv(x), y> == <x, deconv(y)>` hold to rounding and lets a decoder
//! restore the exact spatial sizes its encoder consumed.

use crate::nn::tensor::Tensor;

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeconvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    /// Exact output height; the adjoint of a conv whose input had this size.
    pub out_h: usize,
    pub out_w: usize,
}

/// One layer kind with its static configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Deconv(DeconvSpec),
    BatchNorm {
        channels: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    /// Number of weight and bias parameters (`(0, 0)` for parameterless layers).
    /// For batch normalization the "weights" are the per-channel scales and
    /// the "bias" the per-channel shifts.
    pub fn param_sizes(&self) -> (usize, usize) {
        match self {
            LayerSpec::Conv(s) => (s.out_ch * s.in_ch * s.kh * s.kw, s.out_ch),
            LayerSpec::Deconv(s) => (s.in_ch * s.out_ch * s.kh * s.kw, s.out_ch),
            LayerSpec::BatchNorm { channels } => (*channels, *channels),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => (in_features * out_features, *out_features),
            _ => (0, 0),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Deconv(_) => "deconv",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::LeakyRelu { .. } => "lrelu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Linear { .. } => "linear",
        }
    }
}

/// Output length of a 1-D convolution: `floor((in + 2*pad - kernel)/stride) + 1`.
pub fn conv_out_size(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

pub fn conv_forward(s: &ConvSpec, x: &Tensor, w: &[f64], bias: &[f64]) -> Tensor {
    let (in_h, in_w) = (x.height(), x.width());
    let out_h = conv_out_size(in_h, s.kh, s.pad_h, s.stride).expect("validated conv shape");
    let out_w = conv_out_size(in_w, s.kw, s.pad_w, s.stride).expect("validated conv shape");
    let mut y = Tensor::zeros(s.out_ch, out_h, out_w);
    let ksize = s.kh * s.kw;
    for oc in 0..s.out_ch {
        let ych = y.channel_mut(oc);
        ych.fill(bias[oc]);
        for ic in 0..s.in_ch {
            let xch = x.channel(ic);
            let wch = &w[(oc * s.in_ch + ic) * ksize..][..ksize];
            for oy in 0..out_h {
                let iy0 = (oy * s.stride) as isize - s.pad_h as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = s.kh.min((in_h as isize - iy0).max(0) as usize);
                let yrow_base = oy * out_w;
                for ky in ky_lo..ky_hi {
                    let iy = (iy0 + ky as isize) as usize;
                    let xrow = &xch[iy * in_w..(iy + 1) * in_w];
                    let wrow = &wch[ky * s.kw..(ky + 1) * s.kw];
                    for ox in 0..out_w {
                        let ix0 = (ox * s.stride) as isize - s.pad_w as isize;
                        let kx_lo = (-ix0).max(0) as usize;
                        let kx_hi = s.kw.min((in_w as isize - ix0).max(0) as usize);
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let xoff = (ix0 + kx_lo as isize) as usize;
                        let mut acc = 0.0;
                        for (wv, xv) in wrow[kx_lo..kx_hi]
                            .iter()
                            .zip(&xrow[xoff..xoff + (kx_hi - kx_lo)])
                        {
                            acc += wv * xv;
                        }
                        ych[yrow_base + ox] += acc;
                    }
                }
            }
        }
    }
    y
}

/// Returns `(input grad, weight grad, bias grad)`.
pub fn conv_backward(
    s: &ConvSpec,
    x: &Tensor,
    w: &[f64],
    gy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (in_h, in_w) = (x.height(), x.width());
    let (_, out_h, out_w) = gy.shape();
    let ksize = s.kh * s.kw;
    let mut gx = Tensor::zeros(s.in_ch, in_h, in_w);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; s.out_ch];
    for oc in 0..s.out_ch {
        let gych = gy.channel(oc);
        gb[oc] = gych.iter().sum();
        for ic in 0..s.in_ch {
            let xch = x.channel(ic);
            let wch = &w[(oc * s.in_ch + ic) * ksize..][..ksize];
            let gwch = &mut gw[(oc * s.in_ch + ic) * ksize..][..ksize];
            let gxch = gx.channel_mut(ic);
            for oy in 0..out_h {
                let iy0 = (oy * s.stride) as isize - s.pad_h as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = s.kh.min((in_h as isize - iy0).max(0) as usize);
                for ky in ky_lo..ky_hi {
                    let iy = (iy0 + ky as isize) as usize;
                    let xrow = &xch[iy * in_w..(iy + 1) * in_w];
                    let gxrow = &mut gxch[iy * in_w..(iy + 1) * in_w];
                    let wrow = &wch[ky * s.kw..(ky + 1) * s.kw];
                    let gwrow = &mut gwch[ky * s.kw..(ky + 1) * s.kw];
                    for ox in 0..out_w {
                        let g = gych[oy * out_w + ox];
                        let ix0 = (ox * s.stride) as isize - s.pad_w as isize;
                        let kx_lo = (-ix0).max(0) as usize;
                        let kx_hi = s.kw.min((in_w as isize - ix0).max(0) as usize);
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let xoff = (ix0 + kx_lo as isize) as usize;
                        for kx in kx_lo..kx_hi {
                            let ix = xoff + (kx - kx_lo);
                            gwrow[kx] += g * xrow[ix];
                            gxrow[ix] += g * wrow[kx];
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// Transposed convolution
// ---------------------------------------------------------------------------

pub fn deconv_forward(s: &DeconvSpec, x: &Tensor, w: &[f64], bias: &[f64]) -> Tensor {
    let (in_h, in_w) = (x.height(), x.width());
    let mut y = Tensor::zeros(s.out_ch, s.out_h, s.out_w);
    let ksize = s.kh * s.kw;
    for (oc, b) in bias.iter().enumerate() {
        y.channel_mut(oc).fill(*b);
    }
    for ic in 0..s.in_ch {
        let xch_range = ic * in_h * in_w..(ic + 1) * in_h * in_w;
        for oc in 0..s.out_ch {
            let wch = &w[(ic * s.out_ch + oc) * ksize..][..ksize];
            let ych = y.channel_mut(oc);
            let xch = &x.data()[xch_range.clone()];
            for iy in 0..in_h {
                let oy0 = (iy * s.stride) as isize - s.pad_h as isize;
                let ky_lo = (-oy0).max(0) as usize;
                let ky_hi = s.kh.min((s.out_h as isize - oy0).max(0) as usize);
                for ky in ky_lo..ky_hi {
                    let oy = (oy0 + ky as isize) as usize;
                    let yrow = &mut ych[oy * s.out_w..(oy + 1) * s.out_w];
                    let wrow = &wch[ky * s.kw..(ky + 1) * s.kw];
                    for ix in 0..in_w {
                        let v = xch[iy * in_w + ix];
                        let ox0 = (ix * s.stride) as isize - s.pad_w as isize;
                        let kx_lo = (-ox0).max(0) as usize;
                        let kx_hi = s.kw.min((s.out_w as isize - ox0).max(0) as usize);
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let yoff = (ox0 + kx_lo as isize) as usize;
                        for (yv, wv) in yrow[yoff..yoff + (kx_hi - kx_lo)]
                            .iter_mut()
                            .zip(&wrow[kx_lo..kx_hi])
                        {
                            *yv += v * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(input grad, weight grad, bias grad)`.
pub fn deconv_backward(
    s: &DeconvSpec,
    x: &Tensor,
    w: &[f64],
    gy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (in_h, in_w) = (x.height(), x.width());
    let ksize = s.kh * s.kw;
    let mut gx = Tensor::zeros(s.in_ch, in_h, in_w);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; s.out_ch];
    for (oc, g) in gb.iter_mut().enumerate() {
        *g = gy.channel(oc).iter().sum();
    }
    for ic in 0..s.in_ch {
        let xch = x.channel(ic);
        let gxch = gx.channel_mut(ic);
        for oc in 0..s.out_ch {
            let gych = gy.channel(oc);
            let wch = &w[(ic * s.out_ch + oc) * ksize..][..ksize];
            let gwch = &mut gw[(ic * s.out_ch + oc) * ksize..][..ksize];
            for iy in 0..in_h {
                let oy0 = (iy * s.stride) as isize - s.pad_h as isize;
                let ky_lo = (-oy0).max(0) as usize;
                let ky_hi = s.kh.min((s.out_h as isize - oy0).max(0) as usize);
                for ky in ky_lo..ky_hi {
                    let oy = (oy0 + ky as isize) as usize;
                    let gyrow = &gych[oy * s.out_w..(oy + 1) * s.out_w];
                    let wrow = &wch[ky * s.kw..(ky + 1) * s.kw];
                    let gwrow = &mut gwch[ky * s.kw..(ky + 1) * s.kw];
                    for ix in 0..in_w {
                        let xv = xch[iy * in_w + ix];
                        let ox0 = (ix * s.stride) as isize - s.pad_w as isize;
                        let kx_lo = (-ox0).max(0) as usize;
                        let kx_hi = s.kw.min((s.out_w as isize - ox0).max(0) as usize);
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let yoff = (ox0 + kx_lo as isize) as usize;
                        let mut acc = 0.0;
                        for kx in kx_lo..kx_hi {
                            let g = gyrow[yoff + (kx - kx_lo)];
                            acc += g * wrow[kx];
                            gwrow[kx] += g * xv;
                        }
                        gxch[iy * in_w + ix] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// Batch normalization (batch-coupled, so these take whole batches)
// ---------------------------------------------------------------------------

pub struct BnCache {
    pub xhat: Vec<Tensor>,
    pub inv_std: Vec<f64>,
}

pub struct BnTrainOut {
    pub outputs: Vec<Tensor>,
    pub cache: BnCache,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Train-mode forward: normalize each channel over the whole batch and all
/// spatial positions, then scale by `gamma` and shift by `beta`.
pub fn batchnorm_train_forward(
    channels: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    batch: &[Tensor],
) -> BnTrainOut {
    let (_, h, w) = batch[0].shape();
    let m = (batch.len() * h * w) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for t in batch {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += t.channel(c).iter().sum::<f64>();
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    for t in batch {
        for c in 0..channels {
            let mu = mean[c];
            var[c] += t
                .channel(c)
                .iter()
                .map(|&v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(batch.len());
    let mut outputs = Vec::with_capacity(batch.len());
    for t in batch {
        let mut xh = t.clone();
        let mut out = t.clone();
        for c in 0..channels {
            let (mu, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (xh_v, out_v) in xh
                .channel_mut(c)
                .iter_mut()
                .zip(out.channel_mut(c).iter_mut())
            {
                let n = (*xh_v - mu) * is;
                *xh_v = n;
                *out_v = g * n + b;
            }
        }
        xhat.push(xh);
        outputs.push(out);
    }
    BnTrainOut {
        outputs,
        cache: BnCache { xhat, inv_std },
        batch_mean: mean,
        batch_var: var,
    }
}

/// Inference-mode forward using running statistics only.
pub fn batchnorm_infer_forward(
    channels: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    batch: &[Tensor],
) -> Vec<Tensor> {
    batch
        .iter()
        .map(|t| {
            let mut out = t.clone();
            for c in 0..channels {
                let is = 1.0 / (running_var[c] + eps).sqrt();
                let (mu, g, b) = (running_mean[c], gamma[c], beta[c]);
                for v in out.channel_mut(c) {
                    *v = g * (*v - mu) * is + b;
                }
            }
            out
        })
        .collect()
}

/// Returns `(input grads, gamma grad, beta grad)`.
pub fn batchnorm_backward(
    channels: usize,
    gamma: &[f64],
    cache: &BnCache,
    gy: &[Tensor],
) -> (Vec<Tensor>, Vec<f64>, Vec<f64>) {
    let (_, h, w) = gy[0].shape();
    let m = (gy.len() * h * w) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for (g, xh) in gy.iter().zip(&cache.xhat) {
        for c in 0..channels {
            let gch = g.channel(c);
            let xch = xh.channel(c);
            let mut dg = 0.0;
            let mut db = 0.0;
            for (gv, xv) in gch.iter().zip(xch) {
                dg += gv * xv;
                db += gv;
            }
            dgamma[c] += dg;
            dbeta[c] += db;
        }
    }
    // dx = inv_std * gamma * (gy - mean(gy) - xhat * mean(gy * xhat))
    let gx = gy
        .iter()
        .zip(&cache.xhat)
        .map(|(g, xh)| {
            let mut out = g.clone();
            for c in 0..channels {
                let scale = gamma[c] * cache.inv_std[c];
                let mean_gy = dbeta[c] / m;
                let mean_gy_xhat = dgamma[c] / m;
                for (ov, xv) in out.channel_mut(c).iter_mut().zip(xh.channel(c)) {
                    *ov = scale * (*ov - mean_gy - xv * mean_gy_xhat);
                }
            }
            out
        })
        .collect();
    (gx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Pointwise activations, pooling, linear
// ---------------------------------------------------------------------------

pub fn leaky_relu_forward(slope: f64, x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v <= 0.0 {
            *v *= slope;
        }
    }
    y
}

pub fn leaky_relu_backward(slope: f64, x: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *g *= slope;
        }
    }
    gx
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.tanh();
    }
    y
}

pub fn tanh_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= 1.0 - yv * yv;
    }
    gx
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    y
}

pub fn sigmoid_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= yv * (1.0 - yv);
    }
    gx
}

/// Average each channel over its spatial extent: `(c, h, w) -> (c, 1, 1)`.
pub fn gap_forward(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let plane = (h * w) as f64;
    let data = (0..c)
        .map(|ci| x.channel(ci).iter().sum::<f64>() / plane)
        .collect();
    Tensor::from_vec(c, 1, 1, data).expect("gap shape")
}

pub fn gap_backward(in_h: usize, in_w: usize, gy: &Tensor) -> Tensor {
    let (c, _, _) = gy.shape();
    let plane = (in_h * in_w) as f64;
    let mut gx = Tensor::zeros(c, in_h, in_w);
    for ci in 0..c {
        let g = gy.get(ci, 0, 0) / plane;
        gx.channel_mut(ci).fill(g);
    }
    gx
}

/// Affine map on the flattened input: `(c, h, w) -> (out_features, 1, 1)`.
pub fn linear_forward(out_features: usize, x: &Tensor, w: &[f64], bias: &[f64]) -> Tensor {
    let xin = x.data();
    let n = xin.len();
    let data = (0..out_features)
        .map(|o| {
            let row = &w[o * n..(o + 1) * n];
            bias[o] + row.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::from_vec(out_features, 1, 1, data).expect("linear shape")
}

/// Returns `(input grad, weight grad, bias grad)`.
pub fn linear_backward(x: &Tensor, w: &[f64], gy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let xin = x.data();
    let n = xin.len();
    let out_features = gy.len();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; out_features];
    let mut gx_flat = vec![0.0; n];
    for o in 0..out_features {
        let g = gy.data()[o];
        gb[o] = g;
        let wrow = &w[o * n..(o + 1) * n];
        let gwrow = &mut gw[o * n..(o + 1) * n];
        for i in 0..n {
            gwrow[i] = g * xin[i];
            gx_flat[i] += g * wrow[i];
        }
    }
    let (c, h, w_) = x.shape();
    let gx = Tensor::from_vec(c, h, w_, gx_flat).expect("linear input shape");
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
