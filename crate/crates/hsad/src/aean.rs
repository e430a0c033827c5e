//! Autoencoding adversarial models.
//!
//! Each model pairs a convolutional autoencoder with a discriminator and is
//! trained jointly: the discriminator ascends the cross-entropy between real
//! background samples and reconstructions, while the autoencoder descends
//! that same objective plus a weighted mean-absolute reconstruction term.
//!
//! Three input domains share one architecture family:
//!
//! * `dim = 1` — spectral vectors, kernels of height 1;
//! * `dim = 2` — single-band `m x m` blocks;
//! * `dim = 3` — full-depth `m x m x L` blocks (the band count replaces the
//!   single input/output channel).
//!
//! The encoder stacks three stride-2 convolutions (kernels 9, 5, 3; channels
//! in -> 64 -> 128 -> 256) with batch normalization and leaky ReLU; the
//! decoder mirrors it with transposed convolutions restoring the exact
//! encoder sizes, no normalization on the last layer, and a tanh output.
//! The discriminator reuses the encoder shape, pools the 256-channel feature
//! map globally, and ends in a single sigmoid unit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::nn::{
    conv_out_size, read_network, write_network, Adam, AdamConfig, ByteReader, ConvSpec, DeconvSpec,
    LayerSpec, Mode, NetGrads, Network, Tensor,
};
use crate::purify::TrainingSet;

/// Balance between the adversarial and reconstruction terms.
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Slope of every leaky ReLU in the family.
pub const LRELU_SLOPE: f64 = 0.2;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// One autoencoder/discriminator pair with its input geometry.
#[derive(Debug, Clone)]
pub struct AeanModel {
    pub dim: u8,
    pub autoencoder: Network,
    pub discriminator: Network,
    pub lambda: f64,
    /// Block size `m`; 0 for the spectral (`dim = 1`) model.
    pub block: usize,
    /// Band count `L`; fixes the input width for `dim = 1` and the channel
    /// count for `dim = 3`. Recorded but not architectural for `dim = 2`.
    pub bands: usize,
    pub trained: bool,
}

impl AeanModel {
    /// Shape of one input sample.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.dim {
            1 => (1, 1, self.bands),
            2 => (1, self.block, self.block),
            _ => (self.bands, self.block, self.block),
        }
    }
}

/// Build a freshly initialized model for the given domain.
///
/// `block` is ignored for `dim = 1`. Blocks must allow three stride-2
/// stages, so `block >= 8` for the spatial models.
pub fn build_aean(dim: u8, bands: usize, block: usize, seed: u64) -> Result<AeanModel> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParam(format!(
            "dim must be 1, 2 or 3, got {dim}"
        )));
    }
    if bands == 0 {
        return Err(Error::InvalidParam("band count must be positive".into()));
    }
    if dim != 1 && block < 8 {
        return Err(Error::InvalidParam(format!(
            "block size {block} is too small for three stride-2 stages (need >= 8)"
        )));
    }
    let (in_ch, in_h, in_w) = match dim {
        1 => (1, 1, bands),
        2 => (1, block, block),
        _ => (bands, block, block),
    };

    let kernels = [9usize, 5, 3];
    let channels = [in_ch, 64, 128, 256];
    // Spatial sizes consumed by each encoder stage; the decoder restores
    // them in reverse.
    let mut sizes = vec![(in_h, in_w)];
    for k in kernels {
        let (h, w) = *sizes.last().expect("nonempty");
        let kh = if in_h == 1 { 1 } else { k };
        let oh = conv_out_size(h, kh, kh / 2, 2).ok_or_else(|| {
            Error::InvalidParam(format!("input {h}x{w} too small for kernel {k}"))
        })?;
        let ow = conv_out_size(w, k, k / 2, 2).ok_or_else(|| {
            Error::InvalidParam(format!("input {h}x{w} too small for kernel {k}"))
        })?;
        sizes.push((oh, ow));
    }

    let conv_stage = |stage: usize| -> Vec<LayerSpec> {
        let k = kernels[stage];
        let kh = if in_h == 1 { 1 } else { k };
        vec![
            LayerSpec::Conv(ConvSpec {
                in_ch: channels[stage],
                out_ch: channels[stage + 1],
                kh,
                kw: k,
                stride: 2,
                pad_h: kh / 2,
                pad_w: k / 2,
            }),
            LayerSpec::BatchNorm {
                channels: channels[stage + 1],
            },
            LayerSpec::LeakyRelu { slope: LRELU_SLOPE },
        ]
    };

    let mut encoder: Vec<LayerSpec> = Vec::new();
    for stage in 0..3 {
        encoder.extend(conv_stage(stage));
    }

    let mut decoder: Vec<LayerSpec> = Vec::new();
    for stage in (0..3).rev() {
        let k = kernels[stage];
        let kh = if in_h == 1 { 1 } else { k };
        let (out_h, out_w) = sizes[stage];
        decoder.push(LayerSpec::Deconv(DeconvSpec {
            in_ch: channels[stage + 1],
            out_ch: channels[stage],
            kh,
            kw: k,
            stride: 2,
            pad_h: kh / 2,
            pad_w: k / 2,
            out_h,
            out_w,
        }));
        if stage > 0 {
            decoder.push(LayerSpec::BatchNorm {
                channels: channels[stage],
            });
            decoder.push(LayerSpec::LeakyRelu { slope: LRELU_SLOPE });
        } else {
            decoder.push(LayerSpec::Tanh);
        }
    }

    let mut disc: Vec<LayerSpec> = Vec::new();
    for stage in 0..3 {
        disc.extend(conv_stage(stage));
    }
    disc.push(LayerSpec::GlobalAvgPool);
    disc.push(LayerSpec::Linear {
        in_features: 256,
        out_features: 1,
    });
    disc.push(LayerSpec::Sigmoid);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let autoencoder = Network::new([encoder, decoder].concat(), &mut rng);
    let discriminator = Network::new(disc, &mut rng);

    // The decoder must restore the input shape exactly.
    let out = autoencoder.output_shape((in_ch, in_h, in_w))?;
    debug_assert_eq!(out, (in_ch, in_h, in_w));

    Ok(AeanModel {
        dim,
        autoencoder,
        discriminator,
        lambda: DEFAULT_LAMBDA,
        block: if dim == 1 { 0 } else { block },
        bands,
        trained: false,
    })
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Cross-entropy adversarial objective
/// `mean(log D(s)) + mean(log(1 - D(A(s))))`, with probabilities clamped
/// before the logs. The discriminator ascends it; the autoencoder descends
/// the part that depends on it.
pub fn adversarial_loss(real_scores: &[f64], fake_scores: &[f64]) -> f64 {
    let real: f64 =
        real_scores.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / real_scores.len() as f64;
    let fake: f64 = fake_scores
        .iter()
        .map(|&p| (1.0 - clamp_prob(p)).ln())
        .sum::<f64>()
        / fake_scores.len() as f64;
    real + fake
}

/// Mean absolute deviation over all elements of all batch items.
pub fn reconstruction_loss(inputs: &[Tensor], outputs: &[Tensor]) -> Result<f64> {
    if inputs.len() != outputs.len()
        || inputs
            .iter()
            .zip(outputs)
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::Shape(
            "reconstruction loss needs matching shapes".into(),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in inputs.iter().zip(outputs) {
        for (x, y) in a.data().iter().zip(b.data()) {
            total += (x - y).abs();
        }
        count += a.len();
    }
    Ok(total / count as f64)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training schedule. Defaults follow the model dimensionality.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda: f64,
    pub lr: f64,
    /// Steps between loss-trace rows.
    pub log_interval: usize,
}

impl TrainConfig {
    pub fn defaults_for(dim: u8) -> TrainConfig {
        let (epochs, batch_size) = if dim == 1 { (300, 64) } else { (500, 16) };
        TrainConfig {
            epochs,
            batch_size,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            lr: 2e-4,
            log_interval: 50,
        }
    }
}

/// One loss-trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub adversarial: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// Per-interval losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<LossRow>,
}

impl LossTrace {
    /// Write as CSV with columns `step,l_adv,l_r,total`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,l_adv,l_r,total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.step, r.adversarial, r.reconstruction, r.total
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn scalar_scores(outputs: &[Tensor]) -> Vec<f64> {
    outputs.iter().map(|t| t.data()[0]).collect()
}

/// Log-term gradients vanish outside the clamp window.
fn in_clamp_window(p: f64) -> bool {
    (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

/// One discriminator evaluation on a batch: the adversarial loss and the
/// gradients of its negation, which is what the discriminator descends.
/// This is the exact gradient path the training loop uses.
pub fn discriminator_objective(model: &mut AeanModel, batch: &[Tensor]) -> Result<(f64, NetGrads)> {
    let n = batch.len() as f64;
    let fake = model.autoencoder.infer(batch)?;
    let (d_real, tape_real) = model.discriminator.forward_with_tape(batch)?;
    let (d_fake, tape_fake) = model.discriminator.forward_with_tape(&fake)?;
    let real_scores = scalar_scores(&d_real);
    let fake_scores = scalar_scores(&d_fake);
    let l_adv = adversarial_loss(&real_scores, &fake_scores);
    // Descend -L_adv: d/dr = -1/(n r), d/df = +1/(n (1 - f)).
    let up_real: Vec<Tensor> = real_scores
        .iter()
        .map(|&p| {
            let g = if in_clamp_window(p) {
                -1.0 / (n * clamp_prob(p))
            } else {
                0.0
            };
            Tensor::from_vec(1, 1, 1, vec![g]).expect("scalar")
        })
        .collect();
    let up_fake: Vec<Tensor> = fake_scores
        .iter()
        .map(|&p| {
            let g = if in_clamp_window(p) {
                1.0 / (n * (1.0 - clamp_prob(p)))
            } else {
                0.0
            };
            Tensor::from_vec(1, 1, 1, vec![g]).expect("scalar")
        })
        .collect();
    let (mut grads, _) = model.discriminator.backward(&tape_real, &up_real);
    let (grads_fake, _) = model.discriminator.backward(&tape_fake, &up_fake);
    grads.add(&grads_fake);
    Ok((l_adv, grads))
}

/// One autoencoder evaluation on a batch: the objective it descends
/// (`mean log(1 - D(A(s))) + lambda * L1`), the reconstruction loss alone,
/// and the gradients of the objective with respect to the autoencoder
/// parameters. This is the exact gradient path the training loop uses.
pub fn autoencoder_objective(
    model: &mut AeanModel,
    batch: &[Tensor],
    lambda: f64,
) -> Result<(f64, f64, NetGrads)> {
    let n = batch.len() as f64;
    let (recon, tape_a) = model.autoencoder.forward_with_tape(batch)?;
    let (d_fake, tape_fake) = model.discriminator.forward_with_tape(&recon)?;
    let fake_scores = scalar_scores(&d_fake);
    let l_rec = reconstruction_loss(batch, &recon)?;
    let adv_fake: f64 = fake_scores
        .iter()
        .map(|&p| (1.0 - clamp_prob(p)).ln())
        .sum::<f64>()
        / n;
    let objective = adv_fake + lambda * l_rec;
    // d/df of mean(log(1 - f)) is -1/(n (1 - f)); descend it.
    let up_fake: Vec<Tensor> = fake_scores
        .iter()
        .map(|&p| {
            let g = if in_clamp_window(p) {
                -1.0 / (n * (1.0 - clamp_prob(p)))
            } else {
                0.0
            };
            Tensor::from_vec(1, 1, 1, vec![g]).expect("scalar")
        })
        .collect();
    let (_, grad_into_recon) = model.discriminator.backward(&tape_fake, &up_fake);
    // L1 term: lambda * sign(recon - input) / element count; subgradient 0
    // at exact agreement.
    let elems = (batch.len() * batch[0].len()) as f64;
    let upstream: Vec<Tensor> = grad_into_recon
        .into_iter()
        .zip(batch.iter().zip(&recon))
        .map(|(mut g, (s, r))| {
            for ((gv, sv), rv) in g.data_mut().iter_mut().zip(s.data()).zip(r.data()) {
                let diff = rv - sv;
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gv += lambda * sign / elems;
            }
            g
        })
        .collect();
    let (grads, _) = model.autoencoder.backward(&tape_a, &upstream);
    Ok((objective, l_rec, grads))
}

/// Alternating adversarial training: per batch, one discriminator ascent
/// step on the adversarial objective, then one autoencoder descent step on
/// `adversarial + lambda * reconstruction` (only the fake term depends on
/// the autoencoder). Deterministic given the config seed.
pub fn train_aean(
    model: &mut AeanModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<LossTrace> {
    if set.is_empty() {
        return Err(Error::EmptyTrainingSet { dim: set.dim });
    }
    if set.dim != model.dim {
        return Err(Error::Shape(format!(
            "training set dimension {} does not match model dimension {}",
            set.dim, model.dim
        )));
    }
    if set.samples[0].shape() != model.input_shape() {
        return Err(Error::Shape(format!(
            "sample shape {:?} does not match model input {:?}",
            set.samples[0].shape(),
            model.input_shape()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParam(
            "epochs and batch size must be >= 1".into(),
        ));
    }
    if cfg.lambda.is_nan() || cfg.lambda <= 0.0 {
        return Err(Error::InvalidParam("lambda must be positive".into()));
    }

    model.lambda = cfg.lambda;
    model.autoencoder.set_mode(Mode::Train);
    model.discriminator.set_mode(Mode::Train);

    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam_a = Adam::new(adam_cfg, &model.autoencoder);
    let mut adam_d = Adam::new(adam_cfg, &model.discriminator);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut trace = LossTrace::default();
    let mut step: u64 = 0;
    let lambda = cfg.lambda;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut start = 0;
        while start < order.len() {
            let end = (start + cfg.batch_size).min(order.len());
            // A trailing single sample degenerates batch statistics; skip it
            // unless it is the only batch there is.
            if end - start == 1 && start != 0 {
                break;
            }
            let batch: Vec<Tensor> = order[start..end]
                .iter()
                .map(|&i| set.samples[i].clone())
                .collect();
            start = end;
            step += 1;

            // Discriminator step: ascend the adversarial objective.
            let (l_adv, grads_d) =
                discriminator_objective(model, &batch).map_err(|e| step_err(e, step))?;
            if !l_adv.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            adam_d.step(&mut model.discriminator, &grads_d);

            // Autoencoder step: descend log(1 - D(A(s))) + lambda * L1.
            let (objective, l_rec, grads_a) =
                autoencoder_objective(model, &batch, lambda).map_err(|e| step_err(e, step))?;
            if !objective.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            adam_a.step(&mut model.autoencoder, &grads_a);

            if (step - 1).is_multiple_of(cfg.log_interval as u64) {
                trace.rows.push(LossRow {
                    step,
                    adversarial: l_adv,
                    reconstruction: l_rec,
                    total: l_adv + lambda * l_rec,
                });
            }
        }
    }
    model.trained = true;
    Ok(trace)
}

fn step_err(e: Error, step: u64) -> Error {
    match e {
        Error::Layer { .. } => Error::NonFiniteLoss { step },
        other => other,
    }
}

/// Mean reconstruction loss of a model over a sample set, without training.
pub fn evaluate_reconstruction(model: &AeanModel, samples: &[Tensor]) -> Result<f64> {
    let out = model.autoencoder.infer(samples)?;
    reconstruction_loss(samples, &out)
}

// ---------------------------------------------------------------------------
// Whole-image synthesis
// ---------------------------------------------------------------------------

/// Number of samples per inference batch during synthesis.
const SYNTH_CHUNK: usize = 64;

/// Reconstruct a whole cube with a trained model.
///
/// The spectral model rebuilds every pixel vector independently. The spatial
/// models tile each band (or the full cube) into non-overlapping `m x m`
/// blocks; dimensions that are not multiples of `m` are mirror-padded and
/// the result is cropped back. Normalization layers run in inference mode,
/// and disjoint tiles make the result independent of visit order.
pub fn synthesize_hsi(model: &AeanModel, cube: &HsiCube) -> Result<HsiCube> {
    if !model.trained {
        return Err(Error::UntrainedModel);
    }
    if model.dim != 2 && model.bands != cube.bands() {
        return Err(Error::BandMismatch {
            model: model.bands,
            cube: cube.bands(),
        });
    }
    let mut net = model.autoencoder.clone();
    net.set_mode(Mode::Infer);
    match model.dim {
        1 => synthesize_spectral(&net, cube),
        2 => synthesize_per_band(&net, cube, model.block),
        _ => synthesize_volumetric(&net, cube, model.block),
    }
}

fn synthesize_spectral(net: &Network, cube: &HsiCube) -> Result<HsiCube> {
    let (n, l) = (cube.num_pixels(), cube.bands());
    let indices: Vec<usize> = (0..n).collect();
    let chunks: Vec<Vec<Tensor>> = indices
        .par_chunks(SYNTH_CHUNK)
        .map(|chunk| {
            let batch: Vec<Tensor> = chunk
                .iter()
                .map(|&i| Tensor::from_vec(1, 1, l, cube.spectrum(i)).expect("spectrum shape"))
                .collect();
            net.infer(&batch)
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * l];
    for (chunk, outputs) in indices.chunks(SYNTH_CHUNK).zip(&chunks) {
        for (&i, out) in chunk.iter().zip(outputs) {
            for (b, &v) in out.data().iter().enumerate() {
                data[b * n + i] = v;
            }
        }
    }
    HsiCube::new(cube.height(), cube.width(), l, data)
}

/// Edge-inclusive mirror index into `0..size`.
fn mirror_index(i: usize, size: usize) -> usize {
    let period = 2 * size;
    let j = i % period;
    if j < size {
        j
    } else {
        period - 1 - j
    }
}

fn padded_extent(size: usize, block: usize) -> usize {
    size.div_ceil(block) * block
}

fn synthesize_per_band(net: &Network, cube: &HsiCube, block: usize) -> Result<HsiCube> {
    let (h, w, l) = (cube.height(), cube.width(), cube.bands());
    let (ph, pw) = (padded_extent(h, block), padded_extent(w, block));
    let planes: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|b| {
            let src = cube.band(b);
            let tile_at = |ty: usize, tx: usize| -> Tensor {
                let mut data = Vec::with_capacity(block * block);
                for yy in 0..block {
                    let sy = mirror_index(ty * block + yy, h);
                    for xx in 0..block {
                        let sx = mirror_index(tx * block + xx, w);
                        data.push(src[sy * w + sx]);
                    }
                }
                Tensor::from_vec(1, block, block, data).expect("tile shape")
            };
            let coords: Vec<(usize, usize)> = (0..ph / block)
                .flat_map(|ty| (0..pw / block).map(move |tx| (ty, tx)))
                .collect();
            let mut plane = vec![0.0; h * w];
            for chunk in coords.chunks(SYNTH_CHUNK) {
                let batch: Vec<Tensor> = chunk.iter().map(|&(ty, tx)| tile_at(ty, tx)).collect();
                let outputs = net.infer(&batch)?;
                for (&(ty, tx), out) in chunk.iter().zip(&outputs) {
                    place_tile(&mut plane, h, w, ty, tx, block, out.data());
                }
            }
            Ok(plane)
        })
        .collect::<Result<_>>()?;
    HsiCube::new(h, w, l, planes.concat())
}

fn synthesize_volumetric(net: &Network, cube: &HsiCube, block: usize) -> Result<HsiCube> {
    let (h, w, l) = (cube.height(), cube.width(), cube.bands());
    let (ph, pw) = (padded_extent(h, block), padded_extent(w, block));
    let coords: Vec<(usize, usize)> = (0..ph / block)
        .flat_map(|ty| (0..pw / block).map(move |tx| (ty, tx)))
        .collect();
    let results: Vec<Vec<Tensor>> = coords
        .par_chunks(SYNTH_CHUNK)
        .map(|chunk| {
            let batch: Vec<Tensor> = chunk
                .iter()
                .map(|&(ty, tx)| {
                    let mut data = Vec::with_capacity(l * block * block);
                    for b in 0..l {
                        let plane = cube.band(b);
                        for yy in 0..block {
                            let sy = mirror_index(ty * block + yy, h);
                            for xx in 0..block {
                                let sx = mirror_index(tx * block + xx, w);
                                data.push(plane[sy * w + sx]);
                            }
                        }
                    }
                    Tensor::from_vec(l, block, block, data).expect("tile shape")
                })
                .collect();
            net.infer(&batch)
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; h * w * l];
    let n = h * w;
    for (chunk, outputs) in coords.chunks(SYNTH_CHUNK).zip(&results) {
        for (&(ty, tx), out) in chunk.iter().zip(outputs) {
            for b in 0..l {
                place_tile(
                    &mut data[b * n..(b + 1) * n],
                    h,
                    w,
                    ty,
                    tx,
                    block,
                    out.channel(b),
                );
            }
        }
    }
    HsiCube::new(h, w, l, data)
}

/// Copy a reconstructed tile into the in-bounds part of a plane.
fn place_tile(
    plane: &mut [f64],
    h: usize,
    w: usize,
    ty: usize,
    tx: usize,
    block: usize,
    tile: &[f64],
) {
    for yy in 0..block {
        let y = ty * block + yy;
        if y >= h {
            break;
        }
        for xx in 0..block {
            let x = tx * block + xx;
            if x >= w {
                break;
            }
            plane[y * w + x] = tile[yy * block + xx];
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

impl AeanModel {
    /// Write the checkpoint: magic `AEAN`, version, dim, trained flag,
    /// bands, block, lambda, then both networks (layer tables followed by
    /// float32 parameters and running statistics in declaration order).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"AEAN");
        buf.push(1u8); // version
        buf.push(self.dim);
        buf.push(self.trained as u8);
        buf.extend_from_slice(&(self.bands as u32).to_le_bytes());
        buf.extend_from_slice(&(self.block as u32).to_le_bytes());
        buf.extend_from_slice(&self.lambda.to_le_bytes());
        write_network(&mut buf, &self.autoencoder);
        write_network(&mut buf, &self.discriminator);
        std::fs::write(path, buf).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<AeanModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let fail = |reason: String| Error::Format {
            format: "checkpoint",
            path: path.to_path_buf(),
            reason,
        };
        let mut r = ByteReader::new(&bytes);
        let magic = r.take(4).map_err(&fail)?;
        if magic != b"AEAN" {
            return Err(fail("missing AEAN magic".into()));
        }
        let version = r.u8().map_err(&fail)?;
        if version != 1 {
            return Err(fail(format!("unsupported version {version}")));
        }
        let dim = r.u8().map_err(&fail)?;
        if !(1..=3).contains(&dim) {
            return Err(fail(format!("bad dimension {dim}")));
        }
        let trained = r.u8().map_err(&fail)? != 0;
        let bands = r.u32().map_err(&fail)? as usize;
        let block = r.u32().map_err(&fail)? as usize;
        let lambda = r.f64().map_err(&fail)?;
        let autoencoder = read_network(&mut r).map_err(&fail)?;
        let discriminator = read_network(&mut r).map_err(&fail)?;
        if !r.is_done() {
            return Err(fail("trailing bytes after discriminator".into()));
        }
        Ok(AeanModel {
            dim,
            autoencoder,
            discriminator,
            lambda,
            block,
            bands,
            trained,
        })
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
