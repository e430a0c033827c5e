//! Probability-based background purification.
//!
//! Every pixel gets a Mahalanobis score against the global scene statistics;
//! the score distribution is thresholded at its empirical `gamma`-quantile,
//! pixels above the threshold are flagged as likely anomalies, and the
//! remaining background supplies three training sets: single spectra,
//! single-band blocks, and full-depth blocks.

use rayon::prelude::*;

use crate::cube::{HsiCube, Raster};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::stats::{Regularizer, SpectralStats};

/// Default covariance ridge for purification: `1e-6 * trace(C) / L`.
pub const DEFAULT_RIDGE: Regularizer = Regularizer::RelativeTrace(1e-6);

/// Default background confidence.
pub const DEFAULT_GAMMA: f64 = 0.99;

/// Fit the global scene statistics used for purification scoring.
pub fn global_stats(cube: &HsiCube, reg: Regularizer) -> Result<SpectralStats> {
    SpectralStats::global(cube, reg)
}

/// Mahalanobis score of every pixel against `stats`, as a raster.
pub fn mahalanobis_scores(cube: &HsiCube, stats: &SpectralStats) -> Result<Raster> {
    if stats.bands() != cube.bands() {
        return Err(Error::BandMismatch {
            model: stats.bands(),
            cube: cube.bands(),
        });
    }
    let n = cube.num_pixels();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; cube.bands()];
            cube.copy_spectrum(i, &mut buf);
            stats.mahalanobis(&buf)
        })
        .collect();
    Raster::new(cube.height(), cube.width(), scores)
}

/// Purification result: the binary anomaly mask and the threshold behind it.
#[derive(Debug, Clone)]
pub struct BackgroundMask {
    /// 1 = likely anomaly, 0 = background.
    pub mask: Raster,
    /// The score threshold `alpha`; strictly greater scores are flagged.
    pub threshold: f64,
    /// The confidence this mask was built with.
    pub gamma: f64,
}

impl BackgroundMask {
    pub fn anomaly_count(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn background_count(&self) -> usize {
        self.mask.num_pixels() - self.anomaly_count()
    }
}

/// Threshold a score raster at its empirical `gamma`-quantile.
///
/// The threshold is the order statistic at rank `ceil(gamma * N)` (no
/// interpolation), and flagging uses a strict comparison, so at most a
/// `(1 - gamma) + 1/N` fraction of pixels can be flagged.
pub fn threshold_by_confidence(scores: &Raster, gamma: f64) -> Result<BackgroundMask> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    let n = scores.num_pixels();
    let mut sorted: Vec<f64> = scores.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    // ceil(gamma * N) with a tiny slack so exact multiples do not round up.
    let rank = ((gamma * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let threshold = sorted[rank - 1];
    let mask_data: Vec<f64> = scores
        .data()
        .iter()
        .map(|&s| if s > threshold { 1.0 } else { 0.0 })
        .collect();
    Ok(BackgroundMask {
        mask: Raster::new(scores.height(), scores.width(), mask_data)?,
        threshold,
        gamma,
    })
}

// ---------------------------------------------------------------------------
// Training-set extraction
// ---------------------------------------------------------------------------

/// Background samples for one model dimensionality.
///
/// * `dim = 1` — one `(1, 1, bands)` tensor per background pixel;
/// * `dim = 2` — one `(1, block, block)` tensor per fully-background window
///   position and band;
/// * `dim = 3` — one `(bands, block, block)` tensor per window position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub dim: u8,
    pub samples: Vec<Tensor>,
    pub block: usize,
    pub step: usize,
    pub bands: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn sample_elems(dim: u8, block: usize, bands: usize) -> usize {
        match dim {
            1 => bands,
            2 => block * block,
            _ => block * block * bands,
        }
    }

    /// Persist in the binary container: magic `AETS`, version, dim, block,
    /// step, bands, sample count, then float32 LE sample payloads.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"AETS");
        buf.push(1u8); // version
        buf.push(self.dim);
        buf.extend_from_slice(&(self.block as u32).to_le_bytes());
        buf.extend_from_slice(&(self.step as u32).to_le_bytes());
        buf.extend_from_slice(&(self.bands as u32).to_le_bytes());
        buf.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            for &v in s.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<TrainingSet> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let fail = |reason: String| Error::Format {
            format: "training-set",
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 26 || &bytes[0..4] != b"AETS" {
            return Err(fail("missing AETS magic".into()));
        }
        if bytes[4] != 1 {
            return Err(fail(format!("unsupported version {}", bytes[4])));
        }
        let dim = bytes[5];
        if !(1..=3).contains(&dim) {
            return Err(fail(format!("bad dimension {dim}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let block = u32_at(6);
        let step = u32_at(10);
        let bands = u32_at(14);
        let count = u64::from_le_bytes(bytes[18..26].try_into().unwrap()) as usize;
        let elems = Self::sample_elems(dim, block, bands);
        let expect = 26 + count * elems * 4;
        if bytes.len() != expect {
            return Err(fail(format!(
                "payload holds {} bytes, need {expect}",
                bytes.len()
            )));
        }
        let shape = match dim {
            1 => (1, 1, bands),
            2 => (1, block, block),
            _ => (bands, block, block),
        };
        let mut samples = Vec::with_capacity(count);
        let mut pos = 26;
        for _ in 0..count {
            let data: Vec<f64> = bytes[pos..pos + elems * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            pos += elems * 4;
            samples.push(Tensor::from_vec(shape.0, shape.1, shape.2, data)?);
        }
        Ok(TrainingSet {
            dim,
            samples,
            block,
            step,
            bands,
        })
    }
}

/// Extract the three training sets from the background region of a cube.
///
/// The d=1 set holds every background spectral vector. Window positions for
/// d=2 and d=3 slide left-to-right, top-to-bottom with the given step; a
/// position contributes only when its `block x block` footprint contains no
/// flagged pixel. Each surviving footprint yields one single-band block per
/// band (d=2) and one full-depth block (d=3).
pub fn extract_training_sets(
    cube: &HsiCube,
    mask: &BackgroundMask,
    block: usize,
    step: usize,
) -> Result<(TrainingSet, TrainingSet, TrainingSet)> {
    let (h, w, l) = (cube.height(), cube.width(), cube.bands());
    if mask.mask.height() != h || mask.mask.width() != w {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match cube {h}x{w}",
            mask.mask.height(),
            mask.mask.width()
        )));
    }
    if block == 0 || block > h.min(w) {
        return Err(Error::InvalidParam(format!(
            "block size {block} does not fit a {h}x{w} image"
        )));
    }
    if step == 0 {
        return Err(Error::InvalidParam("step must be >= 1".into()));
    }

    let n = cube.num_pixels();
    let mut spectra = Vec::new();
    for i in 0..n {
        if mask.mask.data()[i] == 0.0 {
            spectra.push(Tensor::from_vec(1, 1, l, cube.spectrum(i))?);
        }
    }
    if spectra.is_empty() {
        return Err(Error::EmptyTrainingSet { dim: 1 });
    }

    let mut footprints: Vec<(usize, usize)> = Vec::new();
    let mut y = 0;
    while y + block <= h {
        let mut x = 0;
        while x + block <= w {
            let clean =
                (y..y + block).all(|yy| (x..x + block).all(|xx| mask.mask.get(yy, xx) == 0.0));
            if clean {
                footprints.push((y, x));
            }
            x += step;
        }
        y += step;
    }
    if footprints.is_empty() {
        // d=2 and d=3 are both empty; report the smaller dimension first.
        return Err(Error::EmptyTrainingSet { dim: 2 });
    }

    let mut blocks2 = Vec::with_capacity(footprints.len() * l);
    let mut blocks3 = Vec::with_capacity(footprints.len());
    for &(y0, x0) in &footprints {
        let mut full = Vec::with_capacity(l * block * block);
        for b in 0..l {
            let plane = cube.band(b);
            let mut single = Vec::with_capacity(block * block);
            for yy in y0..y0 + block {
                single.extend_from_slice(&plane[yy * w + x0..yy * w + x0 + block]);
            }
            full.extend_from_slice(&single);
            blocks2.push(Tensor::from_vec(1, block, block, single)?);
        }
        blocks3.push(Tensor::from_vec(l, block, block, full)?);
    }

    Ok((
        TrainingSet {
            dim: 1,
            samples: spectra,
            block,
            step,
            bands: l,
        },
        TrainingSet {
            dim: 2,
            samples: blocks2,
            block,
            step,
            bands: l,
        },
        TrainingSet {
            dim: 3,
            samples: blocks3,
            block,
            step,
            bands: l,
        },
    ))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
