//! Seeded synthetic scenes for end-to-end verification.
//!
//! A scene is a piecewise background (one Gaussian spectral class per
//! Voronoi cell around seeded centers, giving contiguous regions) with a few
//! small rectangular anomalies whose spectra are offset from every
//! background class, plus global additive noise. The reference map marks
//! exactly the planted pixels. Everything is a pure function of the spec,
//! including its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{HsiCube, Raster};
use crate::error::{Error, Result};

/// One background class: per-band mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundClass {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Scene description. Anomaly sides are in pixels; the planted area must
/// stay under 2% of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: Vec<BackgroundClass>,
    /// Square anomaly sides, one entry per anomaly.
    pub anomaly_sizes: Vec<usize>,
    /// Distance of the anomaly spectrum from the mean background spectrum.
    pub anomaly_offset: f64,
    /// Global additive noise level (standard deviation).
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// A scene with `class_count` seeded random background classes of
    /// moderate contrast and spread.
    pub fn with_random_classes(
        height: usize,
        width: usize,
        bands: usize,
        class_count: usize,
        seed: u64,
    ) -> SynthSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x0C1A_55E5));
        let classes = (0..class_count)
            .map(|_| BackgroundClass {
                mean: (0..bands).map(|_| rng.gen_range(-0.8..0.8)).collect(),
                sigma: vec![0.05; bands],
            })
            .collect();
        SynthSpec {
            height,
            width,
            bands,
            classes,
            anomaly_sizes: vec![2, 2, 2],
            anomaly_offset: 1.0,
            noise: 0.02,
            seed,
        }
    }

    pub fn anomaly_pixels(&self) -> usize {
        self.anomaly_sizes.iter().map(|s| s * s).sum()
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate the scene and its reference map.
pub fn generate_synthetic_hsi(spec: &SynthSpec) -> Result<(HsiCube, Raster)> {
    let (h, w, l) = (spec.height, spec.width, spec.bands);
    if h == 0 || w == 0 || l == 0 {
        return Err(Error::InvalidParam(
            "scene dimensions must be positive".into(),
        ));
    }
    if spec.classes.is_empty() {
        return Err(Error::InvalidParam(
            "need at least one background class".into(),
        ));
    }
    for c in &spec.classes {
        if c.mean.len() != l || c.sigma.len() != l {
            return Err(Error::InvalidParam(
                "class mean/sigma length must equal the band count".into(),
            ));
        }
    }
    let budget = h * w / 50;
    let planted = spec.anomaly_pixels();
    if planted > budget {
        return Err(Error::AnomalyBudget {
            got: planted,
            budget,
        });
    }
    if spec.anomaly_sizes.iter().any(|&s| s == 0 || s > h.min(w)) {
        return Err(Error::InvalidParam(
            "anomaly sizes must fit the scene".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = h * w;

    // Contiguous class regions: nearest of k seeded centers.
    let centers: Vec<(f64, f64)> = (0..spec.classes.len())
        .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)))
        .collect();
    let class_of: Vec<usize> = (0..n)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            centers
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1 .0 - y).powi(2) + (a.1 .1 - x).powi(2);
                    let db = (b.1 .0 - y).powi(2) + (b.1 .1 - x).powi(2);
                    da.partial_cmp(&db).expect("finite distances")
                })
                .expect("at least one class")
                .0
        })
        .collect();

    // Anomaly spectrum: the class centroid pushed by the requested offset
    // along a direction that mixes the between-class axes with a small
    // off-plane component. Between-class scatter then masks the anomalies
    // for a single global background model while they still stand out from
    // every class locally. Anomaly pixels keep the average class spread, so
    // a zero offset makes them statistically indistinguishable.
    let mut centroid = vec![0.0; l];
    let mut anomaly_sigma = vec![0.0; l];
    for c in &spec.classes {
        for ((a, s), (m, sg)) in centroid
            .iter_mut()
            .zip(anomaly_sigma.iter_mut())
            .zip(c.mean.iter().zip(&c.sigma))
        {
            *a += m / spec.classes.len() as f64;
            *s += sg / spec.classes.len() as f64;
        }
    }
    let mut anomaly_mean = centroid.clone();
    if spec.anomaly_offset != 0.0 {
        let mut direction = vec![0.0; l];
        for _attempt in 0..100 {
            direction.fill(0.0);
            for c in &spec.classes {
                let coef = rng.gen_range(-1.0..1.0);
                for (d, (m, ce)) in direction.iter_mut().zip(c.mean.iter().zip(&centroid)) {
                    *d += coef * (m - ce);
                }
            }
            let plane_norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            let jitter = 0.15 * plane_norm.max(1.0);
            for d in direction.iter_mut() {
                *d += jitter / (l as f64).sqrt() * standard_normal(&mut rng);
            }
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            for d in direction.iter_mut() {
                *d /= norm;
            }
            let candidate: Vec<f64> = centroid
                .iter()
                .zip(&direction)
                .map(|(c, d)| c + spec.anomaly_offset * d)
                .collect();
            // Offset from every class, not just the centroid.
            let min_dist = spec
                .classes
                .iter()
                .map(|c| {
                    c.mean
                        .iter()
                        .zip(&candidate)
                        .map(|(m, a)| (m - a) * (m - a))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if min_dist >= 0.25 * spec.anomaly_offset.abs() {
                anomaly_mean = candidate;
                break;
            }
        }
        if anomaly_mean == centroid {
            return Err(Error::InvalidParam(
                "could not find an anomaly direction offset from all classes".into(),
            ));
        }
    }

    // Place non-overlapping rectangles.
    let mut reference = Raster::zeros(h, w);
    let mut rects: Vec<(usize, usize, usize)> = Vec::new();
    for &side in &spec.anomaly_sizes {
        let mut placed = false;
        for _attempt in 0..1000 {
            let y0 = rng.gen_range(0..=h - side);
            let x0 = rng.gen_range(0..=w - side);
            let overlaps = rects.iter().any(|&(ry, rx, rs)| {
                y0 < ry + rs && ry < y0 + side && x0 < rx + rs && rx < x0 + side
            });
            if !overlaps {
                rects.push((y0, x0, side));
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        reference.set(y, x, 1.0);
                    }
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidParam(
                "could not place non-overlapping anomalies".into(),
            ));
        }
    }

    // Spectra: class (or anomaly) mean + per-band class spread + noise.
    // Band-sequential fill in pixel order keeps generation deterministic.
    let mut data = vec![0.0; n * l];
    for i in 0..n {
        let anomalous = reference.data()[i] == 1.0;
        let class = &spec.classes[class_of[i]];
        for b in 0..l {
            let base = if anomalous {
                anomaly_mean[b] + anomaly_sigma[b] * standard_normal(&mut rng)
            } else {
                class.mean[b] + class.sigma[b] * standard_normal(&mut rng)
            };
            data[b * n + i] = base + spec.noise * standard_normal(&mut rng);
        }
    }
    Ok((HsiCube::new(h, w, l, data)?, reference))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
