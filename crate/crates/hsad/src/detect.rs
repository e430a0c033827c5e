//! RX detectors: global, weighted, and dual-window local variants, plus
//! score-map combination.
//!
//! Every detector scores pixel `i` with the Mahalanobis quadratic form
//! `(f_i - m)^T (C + beta*I)^{-1} (f_i - m)`; the variants differ only in
//! which pixels and weights estimate `m` and `C`. Weighted variants take
//! per-pixel weights derived from a reconstruction error map, so well
//! reconstructed (background) pixels dominate the estimate.

use rayon::prelude::*;

use crate::cube::{HsiCube, Raster};
use crate::error::{Error, Result};
use crate::rem::WeightMap;
use crate::stats::{Regularizer, SpectralStats};

/// Default covariance shrinkage for the local detectors:
/// `1e-3 * trace(C) / L` per window.
pub const DEFAULT_LOCAL_RIDGE: Regularizer = Regularizer::RelativeTrace(1e-3);

/// Dual-window geometry: statistics come from the annulus between the outer
/// window and the inner guard window, both centered on the test pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub inner: usize,
    pub outer: usize,
}

impl WindowSpec {
    pub fn new(inner: usize, outer: usize) -> Result<WindowSpec> {
        if inner.is_multiple_of(2) || outer.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!(
                "window sizes must be odd, got inner {inner}, outer {outer}"
            )));
        }
        if inner >= outer {
            return Err(Error::InvalidParam(format!(
                "inner window {inner} must be smaller than outer window {outer}"
            )));
        }
        Ok(WindowSpec { inner, outer })
    }
}

/// Weighted global statistics: `m = sum w_i f_i`,
/// `C = sum w_i (f_i - m)(f_i - m)^T`, ridge added before factorization.
pub fn weighted_stats(
    cube: &HsiCube,
    weights: &WeightMap,
    reg: Regularizer,
) -> Result<SpectralStats> {
    if !weights.weights.same_shape_cube(cube) {
        return Err(Error::Shape(format!(
            "weight map {}x{} does not match cube {}x{}",
            weights.weights.height(),
            weights.weights.width(),
            cube.height(),
            cube.width()
        )));
    }
    SpectralStats::weighted(cube, weights.weights.data(), reg)
}

/// Score every pixel against one set of (weighted) global statistics.
pub fn wrx_scores(cube: &HsiCube, stats: &SpectralStats) -> Result<Raster> {
    crate::purify::mahalanobis_scores(cube, stats)
}

/// Dual-window local RX. Per test pixel, statistics come from the annulus
/// between the outer and inner windows (both clipped at image borders, test
/// pixel always excluded). With a weight map the annulus weights are
/// renormalized to sum 1; without one they are uniform. Fails when any
/// annulus holds fewer than 2 pixels.
pub fn local_scores(
    cube: &HsiCube,
    weights: Option<&WeightMap>,
    win: WindowSpec,
    reg: Regularizer,
) -> Result<Raster> {
    if let Some(wm) = weights {
        if !wm.weights.same_shape_cube(cube) {
            return Err(Error::Shape(format!(
                "weight map {}x{} does not match cube {}x{}",
                wm.weights.height(),
                wm.weights.width(),
                cube.height(),
                cube.width()
            )));
        }
    }
    let (h, w) = (cube.height(), cube.width());
    let outer_half = win.outer / 2;
    let inner_half = win.inner / 2;
    let scores: Vec<f64> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let y0 = y.saturating_sub(outer_half);
            let y1 = (y + outer_half).min(h - 1);
            let x0 = x.saturating_sub(outer_half);
            let x1 = (x + outer_half).min(w - 1);
            let mut members: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let in_guard = yy.abs_diff(y) <= inner_half && xx.abs_diff(x) <= inner_half;
                    if in_guard || (yy == y && xx == x) {
                        continue;
                    }
                    let j = yy * w + xx;
                    let wj = match weights {
                        Some(wm) => wm.weights.data()[j],
                        None => 1.0,
                    };
                    members.push((j, wj));
                    total += wj;
                }
            }
            if members.len() < 2 {
                return Err(Error::AnnulusTooSmall {
                    y,
                    x,
                    count: members.len(),
                });
            }
            if total <= 0.0 {
                return Err(Error::InvalidParam(format!(
                    "annulus around ({y}, {x}) has zero total weight"
                )));
            }
            for m in members.iter_mut() {
                m.1 /= total;
            }
            let stats = SpectralStats::weighted_subset(cube, &members, reg)?;
            let mut spectrum = vec![0.0; cube.bands()];
            cube.copy_spectrum(i, &mut spectrum);
            Ok(stats.mahalanobis(&spectrum))
        })
        .collect::<Result<_>>()?;
    Raster::new(h, w, scores)
}

/// Min-max normalize a score map to `[0, 1]`; a constant map becomes zeros.
pub fn normalize_scores(map: &Raster) -> Raster {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    let data: Vec<f64> = if span == 0.0 {
        vec![0.0; map.num_pixels()]
    } else {
        map.data().iter().map(|&v| (v - lo) / span).collect()
    };
    Raster::new(map.height(), map.width(), data).expect("same shape")
}

/// Convex combination of score maps: each map is min-max normalized to
/// `[0, 1]` first, then mixed pixelwise with the given weights (nonnegative,
/// summing to 1 within 1e-9).
pub fn combine_scores(maps: &[Raster], weights: &[f64]) -> Result<Raster> {
    if maps.is_empty() || maps.len() != weights.len() {
        return Err(Error::InvalidParam(format!(
            "{} maps with {} weights",
            maps.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidParam(
            "combination weights must be nonnegative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!(
            "combination weights sum to {sum}, expected 1"
        )));
    }
    let first = &maps[0];
    if maps.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Shape("score maps differ in dimensions".into()));
    }
    let mut out = vec![0.0; first.num_pixels()];
    for (map, &wk) in maps.iter().zip(weights) {
        let norm = normalize_scores(map);
        for (o, &v) in out.iter_mut().zip(norm.data()) {
            *o += wk * v;
        }
    }
    Raster::new(first.height(), first.width(), out)
}

impl Raster {
    /// True when this raster covers the cube's pixel grid.
    pub(crate) fn same_shape_cube(&self, cube: &HsiCube) -> bool {
        self.height() == cube.height() && self.width() == cube.width()
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
