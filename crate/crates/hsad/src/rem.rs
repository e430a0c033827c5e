//! Reconstruction error maps, morphological smoothing, and pixel weights.
//!
//! The error map holds the squared Euclidean distance between each original
//! and reconstructed spectrum. A grayscale closing (dilation then erosion
//! with a flat square element, borders replicated) fills small dark holes
//! before the map is inverted into detector weights.

use crate::cube::{HsiCube, Raster};
use crate::error::{Error, Result};

/// Default structuring-element side for smoothing.
pub const DEFAULT_SE_SIZE: usize = 3;

/// Scale factor for the default weight floor: `1e-12 * max(smoothed)`.
pub const WEIGHT_FLOOR_SCALE: f64 = 1e-12;

/// Per-pixel squared Euclidean distance across bands.
pub fn compute_rem(original: &HsiCube, reconstruction: &HsiCube) -> Result<Raster> {
    if original.height() != reconstruction.height()
        || original.width() != reconstruction.width()
        || original.bands() != reconstruction.bands()
    {
        return Err(Error::Shape(format!(
            "cube {}x{}x{} vs reconstruction {}x{}x{}",
            original.height(),
            original.width(),
            original.bands(),
            reconstruction.height(),
            reconstruction.width(),
            reconstruction.bands()
        )));
    }
    let n = original.num_pixels();
    let mut data = vec![0.0; n];
    for b in 0..original.bands() {
        let pa = original.band(b);
        let pb = reconstruction.band(b);
        for (r, (x, y)) in data.iter_mut().zip(pa.iter().zip(pb)) {
            let d = x - y;
            *r += d * d;
        }
    }
    Raster::new(original.height(), original.width(), data)
}

fn window_extremum(r: &Raster, y: usize, x: usize, half: usize, pick_max: bool) -> f64 {
    let (h, w) = (r.height(), r.width());
    let y0 = y.saturating_sub(half);
    let y1 = (y + half).min(h - 1);
    let x0 = x.saturating_sub(half);
    let x1 = (x + half).min(w - 1);
    let mut best = r.get(y0, x0);
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let v = r.get(yy, xx);
            best = if pick_max { best.max(v) } else { best.min(v) };
        }
    }
    best
}

fn morph(r: &Raster, se_size: usize, pick_max: bool) -> Raster {
    let half = se_size / 2;
    let mut out = Raster::zeros(r.height(), r.width());
    for y in 0..r.height() {
        for x in 0..r.width() {
            out.set(y, x, window_extremum(r, y, x, half, pick_max));
        }
    }
    out
}

/// Grayscale dilation with a flat `se_size x se_size` square, borders
/// replicated (equivalently: the window is clipped at the image edge).
pub fn dilate(r: &Raster, se_size: usize) -> Result<Raster> {
    check_se(se_size)?;
    Ok(morph(r, se_size, true))
}

/// Grayscale erosion, the dual of [`dilate`].
pub fn erode(r: &Raster, se_size: usize) -> Result<Raster> {
    check_se(se_size)?;
    Ok(morph(r, se_size, false))
}

fn check_se(se_size: usize) -> Result<()> {
    if se_size == 0 || se_size.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!(
            "structuring element size must be odd and >= 1, got {se_size}"
        )));
    }
    Ok(())
}

/// Grayscale closing: erosion of the dilation. Extensive, increasing, and
/// idempotent.
pub fn morphological_close(r: &Raster, se_size: usize) -> Result<Raster> {
    erode(&dilate(r, se_size)?, se_size)
}

/// Raw and smoothed reconstruction error maps.
#[derive(Debug, Clone)]
pub struct Rem {
    pub raw: Raster,
    pub smoothed: Raster,
    pub se_size: usize,
}

impl Rem {
    /// Build from a raw error map, smoothing with a closing. `se_size = 1`
    /// leaves the map unchanged (the element is a single pixel).
    pub fn from_raw(raw: Raster, se_size: usize) -> Result<Rem> {
        let smoothed = morphological_close(&raw, se_size)?;
        Ok(Rem {
            raw,
            smoothed,
            se_size,
        })
    }
}

/// Normalized per-pixel detector weights.
#[derive(Debug, Clone)]
pub struct WeightMap {
    /// Strictly positive weights summing to 1.
    pub weights: Raster,
    /// The floor applied to error values before inversion.
    pub floor: f64,
}

impl WeightMap {
    /// Uniform weights over an `h x w` raster.
    pub fn uniform(height: usize, width: usize) -> WeightMap {
        let n = height * width;
        let mut weights = Raster::zeros(height, width);
        weights.data_mut().fill(1.0 / n as f64);
        WeightMap {
            weights,
            floor: 1.0,
        }
    }
}

/// Invert a smoothed error map into weights: floor the errors at `floor`,
/// take reciprocals, and normalize to sum 1. Pixels the model reconstructs
/// well end up with large weights.
pub fn weights_from_rem(smoothed: &Raster, floor: f64) -> Result<WeightMap> {
    if floor.is_nan() || floor <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "weight floor must be positive, got {floor}"
        )));
    }
    let inv: Vec<f64> = smoothed
        .data()
        .iter()
        .map(|&r| 1.0 / r.max(floor))
        .collect();
    let total: f64 = inv.iter().sum();
    let data: Vec<f64> = inv.into_iter().map(|w| w / total).collect();
    Ok(WeightMap {
        weights: Raster::new(smoothed.height(), smoothed.width(), data)?,
        floor,
    })
}

/// The default scale-aware floor: `1e-12 * max(smoothed)`, or 1 when the
/// map is identically zero (weights are uniform either way).
pub fn default_weight_floor(smoothed: &Raster) -> f64 {
    let (_, hi) = smoothed.min_max();
    if hi > 0.0 {
        WEIGHT_FLOOR_SCALE * hi
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_cubes_give_zero_rem() {
        let cube = HsiCube::new(2, 3, 4, (0..24).map(|i| i as f64).collect()).unwrap();
        let rem = compute_rem(&cube, &cube).unwrap();
        assert!(rem.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rem_is_squared_distance_and_symmetric() {
        let a = HsiCube::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let b = HsiCube::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let ab = compute_rem(&a, &b).unwrap();
        assert_eq!(ab.data(), &[5.0]);
        let ba = compute_rem(&b, &a).unwrap();
        assert_eq!(ab.data(), ba.data());
    }

    #[test]
    fn rem_rejects_dimension_mismatch() {
        let a = HsiCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let b = HsiCube::new(2, 2, 2, vec![0.0; 8]).unwrap();
        assert!(compute_rem(&a, &b).is_err());
    }

    #[test]
    fn closing_leaves_constant_raster_unchanged() {
        let r = Raster::new(4, 5, vec![2.5; 20]).unwrap();
        let closed = morphological_close(&r, 3).unwrap();
        assert_eq!(closed.data(), r.data());
    }

    #[test]
    fn closing_fills_single_pixel_hole() {
        let mut r = Raster::new(5, 5, vec![1.0; 25]).unwrap();
        r.set(2, 2, 0.0);
        let closed = morphological_close(&r, 3).unwrap();
        assert_eq!(closed.get(2, 2), 1.0);
        assert_eq!(closed.data(), &[1.0; 25]);
    }

    #[test]
    fn even_se_size_is_rejected() {
        let r = Raster::zeros(3, 3);
        assert!(morphological_close(&r, 2).is_err());
        assert!(morphological_close(&r, 0).is_err());
    }

    /// Reference implementation: literal max/min over the clipped window.
    fn brute_force_close(r: &Raster, se: usize) -> Raster {
        let half = se / 2;
        let (h, w) = (r.height(), r.width());
        let window = |src: &Raster, y: usize, x: usize, max: bool| {
            let mut vals = Vec::new();
            for dy in -(half as isize)..=half as isize {
                for dx in -(half as isize)..=half as isize {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    vals.push(src.get(yy, xx));
                }
            }
            if max {
                vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        };
        let mut dilated = Raster::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                dilated.set(y, x, window(r, y, x, true));
            }
        }
        let mut closed = Raster::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                closed.set(y, x, window(&dilated, y, x, false));
            }
        }
        closed
    }

    #[test]
    fn closing_matches_brute_force_and_is_extensive_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for trial in 0..30 {
            let (h, w) = (rng.gen_range(3..12), rng.gen_range(3..12));
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..4.0)).collect();
            let r = Raster::new(h, w, data).unwrap();
            let se = [1, 3, 5][trial % 3];
            let ours = morphological_close(&r, se).unwrap();
            let oracle = brute_force_close(&r, se);
            assert_eq!(ours.data(), oracle.data(), "trial {trial} se {se}");
            // Extensive.
            for (a, b) in ours.data().iter().zip(r.data()) {
                assert!(a >= b, "closing not extensive");
            }
            // Idempotent.
            let twice = morphological_close(&ours, se).unwrap();
            assert_eq!(twice.data(), ours.data(), "closing not idempotent");
        }
    }

    #[test]
    fn closing_is_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (h, w) = (8, 8);
        let a: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|&v| v + rng.gen_range(0.0..0.5)).collect();
        let ca = morphological_close(&Raster::new(h, w, a).unwrap(), 3).unwrap();
        let cb = morphological_close(&Raster::new(h, w, b).unwrap(), 3).unwrap();
        for (x, y) in ca.data().iter().zip(cb.data()) {
            assert!(x <= y, "closing not monotone");
        }
    }

    #[test]
    fn uniform_errors_give_uniform_weights() {
        let r = Raster::new(2, 3, vec![4.0; 6]).unwrap();
        let wm = weights_from_rem(&r, 1e-9).unwrap();
        for &w in wm.weights.data() {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_follow_reciprocal_normalization() {
        let r = Raster::new(1, 3, vec![1.0, 2.0, 2.0]).unwrap();
        let wm = weights_from_rem(&r, 1e-9).unwrap();
        let expect = [0.5, 0.25, 0.25];
        for (w, e) in wm.weights.data().iter().zip(expect) {
            assert!((w - e).abs() < 1e-12, "{w} vs {e}");
        }
    }

    #[test]
    fn zero_error_pixel_is_floored_and_dominates() {
        let r = Raster::new(1, 3, vec![0.0, 1.0, 2.0]).unwrap();
        let floor = default_weight_floor(&r);
        assert_eq!(floor, 2.0 * WEIGHT_FLOOR_SCALE);
        let wm = weights_from_rem(&r, floor).unwrap();
        assert!(wm.weights.data().iter().all(|&w| w > 0.0 && w.is_finite()));
        assert!(wm.weights.get(0, 0) > 0.999);
    }

    #[test]
    fn weights_sum_to_one_and_are_anti_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(2..100);
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let r = Raster::new(1, n, data.clone()).unwrap();
            let wm = weights_from_rem(&r, default_weight_floor(&r)).unwrap();
            let sum: f64 = wm.weights.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "weights sum to {sum}");
            for i in 0..n {
                for j in 0..n {
                    let (ri, rj) = (data[i].max(wm.floor), data[j].max(wm.floor));
                    if ri < rj {
                        assert!(
                            wm.weights.data()[i] > wm.weights.data()[j],
                            "weight ordering violated"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nonpositive_floor_rejected() {
        let r = Raster::zeros(2, 2);
        assert!(weights_from_rem(&r, 0.0).is_err());
        assert!(weights_from_rem(&r, -1.0).is_err());
    }
}
