//! Core raster and cube types shared by every pipeline stage.
//!
//! An [`HsiCube`] stores a hyperspectral image in band-sequential order:
//! all pixels of band 0 (row-major), then all pixels of band 1, and so on.
//! Pixels are indexed lexicographically, left-to-right and top-to-bottom,
//! so pixel `i` sits at row `i / width`, column `i % width`.
//!
//! A [`Raster`] is a single-band, real-valued image used for score maps,
//! reconstruction error maps, and binary masks (masks hold only 0 and 1).

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// HsiCube
// ---------------------------------------------------------------------------

/// A hyperspectral cube: `height x width` pixels with `bands` spectral bands.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    /// Band-sequential data: `data[b * num_pixels + y * width + x]`.
    data: Vec<f64>,
}

impl HsiCube {
    /// Build a cube from band-sequential data, validating shape and finiteness.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expect = height * width * bands;
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {expect} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = first_non_finite(&data) {
            return Err(Error::NonFinite {
                what: "cube data",
                index,
            });
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Number of pixels `N = height * width`.
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Raw band-sequential data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All values of one band, row-major.
    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.num_pixels();
        &self.data[b * n..(b + 1) * n]
    }

    /// Value of band `b` at pixel `(y, x)`.
    pub fn value(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[b * self.num_pixels() + y * self.width + x]
    }

    /// Copy the spectral vector of pixel `i` into `out` (`out.len() == bands`).
    pub fn copy_spectrum(&self, i: usize, out: &mut [f64]) {
        let n = self.num_pixels();
        for (b, v) in out.iter_mut().enumerate() {
            *v = self.data[b * n + i];
        }
    }

    /// The spectral vector of pixel `i` as a fresh `Vec`.
    pub fn spectrum(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.bands];
        self.copy_spectrum(i, &mut out);
        out
    }

    /// Global minimum and maximum over all bands.
    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Affinely map the cube so the global minimum lands exactly on -1 and
    /// the global maximum exactly on +1. A constant cube maps to all zeros.
    ///
    /// Computed as `t = (v - min) / (max - min)` then `2t - 1`: `t` stays in
    /// `[0, 1]` with exact endpoints, so the result stays in `[-1, 1]`, and
    /// renormalizing moves values by at most one unit in the last place.
    pub fn normalized(&self) -> HsiCube {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let data = if span == 0.0 {
            vec![0.0; self.data.len()]
        } else {
            self.data
                .iter()
                .map(|&v| 2.0 * ((v - lo) / span) - 1.0)
                .collect()
        };
        HsiCube {
            height: self.height,
            width: self.width,
            bands: self.bands,
            data,
        }
    }
}

// ---------------------------------------------------------------------------
// Raster
// ---------------------------------------------------------------------------

/// A single-band image of real values (scores, error maps) or {0, 1} masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Raster {
    /// Build a raster from row-major data, validating shape and finiteness.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "raster dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(index) = first_non_finite(&data) {
            return Err(Error::NonFinite {
                what: "raster data",
                index,
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// An all-zero raster.
    pub fn zeros(height: usize, width: usize) -> Raster {
        Raster {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// True when both rasters have the same dimensions.
    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

fn first_non_finite(data: &[f64]) -> Option<usize> {
    data.iter().position(|v| !v.is_finite())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_rejects_size_mismatch() {
        let err = HsiCube::new(10, 10, 5, vec![0.0; 499]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
    }

    #[test]
    fn cube_rejects_non_finite() {
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        let err = HsiCube::new(2, 2, 2, data).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 3),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn spectrum_follows_band_sequential_order() {
        // 2x2 pixels, 2 bands: band 0 = [0,1,2,3], band 1 = [10,11,12,13].
        let data = vec![0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0];
        let cube = HsiCube::new(2, 2, 2, data).unwrap();
        assert_eq!(cube.spectrum(0), vec![0.0, 10.0]);
        assert_eq!(cube.spectrum(3), vec![3.0, 13.0]);
        assert_eq!(cube.value(1, 1, 0), 12.0);
    }

    #[test]
    fn normalize_maps_endpoints() {
        let cube = HsiCube::new(1, 3, 1, vec![0.0, 50.0, 100.0]).unwrap();
        let norm = cube.normalized();
        assert_eq!(norm.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_leaves_exact_range_unchanged() {
        let cube = HsiCube::new(1, 4, 1, vec![-1.0, -0.25, 0.5, 1.0]).unwrap();
        let norm = cube.normalized();
        assert_eq!(norm.data(), cube.data());
    }

    #[test]
    fn normalize_constant_cube_to_zero() {
        let cube = HsiCube::new(2, 2, 1, vec![7.0; 4]).unwrap();
        let norm = cube.normalized();
        assert!(norm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_is_idempotent_within_one_ulp() {
        let data: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7134).sin() * 42.5).collect();
        let cube = HsiCube::new(3, 4, 5, data).unwrap();
        let once = cube.normalized();
        let twice = once.normalized();
        // One ulp at the output scale (values live in [-1, 1]).
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 2.0f64.powi(-52), "{a} vs {b}");
        }
        let (lo, hi) = once.min_max();
        assert_eq!((lo, hi), (-1.0, 1.0));
    }

    #[test]
    fn normalize_stays_in_range() {
        let data: Vec<f64> = (0..100).map(|i| (i as f64).exp().sin() * 1e6).collect();
        let cube = HsiCube::new(10, 10, 1, data).unwrap();
        let norm = cube.normalized();
        assert!(norm.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn normalize_preserves_per_band_extrema_locations() {
        let data: Vec<f64> = (0..48).map(|i| ((i * 37 + 11) % 29) as f64 * 3.7).collect();
        let cube = HsiCube::new(4, 4, 3, data).unwrap();
        let norm = cube.normalized();
        for b in 0..3 {
            let argmax = |xs: &[f64]| {
                xs.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            let argmin = |xs: &[f64]| {
                xs.iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(cube.band(b)), argmax(norm.band(b)));
            assert_eq!(argmin(cube.band(b)), argmin(norm.band(b)));
        }
    }

    #[test]
    fn raster_binary_check() {
        let mut r = Raster::zeros(2, 2);
        assert!(r.is_binary());
        r.set(0, 1, 1.0);
        assert!(r.is_binary());
        r.set(1, 1, 0.5);
        assert!(!r.is_binary());
    }
}
