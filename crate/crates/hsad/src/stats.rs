//! Spectral mean/covariance estimation and Mahalanobis scoring.
//!
//! Both the global background model and the per-window local models reduce
//! to the same weighted moments: a mean `m = sum_i w_i f_i` and covariance
//! `C = sum_i w_i (f_i - m)(f_i - m)^T` with weights summing to 1, followed
//! by quadratic-form evaluation `(f - m)^T (C + ridge*I)^{-1} (f - m)`
//! through a Cholesky factorization. The covariance inverse is never formed
//! explicitly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cube::HsiCube;
use crate::error::{Error, Result};

/// Diagonal loading policy for covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// A fixed value added to the diagonal.
    Absolute(f64),
    /// `factor * trace(C) / L` added to the diagonal; scale-aware.
    RelativeTrace(f64),
}

impl Regularizer {
    pub fn ridge_for(&self, cov: &DMatrix<f64>) -> f64 {
        match *self {
            Regularizer::Absolute(v) => v,
            Regularizer::RelativeTrace(factor) => factor * cov.trace() / cov.nrows() as f64,
        }
    }
}

/// A fitted background model: mean, covariance, and the Cholesky factor of
/// the ridged covariance.
#[derive(Clone)]
pub struct SpectralStats {
    pub mean: DVector<f64>,
    /// Covariance before diagonal loading.
    pub cov: DMatrix<f64>,
    /// The value actually added to the diagonal before factorization.
    pub ridge: f64,
    chol: Cholesky<f64, Dyn>,
}

impl std::fmt::Debug for SpectralStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralStats")
            .field("bands", &self.mean.len())
            .field("ridge", &self.ridge)
            .finish()
    }
}

impl SpectralStats {
    /// Fit from explicit moments. Fails when `cov + ridge*I` is not positive
    /// definite.
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>, reg: Regularizer) -> Result<Self> {
        let ridge = reg.ridge_for(&cov);
        let mut ridged = cov.clone();
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += ridge;
        }
        let chol = Cholesky::new(ridged).ok_or(Error::NotPositiveDefinite)?;
        Ok(SpectralStats {
            mean,
            cov,
            ridge,
            chol,
        })
    }

    /// Uniform-weight fit over all pixels of a cube. Needs at least 2 pixels.
    pub fn global(cube: &HsiCube, reg: Regularizer) -> Result<Self> {
        let n = cube.num_pixels();
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        let w = 1.0 / n as f64;
        Self::weighted_over(cube, (0..n).map(|i| (i, w)), reg)
    }

    /// Weighted fit over all pixels; `weights[i]` must sum to 1.
    pub fn weighted(cube: &HsiCube, weights: &[f64], reg: Regularizer) -> Result<Self> {
        if weights.len() != cube.num_pixels() {
            return Err(Error::Shape(format!(
                "{} weights for {} pixels",
                weights.len(),
                cube.num_pixels()
            )));
        }
        Self::weighted_over(cube, weights.iter().copied().enumerate(), reg)
    }

    /// Weighted fit over an explicit pixel subset (local windows).
    pub fn weighted_subset(
        cube: &HsiCube,
        pixels: &[(usize, f64)],
        reg: Regularizer,
    ) -> Result<Self> {
        Self::weighted_over(cube, pixels.iter().copied(), reg)
    }

    fn weighted_over(
        cube: &HsiCube,
        pixels: impl Iterator<Item = (usize, f64)> + Clone,
        reg: Regularizer,
    ) -> Result<Self> {
        let l = cube.bands();
        let mut mean = DVector::zeros(l);
        let mut buf = vec![0.0; l];
        for (i, w) in pixels.clone() {
            cube.copy_spectrum(i, &mut buf);
            for (m, &v) in mean.iter_mut().zip(&buf) {
                *m += w * v;
            }
        }
        let mut cov = DMatrix::zeros(l, l);
        for (i, w) in pixels {
            cube.copy_spectrum(i, &mut buf);
            for (c, m) in buf.iter_mut().zip(mean.iter()) {
                *c -= m;
            }
            // Weighted rank-1 update on the upper triangle.
            for a in 0..l {
                let wa = w * buf[a];
                for b in a..l {
                    cov[(a, b)] += wa * buf[b];
                }
            }
        }
        for a in 0..l {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        Self::from_moments(mean, cov, reg)
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// Mahalanobis quadratic form of one spectrum against this model,
    /// clamped at zero against rounding.
    pub fn mahalanobis(&self, spectrum: &[f64]) -> f64 {
        let mut centered = DVector::from_column_slice(spectrum);
        centered -= &self.mean;
        let solved = self.chol.solve(&centered);
        centered.dot(&solved).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_two_opposite_pixels() {
        // Pixels (0,0) and (2,2): mean (1,1), covariance [[1,1],[1,1]].
        let cube = HsiCube::new(1, 2, 2, vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        let stats = SpectralStats::global(&cube, Regularizer::Absolute(1e-9)).unwrap();
        assert_eq!(stats.mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(stats.cov[(0, 0)], 1.0);
        assert_eq!(stats.cov[(0, 1)], 1.0);
        assert_eq!(stats.cov[(1, 0)], 1.0);
        assert_eq!(stats.cov[(1, 1)], 1.0);
    }

    #[test]
    fn scalar_variance() {
        let cube = HsiCube::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let stats = SpectralStats::global(&cube, Regularizer::Absolute(0.0)).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.cov[(0, 0)], 1.0);
    }

    #[test]
    fn constant_image_covariance_is_ridge_only() {
        let cube = HsiCube::new(2, 2, 3, vec![5.0; 12]).unwrap();
        let stats = SpectralStats::global(&cube, Regularizer::Absolute(1e-4)).unwrap();
        assert!(stats.cov.iter().all(|&v| v == 0.0));
        assert_eq!(stats.ridge, 1e-4);
        // Mahalanobis against the ridged identity: ||d||^2 / ridge.
        let score = stats.mahalanobis(&[5.0, 5.0, 6.0]);
        assert!((score - 1.0 / 1e-4).abs() < 1e-6);
    }

    #[test]
    fn zero_covariance_without_ridge_fails() {
        let cube = HsiCube::new(2, 2, 3, vec![5.0; 12]).unwrap();
        let err = SpectralStats::global(&cube, Regularizer::Absolute(0.0)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite));
    }

    #[test]
    fn single_pixel_rejected() {
        let cube = HsiCube::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let err = SpectralStats::global(&cube, Regularizer::Absolute(1.0)).unwrap_err();
        assert!(matches!(err, Error::TooFewSamples { .. }));
    }

    #[test]
    fn mahalanobis_diagonal_closed_form() {
        // C = diag(4, 1), f - m = (2, 1): 2^2/4 + 1^2/1 = 2.
        let mean = DVector::from_column_slice(&[0.0, 0.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let stats = SpectralStats::from_moments(mean, cov, Regularizer::Absolute(0.0)).unwrap();
        assert!((stats.mahalanobis(&[2.0, 1.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_identity_is_squared_euclidean() {
        let mean = DVector::from_column_slice(&[1.0, -1.0, 0.5]);
        let cov = DMatrix::identity(3, 3);
        let stats =
            SpectralStats::from_moments(mean.clone(), cov, Regularizer::Absolute(0.0)).unwrap();
        let f = [2.0, 1.0, 0.0];
        let expect: f64 = f
            .iter()
            .zip(mean.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!((stats.mahalanobis(&f) - expect).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_of_mean_is_zero() {
        let cube = HsiCube::new(1, 3, 2, vec![0.0, 1.0, 5.0, 2.0, 3.0, 4.0]).unwrap();
        let stats = SpectralStats::global(&cube, Regularizer::RelativeTrace(1e-6)).unwrap();
        let mean: Vec<f64> = stats.mean.iter().copied().collect();
        assert!(stats.mahalanobis(&mean).abs() < 1e-12);
    }

    #[test]
    fn relative_trace_ridge_scales_with_data() {
        let cube = HsiCube::new(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let stats = SpectralStats::global(&cube, Regularizer::RelativeTrace(0.5)).unwrap();
        // cov = [1], trace/L = 1, ridge = 0.5.
        assert_eq!(stats.ridge, 0.5);
    }
}
