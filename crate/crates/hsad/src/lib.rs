//! Unsupervised pixel-wise anomaly detection for hyperspectral images.
//!
//! The pipeline has three steps. Background purification scores every pixel
//! with a Mahalanobis distance against global scene statistics and keeps the
//! high-confidence background as training data. Reconstruction trains an
//! autoencoding adversarial model on that background (spectral, spatial, or
//! joint spectral-spatial) and synthesizes the whole scene from it, giving a
//! per-pixel reconstruction error map. Detection turns the smoothed error
//! map into pixel weights for weighted RX detectors (global or dual-window
//! local) and evaluates score maps with ROC/AUC.
//!
//! See the guide in `book/` for concept chapters, file formats, and the CLI.

pub mod aean;
pub mod cube;
pub mod detect;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod purify;
pub mod rem;
pub mod stats;
pub mod synth;

pub use cube::{HsiCube, Raster};
pub use error::{Error, Result, Stage};
