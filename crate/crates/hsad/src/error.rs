//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage names, used for error attribution and process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Synth,
    Purify,
    Train,
    Reconstruct,
    Rem,
    Detect,
    Eval,
}

impl Stage {
    /// Distinct nonzero process exit code for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Load => 3,
            Stage::Synth => 4,
            Stage::Purify => 5,
            Stage::Train => 6,
            Stage::Reconstruct => 7,
            Stage::Rem => 8,
            Stage::Detect => 9,
            Stage::Eval => 10,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Synth => "synth",
            Stage::Purify => "purify",
            Stage::Train => "train",
            Stage::Reconstruct => "reconstruct",
            Stage::Rem => "rem",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} file {path}: {reason}")]
    Format {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("covariance not positive definite after regularization")]
    NotPositiveDefinite,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("empty training set for dimension {dim}")]
    EmptyTrainingSet { dim: u8 },

    #[error("layer {index}: {reason}")]
    Layer { index: usize, reason: String },

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("band count mismatch: model expects {model}, cube has {cube}")]
    BandMismatch { model: usize, cube: usize },

    #[error("annulus around pixel ({y}, {x}) has only {count} samples (need >= 2)")]
    AnnulusTooSmall { y: usize, x: usize, count: usize },

    #[error("reference map contains a single class")]
    SingleClassReference,

    #[error("anomalies cover {got} pixels, more than 2% of the scene ({budget})")]
    AnomalyBudget { got: usize, budget: usize },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Exit code for CLI reporting: stage-specific when attributed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { stage, .. } => stage.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
