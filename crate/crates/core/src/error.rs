use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error("frame average collapsed to a near-zero vector at point {point}")]
    DegenerateAverage { point: usize },
    #[error("all candidates for point {point} cancel out")]
    DegenerateAggregation { point: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("loss node must be a scalar, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("shape {0} has no ground-truth normals")]
    MissingGroundTruth(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: zero-length normal")]
    ZeroNormal { path: PathBuf, line: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter file: {0}")]
    BadParams(String),
    #[error("unit vector violated: |dot| = {0}")]
    NotUnit(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn check_len(left: usize, right: usize) -> Result<()> {
        if left != right {
            return Err(Error::LengthMismatch { left, right });
        }
        Ok(())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
