use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("point cloud has {found} points, at least {required} required")]
    TooFewPoints { found: usize, required: usize },

    #[error("degenerate point cloud: bounding box has zero diameter")]
    DegenerateCloud,

    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("non-finite gradient at epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize },

    #[error("rejection sampling stalled: acceptance rate {rate:.3e} after {trials} trials")]
    RejectionStall { rate: f64, trials: u64 },

    #[error("no outside seed: every boundary cell of the orientation grid is interfacial")]
    NoOutsideSeed,

    #[error("degenerate normal: blended heat gradient vanishes")]
    DegenerateNormal,

    #[error("empty level set: field has no sign change on the sampling grid")]
    EmptyLevelSet,

    #[error("sign of distance is ambiguous after {0} jittered ray retries")]
    SignAmbiguous(usize),

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:.3e})")]
    CgNoConvergence { iterations: usize, residual: f64 },

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt checkpoint blob: {0}")]
    CorruptBlob(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
