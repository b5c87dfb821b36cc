use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label ({nh}, {nv}) is outside cutoff {cutoff}")]
    LabelOutOfRange { nh: usize, nv: usize, cutoff: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transform is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("projection onto the {0}-photon sector is empty")]
    EmptyProjection(usize),

    #[error("click pattern {0} is incompatible with the detection tree")]
    IncompatiblePattern(String),

    #[error("fit did not converge: {reason} (residual {residual:.3e})")]
    FitFailed { reason: String, residual: f64 },

    #[error("measurement map is rank deficient: rank {rank} of {needed} required")]
    RankDeficient { rank: usize, needed: usize },

    #[error("no counts recorded")]
    NoCounts,

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
