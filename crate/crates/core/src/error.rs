use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("offset {value} is not on the scale-{scale} lattice")]
    OffLattice { scale: i32, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("point is not covered by any chart")]
    Uncovered,

    #[error("coordinates lie outside the chart image")]
    OutsideChartImage,

    #[error("chart inversion failed: {0}")]
    InversionFailed(String),

    #[error("sampling too sparse: {0}")]
    SparseSampling(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("expansion references unknown chart {0}")]
    UnknownChart(usize),

    #[error("input box too large for bias {bias}: pre-activation magnitude reaches {required}")]
    BiasTooSmall { bias: f64, required: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
