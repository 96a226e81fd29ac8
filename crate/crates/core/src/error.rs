use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series truncations do not match")]
    TruncationMismatch,

    #[error("index {0} lies outside the truncation")]
    OutsideTruncation(String),

    #[error("functional jet does not cover {0}")]
    JetTooShort(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("homogeneity {0} is an integer under the perturbed alpha")]
    IntegerHomogeneity(f64),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("tau {tau:e} is below the grid-resolved floor {floor:e}")]
    UnresolvedTau { tau: f64, floor: f64 },

    #[error("population condition violated: pi^({n}) is nonzero at {beta}")]
    Population { n: String, beta: String },

    #[error("polynomial fit residual {residual:.3e} above threshold {threshold:.3e} at {beta}")]
    FitResidual {
        beta: String,
        residual: f64,
        threshold: f64,
    },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("nonpositive estimate in scaling series {0}")]
    NonPositiveEstimate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
