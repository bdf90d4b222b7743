use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input matrix is not symmetric (max asymmetry {0:.3e})")]
    AsymmetricInput(f64),
    #[error("vector of length {0} is not a triangular number")]
    BadLength(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is singular or numerically singular")]
    SingularMatrix,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("requested rank {requested} exceeds numerical rank")]
    RankDeficient { requested: usize },
    #[error("eigenvalue {index} is not simple (gap {gap:.3e})")]
    RepeatedEigenvalue { index: usize, gap: f64 },
    #[error("eigenvalue gap at rank {rank} is too small ({gap:.3e})")]
    EigGapTooSmall { rank: usize, gap: f64 },

    #[error("weights must be strictly positive (row {0})")]
    NonPositiveWeight(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("second moment matrix is singular (min/max eigenvalue ratio {0:.3e})")]
    SingularTheta(f64),
    #[error("sample mean vector is zero")]
    ZeroMeanVector,
    #[error("squared maximal Sharpe ratio is numerically zero")]
    ZeroSharpe,
    #[error("risk-free rate must be positive for the first-order SNR law")]
    NonPositiveRfr,
    #[error("bandwidth {bandwidth} must be smaller than the sample size {n_obs}")]
    BandwidthTooLarge { bandwidth: usize, n_obs: usize },
    #[error("correlation is undefined: zero variance at coordinate {0}")]
    DegenerateCorrelation(usize),
    #[error("operation requires the {0} layout")]
    WrongLayout(&'static str),

    #[error("Newton step lost positive definiteness after step halving")]
    LostPositiveDefiniteness,
    #[error("Newton Jacobian is singular")]
    SingularJacobian,
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("projected second moment is singular")]
    SingularProjection,
    #[error("hedge matrix is rank deficient")]
    RankDeficientHedge,
    #[error("volatility feature must be positive (row {row}, column {col})")]
    NonPositiveVolFeature { row: usize, col: usize },
    #[error("constraint weighting is singular")]
    SingularWeighting,
    #[error("C' Sigma_f^-1 C is singular")]
    SingularCquad,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("no usable rows in panel")]
    EmptyPanel,
    #[error("rolling volatility window ending at row {0} is zero")]
    ZeroVolatilityWindow(usize),
    #[error("regression design is rank deficient")]
    RankDeficientRegression,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidSpec(_) | WrongLayout(_) | NonPositiveRfr | BandwidthTooLarge { .. } => ErrorKind::Usage,
            NonPositiveWeight(_)
            | LengthMismatch(_)
            | NonFinite { .. }
            | NonPositiveVolFeature { .. }
            | ZeroVolatilityWindow(_)
            | Parse { .. }
            | EmptyPanel
            | Io(_)
            | Csv(_)
            | Json(_)
            | ShapeMismatch(_)
            | BadLength(_)
            | AsymmetricInput(_) => ErrorKind::Data,
            _ => ErrorKind::Numerical,
        }
    }
}
