use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid norm exponent {0} (must be >= 1 or \"inf\")")]
    InvalidExponent(f64),

    #[error("space dimension must be at least 1")]
    EmptySpace,

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("basis columns are linearly dependent (smallest/largest singular value {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("zero vector has no norming functional")]
    ZeroVector,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("k = {k} exceeds dimension {dim}")]
    OrderTooLarge { k: usize, dim: usize },

    #[error("euclidean-exact mode requires p = 2")]
    NotEuclidean,

    #[error("net mode is limited to dimension <= {max} (got {dim})")]
    NetUnavailable { dim: usize, max: usize },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("invalid base process: {0}")]
    InvalidBase(String),

    #[error("window [{start}, {end}) lies outside the trajectory [{lo}, {hi})")]
    OutOfRange {
        start: i64,
        end: i64,
        lo: i64,
        hi: i64,
    },

    #[error("trajectory is one-sided; a backward extension is required")]
    OneSided,

    #[error("generator matrix {symbol} does not respect the declared head/tail split")]
    SplitViolated { symbol: usize },

    #[error("consistent sequence degenerates at order {k} (F_k vanishes)")]
    Degenerate { k: usize },

    #[error("level {level} does not exist (the cocycle has r = {r} exceptional exponents)")]
    NoSuchLevel { level: usize, r: usize },

    #[error("equivariance residual {residual:.3e} exceeds {threshold:.3e}; restriction undefined")]
    ResidualTooLarge { residual: f64, threshold: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
