use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol `{0}` is not in the alphabet")]
    UnknownSymbol(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tree parse error at token {position}: {message}")]
    TreeParse { position: usize, message: String },

    #[error("input of length {len} exceeds the length budget {budget}")]
    BudgetExceeded { len: usize, budget: usize },

    #[error("tree of depth {depth} exceeds the depth budget {budget}")]
    DepthExceeded { depth: usize, budget: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("polynomial has a term of degree {0}; only degree <= 2 can be realized")]
    DegreeTooHigh(usize),

    #[error("saturation search did not converge: {0}")]
    NonConvergence(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
