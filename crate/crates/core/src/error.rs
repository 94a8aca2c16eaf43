use thiserror::Error;

/// Errors produced by the kernels, the model and the Hessian builders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("{what} would need {requested} scalars, above the element cap of {cap}")]
    SizeLimit {
        what: String,
        requested: u128,
        cap: usize,
    },

    #[error("block partition error: {0}")]
    Partition(String),

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("attention row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },

    #[error("operation requires {expected} parameterization")]
    Parameterization { expected: &'static str },

    #[error("operation requires {expected} activation")]
    Activation { expected: &'static str },

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("oracle over {requested} parameters exceeds the cap of {cap}")]
    OracleCap { requested: usize, cap: usize },

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("decomposition mismatch: relative error {0:e}")]
    Decomposition(f64),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    op: &'static str,
    expected: impl Into<String>,
    found: impl Into<String>,
) -> Error {
    Error::Shape {
        op,
        expected: expected.into(),
        found: found.into(),
    }
}
