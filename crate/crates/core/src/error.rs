use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid label {value} at row {row}: logistic responses must be -1 or +1")]
    InvalidLabel { row: usize, value: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset must have at least one row and one column")]
    EmptyDataset,

    #[error("the l1 regularizer has no gradient or Hessian; use the l1 solver's subgradient checks")]
    NonDifferentiableRegularizer,

    #[error("Hessian is numerically singular (smallest pivot {pivot:e})")]
    SingularHessian { pivot: f64 },

    #[error("restricted Hessian is numerically singular (smallest pivot {pivot:e})")]
    SingularRestrictedHessian { pivot: f64 },

    #[error("Sherman-Morrison denominator {denominator:e} for row {row} signals a leverage-one point")]
    SingularDowndate { row: usize, denominator: f64 },

    #[error("support size {support} must be below the number of rows {rows}")]
    SupportTooLarge { support: usize, rows: usize },

    #[error("approximate LOO set covers {present} of {rows} rows")]
    IncompleteLooSet { present: usize, rows: usize },

    #[error("percent error is undefined when LOO is zero")]
    DivisionByZero,

    #[error("LiSSA iterate norm {norm:e} exceeded the divergence bound; the scale is too small")]
    LissaDiverged { norm: f64 },

    #[error("M_J = {mj} is not below alpha = {alpha}; the lambda threshold is undefined")]
    AlphaExceeded { mj: f64, alpha: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
