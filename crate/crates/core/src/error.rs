use thiserror::Error;

use crate::compfn::FnClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("class mismatch: cannot combine {left:?} with {right:?} in {op}")]
    ClassMismatch {
        op: &'static str,
        left: FnClass,
        right: FnClass,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported function form: {0}")]
    UnsupportedForm(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown symbol `{symbol}` at line {line}, column {column}")]
    UnknownSymbol {
        symbol: String,
        line: usize,
        column: usize,
    },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("horizon too short: {0}")]
    HorizonTooShort(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("system is not observable at the base rate (rank {rank} < {n})")]
    BaseRateUnobservable { rank: usize, n: usize },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
