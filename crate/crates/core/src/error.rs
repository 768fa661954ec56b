use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: unknown symbol(s) {}", .names.join(", "))]
    UnknownSymbols { path: String, names: Vec<String> },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("metric not symmetric at ({row},{col})")]
    NotSymmetric { row: String, col: String },
    #[error("singular metric at {point}")]
    SingularMetric { point: String },
    #[error("{op} requires dimension {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: usize,
    },
    #[error("coordinate name `{0}` already in use")]
    NameCollision(String),
    #[error("potential changes sign on the domain near q={at}")]
    SignChange { at: f64 },
    #[error("sampling exhausted after {rejected} rejections ({accepted} accepted); tightest guard: {tightest}")]
    SamplingExhausted {
        accepted: usize,
        rejected: usize,
        tightest: String,
    },
    #[error(
        "constraint surface empty along this direction: -2V/g(d,d) = {ratio}; V and g(d,d) must have opposite signs"
    )]
    EmptyConstraintSurface { ratio: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unknown catalog entry `{0}`")]
    UnknownEntry(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn describe_point(coords: &[String], point: &[f64]) -> String {
    let parts: Vec<String> = coords.iter().zip(point).map(|(c, x)| format!("{c}={x}")).collect();
    format!("({})", parts.join(", "))
}
