//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A query falls outside the covered range (time or space).
    #[error("range error: {0}")]
    Range(String),

    /// Malformed or inconsistent arguments.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A precondition on the inputs does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A reference quantity is zero where a nonzero one is required.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A non-finite value appeared during evaluation.
    #[error("non-finite value at batch index {index}: {what}")]
    Numeric { index: usize, what: String },

    /// The placement instance admits no feasible selection.
    #[error(
        "infeasible placement: n_min = {n_min} but at most {independence_bound} \
         candidates can be mutually at distance >= {d}"
    )]
    Infeasible {
        n_min: usize,
        independence_bound: usize,
        d: f64,
    },

    /// An instance exceeds a solver's enumeration guard.
    #[error("instance too large: {0}")]
    Size(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// File contents that parse but violate the format.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
