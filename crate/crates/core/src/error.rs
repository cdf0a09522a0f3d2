use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaceError {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("assignment arm z={arm} has no records")]
    EmptyArm { arm: u8 },

    #[error("truncation region has negligible mass (standardized bound {standardized_bound})")]
    DegenerateTruncation { standardized_bound: f64 },

    #[error("posterior precision matrix is numerically singular (condition number {condition:e})")]
    SingularPosterior { condition: f64 },

    #[error("PSRF needs at least 2 chains of equal length >= 10 (got {chains} chains, min length {min_len})")]
    InsufficientDraws { chains: usize, min_len: usize },

    #[error("observed pattern z=d={arm} has no records")]
    EmptyPattern { arm: u8 },

    #[error("every saved iteration had zero compliers; CACE is undefined")]
    AllUndefined,

    #[error("no draws available for summary")]
    NoDraws,

    #[error("target correlation {target} is unattainable: {reason}")]
    Calibration { target: f64, reason: String },

    #[error("enumeration too large: {mixtures} mixture patients (limit {limit})")]
    TooLarge { mixtures: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("chain {chain} aborted at iteration {iteration} during {block}: {source}")]
    ChainAborted {
        chain: usize,
        iteration: usize,
        block: &'static str,
        #[source]
        source: Box<CaceError>,
    },
}

pub type Result<T, E = CaceError> = std::result::Result<T, E>;
