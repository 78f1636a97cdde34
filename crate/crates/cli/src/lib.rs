//! Config-driven studies over `sieve-core`, emitting JSON records and CSV
//! tables.

pub mod config;
pub mod expr;
pub mod record;
pub mod studies;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sieve_core::SieveError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("cannot parse expression `{text}`: {reason}")]
    Expr { text: String, reason: String },

    #[error("bad configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
