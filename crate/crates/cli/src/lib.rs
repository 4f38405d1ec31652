//! Library behind the `hrt` binary: configuration and subcommands.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use config::{CsvSource, DataSource, RunConfig};

/// Process exit code for configuration and argument problems.
pub const EXIT_VALIDATION: i32 = 2;
/// Process exit code for failures after validation passed.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] hrt_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io { context: context.to_string(), source }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.into())
            }
        }
    )*};
}

runtime_from!(
    hrt_core::marketdata::MarketDataError,
    hrt_core::backtest::BacktestError,
    hrt_core::trainer::TrainerError,
    hrt_core::FormatError
);
