//! Command-line workflows and the HTTP service for the catrag engine.

pub mod commands;
pub mod config;
pub mod server;

use config::ConfigError;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const INPUT: i32 = 4;
    pub const PROVIDER: i32 = 5;
    pub const ARTIFACT: i32 = 6;
    pub const EVAL_FAILURES: i32 = 7;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] catrag_core::Error),
    #[error("split {0} is invalid: it must lie strictly between 0 and 1")]
    SplitInvalid(f64),
    #[error("{0} evaluation items failed")]
    EvalFailures(usize),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use catrag_core::Error as E;
        match self {
            CliError::Config(_) | CliError::SplitInvalid(_) => exit::CONFIG,
            CliError::EvalFailures(_) => exit::EVAL_FAILURES,
            CliError::Io { .. } => exit::INPUT,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::InvalidChunking { .. } => exit::CONFIG,
                E::Io { .. }
                | E::EmptyCorpus
                | E::DuplicateDocument(_)
                | E::EmptyDocument(_)
                | E::MalformedRecord { .. }
                | E::InvalidDictionary(_)
                | E::EmptyTraining
                | E::DegenerateLabels
                | E::UnknownLabel(_)
                | E::EmptyEval
                | E::EmptyQuery
                | E::EmptyText => exit::INPUT,
                E::ProviderUnavailable(_)
                | E::ProviderContract(_)
                | E::GenerationUnavailable { .. }
                | E::RelationParse(_) => exit::PROVIDER,
                E::Persistence { .. } | E::GraphIntegrity { .. } | E::ModelVersion(_) | E::DimMismatch { .. } => {
                    exit::ARTIFACT
                }
                _ => exit::OTHER,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
