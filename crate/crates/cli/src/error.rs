use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: row {row}: {msg}")]
    Schema { file: String, row: u64, msg: String },

    #[error("{file}: {msg}")]
    Header { file: String, msg: String },

    #[error(transparent)]
    Core(#[from] jointspec::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Stable, machine-parsable class printed as `error[class]`.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Schema { .. } | CliError::Header { .. } => "schema",
            CliError::Core(e) => core_class(e),
        }
    }
}

fn core_class(e: &jointspec::Error) -> &'static str {
    use jointspec::Error as E;
    match e {
        E::InvalidInput(_) | E::Dimension { .. } => "input",
        E::NotPositiveDefinite(_) | E::Singular(_) | E::VarianceOverflow(_) => "numeric",
        E::Sampler { .. } => "sampler",
        E::Fold { source, .. } => match core_class(source) {
            "sampler" => "sampler",
            _ => "cv",
        },
        E::Io(_) => "io",
        E::Parse(_) => "schema",
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
