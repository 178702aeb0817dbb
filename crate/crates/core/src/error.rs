use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. Each variant maps to a stable,
/// machine-readable category (see [`Error::category`]) that the CLI prints
/// and turns into an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller passed arrays whose shapes disagree with the parameters.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("training error at batch index {batch}: {message}")]
    Training { batch: usize, message: String },

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an I/O failure with the path it happened on.
    pub(crate) fn io_at(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display())))
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Schema(_) => "schema",
            Error::Data(_) => "data",
            Error::Coverage(_) => "coverage",
            Error::Imputation(_) => "imputation",
            Error::Training { .. } => "training",
            Error::Compatibility(_) => "compatibility",
            Error::UnsupportedVersion { .. } => "version",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Contract(_) => 3,
            Error::Schema(_) | Error::Data(_) | Error::Coverage(_) => 4,
            Error::Imputation(_) => 5,
            Error::Training { .. } => 6,
            Error::Compatibility(_) => 7,
            Error::UnsupportedVersion { .. } | Error::Parse { .. } => 8,
            Error::Io(_) => 9,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Data(format!("{other:?}")),
        }
    }
}

pub(crate) fn ensure_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{what}: expected length {expected}, got {got}"
        )))
    }
}
