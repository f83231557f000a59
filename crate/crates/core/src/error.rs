use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dangling item ids: {}", .0.join(", "))]
    DanglingIds(Vec<String>),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("version error: {0}")]
    Version(String),

    #[error("missing item: {0}")]
    MissingItem(String),

    #[error("cannot sample negatives of type `{0}`")]
    CannotSample(String),

    #[error("no mask for type pair ({0}, {1})")]
    NoMask(String, String),

    #[error("probe failure: loss is non-finite when perturbing `{0}`")]
    ProbeFailure(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// Short stable identifier used in machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Contract(_) => "contract",
            Error::DanglingIds(_) => "dangling-id",
            Error::Format { .. } => "format",
            Error::Version(_) => "version",
            Error::MissingItem(_) => "missing-item",
            Error::CannotSample(_) => "cannot-sample",
            Error::NoMask(..) => "no-mask",
            Error::ProbeFailure(_) => "probe-failure",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
