use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate schedule at t={t}: alpha_bar={alpha_bar:e} is below the numeric floor")]
    DegenerateSchedule { t: usize, alpha_bar: f64 },

    #[error("schedule invariant violated: {0}")]
    Schedule(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path}:{line}:{column}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("fit diverged at iteration {iteration} (loss={loss}); state: {dump}")]
    Divergence {
        iteration: usize,
        loss: f64,
        dump: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {msg}")]
    ImageFile { path: PathBuf, msg: String },
}

impl Error {
    /// Stable, machine-parseable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Param { .. } => "param",
            Error::Shape(_) => "shape",
            Error::DegenerateSchedule { .. } | Error::Schedule(_) => "schedule",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } | Error::ImageFile { .. } => "io",
        }
    }

    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Param {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
