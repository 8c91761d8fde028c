use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module. The display form is prefixed with the module that
/// raised it so the CLI can print a categorized error line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("datamodel: {0}")]
    Data(String),

    #[error("datamodel: {path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("synthgen: {0}")]
    Synth(String),

    #[error("backbone: {0}")]
    Backbone(String),

    #[error("backbone: non-finite activation in {0}")]
    Numeric(String),

    #[error("objectives: {0}")]
    Objective(String),

    #[error("discovery: {0}")]
    Discovery(String),

    #[error("training: {0}")]
    Training(String),

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("saliency: {0}")]
    Saliency(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
