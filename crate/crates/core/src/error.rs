use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed audio file: {0}")]
    Format(String),

    #[error("unsupported audio encoding: {0}")]
    Unsupported(String),

    #[error("audio file contains no samples: {0}")]
    EmptyAudio(String),

    #[error("manifest schema error: {0}")]
    Schema(String),

    #[error("invalid value in row {row}: {message}")]
    Value { row: usize, message: String },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("recording too short: window needs {needed} samples, recording has {available}")]
    TooShort { needed: usize, available: usize },

    #[error("feature `{name}` failed: {message}")]
    Feature { name: &'static str, message: String },

    #[error("no rows for variant rpm={rpm} multiplier={multiplier}")]
    EmptyVariant { rpm: u32, multiplier: u32 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("cannot stratify into {k} folds: class `{class}` has {count} rows")]
    Stratification { class: String, k: usize, count: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("leave-one-out split {split}: {source}")]
    LooSplit {
        split: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("hyperparameter search failed, every configuration errored:\n{}", .0.join("\n"))]
    Search(Vec<String>),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("incomplete evaluation grid, missing cells: {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),

    #[error("model compatibility error: {0}")]
    Compatibility(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
