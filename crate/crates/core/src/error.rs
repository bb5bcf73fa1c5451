use std::path::PathBuf;

/// Errors produced by loaders, distances and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing required dataset file: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset file {path} (line {line}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("feature recipe error: {0}")]
    Recipe(String),
    #[error("one-hot encoding error: label {label} outside domain [0, {domain_size})")]
    OneHotOutOfRange { label: usize, domain_size: usize },
    #[error("stratified split error: {0}")]
    Split(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("support dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("exact W2 oracle limited to n*n' <= {cap}, got {got}")]
    OracleTooLarge { cap: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("evaluation protocol error: {0}")]
    Protocol(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
