use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the data pipeline. Parsing is total: every input file
/// either yields a valid structure or one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("truncated file {path}: expected {expected} depth values, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("joint file {path} declares {declared} frames but contains {found}")]
    CountMismatch {
        path: PathBuf,
        declared: usize,
        found: usize,
    },
    #[error("parse error in {path}, line {line}: bad token {token:?}")]
    ParseError {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("frame contains no positive depth values")]
    EmptyFrame,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("crop target {target} exceeds grid size {size:?}")]
    TargetTooLarge { target: usize, size: [usize; 3] },
    #[error("grid dump is malformed: {0}")]
    MalformedGridDump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
