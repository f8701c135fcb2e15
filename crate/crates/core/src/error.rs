use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants are grouped loosely by the component that raises them; the CLI
/// maps them onto process exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("lookup out of range: {kind} id {id} >= vocab {vocab}")]
    Lookup { kind: &'static str, id: usize, vocab: usize },

    #[error("invalid tap: {0}")]
    Tap(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("clock moved backwards: {now} < last update {last}")]
    Clock { now: f64, last: f64 },

    #[error("updates not sorted by timestamp at position {0}")]
    Order(usize),

    #[error("store is frozen ({0}); write rejected")]
    Frozen(String),

    #[error("snapshot {0} not found")]
    NotFound(u64),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("missing prerequisite: {}", .0.display())]
    MissingPrerequisite(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for CLI reporting: 2 config, 3 artifact integrity,
    /// 4 missing prerequisite, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Integrity(_) => 3,
            Error::MissingPrerequisite(_) => 4,
            _ => 1,
        }
    }
}
