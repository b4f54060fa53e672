//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the demonstration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or inconsistent configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    /// Numeric failure (singular matrix, divergence, non-finite value).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Environment misuse or invalid environment definition.
    #[error("environment error: {0}")]
    Env(String),

    /// Demonstration generation could not complete.
    #[error("generation error: {0}")]
    Generation(String),

    /// I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name and the configuration hash of the run it belonged to.
    #[error("stage `{stage}` failed (config {config_hash}): {source}")]
    Stage {
        stage: String,
        config_hash: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps `self` with pipeline stage context.
    pub fn in_stage(self, stage: &str, config_hash: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            source: Box::new(self),
        }
    }
}
