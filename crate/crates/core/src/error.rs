use thiserror::Error;

/// Errors produced anywhere in the toolchain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: self-loop on vertex {label:?}")]
    SelfLoop { line: usize, label: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("unsupported pattern: {0}")]
    Capability(String),

    #[error("count overflowed the 128-bit accumulator")]
    Overflow,

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("ill-posed moment problem: {0}")]
    IllPosed(String),

    #[error("atom separation failure: {0}")]
    AtomSeparation(String),

    #[error("parameters not identifiable: {0}")]
    Identifiability(String),

    #[error("stage inconsistency: {0}")]
    StageInconsistency(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SelfLoop { .. }
            | Error::Parse { .. }
            | Error::Domain(_)
            | Error::InvalidModel(_)
            | Error::Capability(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Budget(_) => 4,
            Error::Normalization(_)
            | Error::Overflow
            | Error::IllPosed(_)
            | Error::AtomSeparation(_)
            | Error::Identifiability(_)
            | Error::StageInconsistency(_)
            | Error::Alignment(_) => 3,
        }
    }
}
