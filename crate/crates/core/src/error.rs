use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector for language {0}")]
    ZeroVector(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate language code {0}")]
    DuplicateLanguage(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("freeze pattern {0:?} matches no parameter")]
    UnmatchedPattern(String),
    #[error("not enough data for {lang}: requested {requested}, available {available}")]
    Shortfall { lang: String, requested: usize, available: usize },
    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error("language {0} was used in meta-training; zero-shot evaluation refused")]
    Contamination(String),
}
