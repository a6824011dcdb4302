use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto process exit codes: `CheckFailed` -> 1,
/// `Config` -> 2, `Data` -> 3, `ModelFormat` -> 4. Everything else is
/// an internal contract violation and also exits non-zero.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown emotion index {index} (taxonomy has {count} emotions)")]
    UnknownEmotionIndex { index: usize, count: usize },

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
