use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Skeleton document failed validation. Carries the offending link id
    /// (when one is identifiable) and the field that violated its invariant.
    #[error("skeleton validation failed: link {link:?}, field `{field}`: {message}")]
    Skeleton {
        link: Option<u32>,
        field: &'static str,
        message: String,
    },

    #[error("skeleton document is not valid JSON: {0}")]
    SkeletonJson(#[from] serde_json::Error),

    #[error("pose has {got} parameters, skeleton `{skeleton}` expects {expected}")]
    PoseDimension {
        skeleton: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("posed model has no segments")]
    EmptyModel,

    #[error("depth image format error: {0}")]
    DepthFormat(String),

    #[error("intrinsics error: {0}")]
    Intrinsics(String),

    #[error("xyz parse error at line {line}: {message}")]
    XyzParse { line: usize, message: String },

    #[error("pose file error: {0}")]
    PoseFile(String),

    #[error("config error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("eval budget {budget} is below population size {population}")]
    BudgetTooSmall { budget: u64, population: usize },

    #[error("parents were built for different skeletons")]
    SkeletonMismatch,

    #[error("render produced no hits: model not visible from the camera")]
    EmptyRender,

    #[error("model size mismatch: estimated {estimated} links, truth {truth} links")]
    ModelSizeMismatch { estimated: usize, truth: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pose {index} in batch failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn skeleton(link: Option<u32>, field: &'static str, message: impl Into<String>) -> Self {
        Error::Skeleton {
            link,
            field,
            message: message.into(),
        }
    }
}
