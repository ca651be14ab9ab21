use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("cannot draw {t} subsets of size {k} from {n} objects: C({n},{k}) = {combinations} and t must stay below it")]
    Sampling {
        n: usize,
        k: usize,
        t: usize,
        combinations: u128,
    },

    #[error("segmentation error: {0}")]
    Segmentation(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("format error in entry `{entry}`: {reason}")]
    Format { entry: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

