use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("path index {index} out of range for {paths} switchable paths")]
    PathOutOfRange { index: usize, paths: usize },

    #[error("modulation order index {index} out of range for {orders} orders")]
    OrderOutOfRange { index: usize, orders: usize },

    #[error("unsupported modulation order {0} (expected 2, 4, 16, 64 or 256)")]
    UnsupportedModulation(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}: backward called without a matching forward pass")]
    MissingCache(&'static str),

    #[error("image of {height}x{width} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed data at byte offset {offset}: {reason}")]
    Malformed {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        what: &'static str,
        expected: impl std::fmt::Debug,
        actual: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            op,
            what,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
