//! Universal joint source-channel coding over digitally modulated AWGN links.

pub mod channel;
pub mod codec;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod vq;

pub use error::{Error, Result};
