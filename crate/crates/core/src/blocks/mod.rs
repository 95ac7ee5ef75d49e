//! Composite forward blocks: Conv, Bottleneck, C2f, SPPF, EMA attention,
//! C2f-EMA and the decoupled detection head.
//!
//! Every block is built from a config plus a seed and is immutable
//! afterwards, so forwards are pure functions of the input.

mod c2f;
mod conv;
mod ema;
mod head;
mod init;
mod sppf;

pub use c2f::{Bottleneck, C2f, C2fConfig, C2fEma};
pub use conv::{ConvBlock, ConvConfig};
pub use ema::{EmaBlock, EmaTrace};
pub use head::{DecoupledHead, HeadOutput};
pub use init::ParamInit;
pub use sppf::{sppf_pool_pyramid, Sppf};

use thiserror::Error;

use crate::tensor::TensorError;

/// Default EMA group count.
pub const DEFAULT_GROUPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid block configuration: {0}")]
    Config(String),
    #[error("{block}: expected {expected} input channels, got {actual}")]
    InputChannels {
        block: &'static str,
        expected: usize,
        actual: usize,
    },
}

pub type Result<T> = std::result::Result<T, BlockError>;

fn check_input(block: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(BlockError::InputChannels {
            block,
            expected,
            actual,
        });
    }
    Ok(())
}
