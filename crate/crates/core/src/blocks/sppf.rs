use super::{check_input, ConvBlock, ConvConfig, ParamInit, Result};
use crate::tensor::{self, PoolKind, Tensor};

pub const SPPF_KERNEL: usize = 5;

/// `x` followed by three cascaded stride-1 max-pools, concatenated on the
/// channel axis (4x the input channels, same spatial size).
pub fn sppf_pool_pyramid(x: &Tensor, kernel: usize) -> Result<Tensor> {
    let p1 = tensor::pool(x, PoolKind::Max2d, kernel, 1)?;
    let p2 = tensor::pool(&p1, PoolKind::Max2d, kernel, 1)?;
    let p3 = tensor::pool(&p2, PoolKind::Max2d, kernel, 1)?;
    Ok(tensor::concat(&[x, &p1, &p2, &p3], 1)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sppf {
    cv1: ConvBlock,
    cv2: ConvBlock,
    kernel: usize,
}

impl Sppf {
    pub fn init(in_channels: usize, out_channels: usize, params: &mut ParamInit) -> Self {
        let hid = (in_channels / 2).max(1);
        Self {
            cv1: ConvBlock::init(ConvConfig::new(in_channels, hid, 1, 1), params),
            cv2: ConvBlock::init(ConvConfig::new(4 * hid, out_channels, 1, 1), params),
            kernel: SPPF_KERNEL,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input("SPPF", self.cv1.in_channels(), x.shape().c)?;
        let y = self.cv1.forward(x)?;
        self.cv2.forward(&sppf_pool_pyramid(&y, self.kernel)?)
    }
}
