use super::{ConvBlock, ConvConfig, ParamInit, Result};
use crate::tensor::{self, Tensor};

/// Box and class maps of one detection level.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// `N x num_classes x H x W`.
    pub classes: Tensor,
    /// `N x 4 x H x W` box offsets.
    pub boxes: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    convs: [ConvBlock; 2],
    out_weight: Tensor,
    out_bias: Vec<f64>,
}

impl Branch {
    fn init(cin: usize, width: usize, outputs: usize, params: &mut ParamInit) -> Self {
        Self {
            convs: [
                ConvBlock::init(ConvConfig::new(cin, width, 3, 1), params),
                ConvBlock::init(ConvConfig::new(width, width, 3, 1), params),
            ],
            out_weight: params.conv_weight(outputs, width, 1),
            out_bias: params.bias(outputs, width),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.convs[1].forward(&self.convs[0].forward(x)?)?;
        Ok(tensor::conv2d(
            &y,
            &self.out_weight,
            Some(&self.out_bias),
            1,
            0,
            1,
        )?)
    }
}

/// Separate classification and box-regression branches over one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledHead {
    cls: Branch,
    reg: Branch,
}

impl DecoupledHead {
    pub fn init(
        in_channels: usize,
        width: usize,
        num_classes: usize,
        params: &mut ParamInit,
    ) -> Self {
        Self {
            reg: Branch::init(in_channels, width, 4, params),
            cls: Branch::init(in_channels, width, num_classes, params),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<HeadOutput> {
        Ok(HeadOutput {
            classes: self.cls.forward(x)?,
            boxes: self.reg.forward(x)?,
        })
    }
}
