use super::{check_input, ParamInit, Result};
use crate::tensor::{self, Activation, Tensor};

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvConfig {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }
}

/// Convolution, inference batch-norm, SiLU. Padding is `kernel / 2`.
///
/// Batch-norm statistics start at the identity (mean 0, var 1, gamma 1,
/// beta 0); there is no training mode to move them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub(crate) weight: Tensor,
    pub(crate) bn_mean: Vec<f64>,
    pub(crate) bn_var: Vec<f64>,
    pub(crate) bn_gamma: Vec<f64>,
    pub(crate) bn_beta: Vec<f64>,
    pub(crate) stride: usize,
    pub(crate) padding: usize,
    pub(crate) activation: Option<Activation>,
}

impl ConvBlock {
    pub fn init(cfg: ConvConfig, params: &mut ParamInit) -> Self {
        let c = cfg.out_channels;
        Self {
            weight: params.conv_weight(c, cfg.in_channels, cfg.kernel),
            bn_mean: vec![0.0; c],
            bn_var: vec![1.0; c],
            bn_gamma: vec![1.0; c],
            bn_beta: vec![0.0; c],
            stride: cfg.stride,
            padding: cfg.kernel / 2,
            activation: Some(Activation::Silu),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// Replaces every conv weight with zero.
    pub fn zero_weights(&mut self) {
        self.weight = Tensor::zeros(self.weight.shape());
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input("ConvBlock", self.in_channels(), x.shape().c)?;
        let y = tensor::conv2d(x, &self.weight, None, self.stride, self.padding, 1)?;
        let y = tensor::batch_norm_inference(
            &y,
            &self.bn_mean,
            &self.bn_var,
            &self.bn_gamma,
            &self.bn_beta,
            BN_EPS,
        )?;
        Ok(match self.activation {
            Some(kind) => tensor::activation(&y, kind),
            None => y,
        })
    }
}
