use super::{check_input, BlockError, ParamInit, Result};
use crate::tensor::{self, Activation, PoolKind, Shape, Tensor};

/// Efficient multi-scale attention.
///
/// Channels are split into `groups` sub-features of `C / G` channels each.
/// Groups are folded into the batch axis, so every group is processed
/// independently with the same 1x1 and 3x3 branch weights. Per group:
///
/// 1. average along W and along H, concatenate on the height axis, 1x1 conv,
///    split back into the two directional descriptors;
/// 2. sigmoid each descriptor and gate the group features with both
///    (the 1x1 branch output);
/// 3. run the 3x3 conv branch on the group features;
/// 4. global-average-pool each branch, softmax over channels, and take the
///    dot product with the other branch's flattened spatial map, giving two
///    `H x W` attention maps;
/// 5. add the maps, sigmoid, and scale the group features by the result.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaBlock {
    groups: usize,
    w1: Tensor,
    b1: Vec<f64>,
    w3: Tensor,
    b3: Vec<f64>,
}

/// Intermediate values of one EMA forward, exposed for inspection.
#[derive(Debug, Clone)]
pub struct EmaTrace {
    /// Sigmoid gates along height, `(N*G) x C/G x H x 1`.
    pub gate_h: Tensor,
    /// Sigmoid gates along width, `(N*G) x C/G x 1 x W`.
    pub gate_w: Tensor,
    /// Channel softmax of the pooled 1x1-branch output, `(N*G) x 1 x 1 x C/G`.
    pub softmax_1x1: Tensor,
    /// Channel softmax of the pooled 3x3-branch output, `(N*G) x 1 x 1 x C/G`.
    pub softmax_3x3: Tensor,
    /// 1x1-branch softmax applied to the 3x3-branch map, `(N*G) x 1 x H x W`.
    pub map_from_1x1: Tensor,
    /// 3x3-branch softmax applied to the 1x1-branch map, `(N*G) x 1 x H x W`.
    pub map_from_3x3: Tensor,
    /// Final sigmoid of the summed maps, `(N*G) x 1 x H x W`.
    pub spatial_gate: Tensor,
}

impl EmaBlock {
    pub fn init(channels: usize, groups: usize, params: &mut ParamInit) -> Result<Self> {
        let cg = group_channels(channels, groups)?;
        let w1 = params.conv_weight(cg, cg, 1);
        let b1 = params.bias(cg, cg);
        let w3 = params.conv_weight(cg, cg, 3);
        let b3 = params.bias(cg, cg * 9);
        Ok(Self {
            groups,
            w1,
            b1,
            w3,
            b3,
        })
    }

    /// Builds a block from explicit branch weights: `w1` is
    /// `(C/G, C/G, 1, 1)` and `w3` is `(C/G, C/G, 3, 3)`.
    pub fn from_weights(
        groups: usize,
        w1: Tensor,
        b1: Vec<f64>,
        w3: Tensor,
        b3: Vec<f64>,
    ) -> Result<Self> {
        let cg = w1.shape().n;
        let ok = groups > 0
            && w1.shape() == Shape::new(cg, cg, 1, 1)
            && w3.shape() == Shape::new(cg, cg, 3, 3)
            && b1.len() == cg
            && b3.len() == cg;
        if !ok {
            return Err(BlockError::Config(format!(
                "EMA branch weights {} / {} do not form a square group of width {cg}",
                w1.shape(),
                w3.shape()
            )));
        }
        Ok(Self {
            groups,
            w1,
            b1,
            w3,
            b3,
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn channels(&self) -> usize {
        self.groups * self.w1.shape().n
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_traced(x).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, EmaTrace)> {
        let s = x.shape();
        check_input("EMA", self.channels(), s.c)?;
        let g = self.groups;
        let cg = s.c / g;
        let (h, w) = (s.h, s.w);
        let ng = s.n * g;
        let gx = x.reshape(Shape::new(ng, cg, h, w))?;

        // directional descriptors through the shared 1x1 conv
        let along_h = tensor::pool(&gx, PoolKind::AvgAlongW, 0, 0)?;
        let along_w = tensor::transpose(&tensor::pool(&gx, PoolKind::AvgAlongH, 0, 0)?);
        let joined = tensor::concat(&[&along_h, &along_w], 2)?;
        let mixed = tensor::conv2d(&joined, &self.w1, Some(&self.b1), 1, 0, 1)?;
        let parts = tensor::split_sizes(&mixed, 2, &[h, w])?;
        let gate_h = tensor::activation(&parts[0], Activation::Sigmoid);
        let gate_w = tensor::activation(&tensor::transpose(&parts[1]), Activation::Sigmoid);
        let x1 = gx.mul_broadcast(&gate_h)?.mul_broadcast(&gate_w)?;

        let x2 = tensor::conv2d(&gx, &self.w3, Some(&self.b3), 1, 1, 1)?;

        // cross-spatial fusion
        let pooled_channel_softmax = |t: &Tensor| -> Result<Tensor> {
            let p = tensor::pool(t, PoolKind::GlobalAvg2d, 0, 0)?;
            Ok(tensor::softmax(&p.reshape(Shape::new(ng, 1, 1, cg))?, 3)?)
        };
        let flat = |t: &Tensor| t.reshape(Shape::new(ng, 1, cg, h * w));
        let softmax_1x1 = pooled_channel_softmax(&x1)?;
        let softmax_3x3 = pooled_channel_softmax(&x2)?;
        let map_from_1x1 =
            tensor::matmul(&softmax_1x1, &flat(&x2)?)?.reshape(Shape::new(ng, 1, h, w))?;
        let map_from_3x3 =
            tensor::matmul(&softmax_3x3, &flat(&x1)?)?.reshape(Shape::new(ng, 1, h, w))?;
        let spatial_gate =
            tensor::activation(&map_from_1x1.add(&map_from_3x3)?, Activation::Sigmoid);

        let y = gx.mul_broadcast(&spatial_gate)?.reshape(s)?;
        Ok((
            y,
            EmaTrace {
                gate_h,
                gate_w,
                softmax_1x1,
                softmax_3x3,
                map_from_1x1,
                map_from_3x3,
                spatial_gate,
            },
        ))
    }
}

fn group_channels(channels: usize, groups: usize) -> Result<usize> {
    if groups == 0 || channels == 0 || !channels.is_multiple_of(groups) {
        return Err(BlockError::Config(format!(
            "EMA channels {channels} not divisible into {groups} groups"
        )));
    }
    Ok(channels / groups)
}
