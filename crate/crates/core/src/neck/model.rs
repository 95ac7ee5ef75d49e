use std::borrow::Cow;

use super::backbone::{BackboneStub, IMAGE_CHANNELS};
use super::graph::{validate_channels, NeckGraph, Resample};
use super::{FusionOp, NeckError, NeckGraphSpec, Result};
use crate::blocks::{
    BlockError, C2f, C2fConfig, C2fEma, ConvBlock, ConvConfig, DecoupledHead, ParamInit,
};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq)]
enum FusionBlock {
    C2f(C2f),
    C2fEma(C2fEma),
    Conv(ConvBlock),
}

impl FusionBlock {
    fn forward(&self, x: &Tensor) -> std::result::Result<Tensor, BlockError> {
        match self {
            FusionBlock::C2f(b) => b.forward(x),
            FusionBlock::C2fEma(b) => b.forward(x),
            FusionBlock::Conv(b) => b.forward(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FusionNode {
    block: FusionBlock,
    /// Per input, the stride-2 convs that bring it down to this node's
    /// stride (empty when no downsampling is needed).
    down: Vec<Vec<ConvBlock>>,
}

/// Detection-head output at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct NeckOutput {
    pub level: String,
    pub stride: usize,
    /// `num_classes` channels.
    pub classes: Tensor,
    /// 4 box channels.
    pub boxes: Tensor,
}

/// Backbone stub, fusion graph and detection heads with seeded weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NeckModel {
    graph: NeckGraph,
    backbone: BackboneStub,
    fusion: Vec<Option<FusionNode>>,
    heads: Vec<DecoupledHead>,
}

impl NeckModel {
    /// Resolves and validates `spec`, then draws every weight from `seed`.
    pub fn build(spec: &NeckGraphSpec, seed: u64) -> Result<Self> {
        let graph = NeckGraph::resolve(spec)?;
        let diagnostics = validate_channels(&graph);
        if !diagnostics.is_empty() {
            return Err(NeckError::Invalid(diagnostics));
        }
        let params = &mut ParamInit::new(seed);
        let backbone = BackboneStub::init(&spec.levels, params)?;
        let mut fusion = Vec::with_capacity(graph.nodes.len());
        for (i, n) in graph.nodes.iter().enumerate() {
            let Some(op) = n.op else {
                fusion.push(None);
                continue;
            };
            let down = n
                .inputs
                .iter()
                .zip(&n.resample)
                .map(|(&src, r)| {
                    let c = graph.nodes[src].out_channels;
                    let steps = if let Resample::Down(s) = r { *s } else { 0 };
                    (0..steps)
                        .map(|_| ConvBlock::init(ConvConfig::new(c, c, 3, 2), params))
                        .collect()
                })
                .collect();
            let (cin, cout) = (graph.in_channels(i), n.out_channels);
            let cfg = C2fConfig::new(cin, cout)
                .depth(spec.block_depth)
                .shortcut(false);
            let block = match op {
                FusionOp::C2f => FusionBlock::C2f(C2f::init_with(cfg, params)?),
                FusionOp::C2fEma => {
                    FusionBlock::C2fEma(C2fEma::init_with(cfg, spec.ema_groups, params)?)
                }
                FusionOp::Conv3x3 => {
                    FusionBlock::Conv(ConvBlock::init(ConvConfig::new(cin, cout, 3, 1), params))
                }
            };
            fusion.push(Some(FusionNode { block, down }));
        }
        let heads = graph
            .heads
            .iter()
            .map(|&h| {
                DecoupledHead::init(
                    graph.nodes[h].out_channels,
                    spec.head_width,
                    spec.num_classes,
                    params,
                )
            })
            .collect();
        Ok(Self {
            graph,
            backbone,
            fusion,
            heads,
        })
    }

    pub fn graph(&self) -> &NeckGraph {
        &self.graph
    }

    /// Head outputs for every head level, in the spec's head order.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<NeckOutput>> {
        let s = image.shape();
        let coarsest = self.graph.spec.levels.last().map_or(1, |l| l.stride);
        if !s.h.is_multiple_of(coarsest) || !s.w.is_multiple_of(coarsest) {
            return Err(NeckError::Divisibility {
                height: s.h,
                width: s.w,
                stride: coarsest,
            });
        }
        if s.c != IMAGE_CHANNELS {
            return Err(BlockError::InputChannels {
                block: "backbone",
                expected: IMAGE_CHANNELS,
                actual: s.c,
            }
            .into());
        }
        let mut values: Vec<Option<Tensor>> = vec![None; self.graph.nodes.len()];
        for (level, feat) in self.backbone.forward(image)?.into_iter().enumerate() {
            values[level] = Some(feat);
        }
        for &i in &self.graph.order {
            let (Some(node), info) = (&self.fusion[i], &self.graph.nodes[i]) else {
                continue;
            };
            let mut parts: Vec<Cow<Tensor>> = Vec::with_capacity(info.inputs.len());
            for ((&src, r), convs) in info.inputs.iter().zip(&info.resample).zip(&node.down) {
                let x = values[src]
                    .as_ref()
                    .expect("topological order computes inputs first");
                parts.push(match r {
                    Resample::Identity => Cow::Borrowed(x),
                    Resample::Up(k) => Cow::Owned(tensor::upsample_nearest(x, *k)?),
                    Resample::Down(_) => {
                        let mut y = convs[0].forward(x)?;
                        for c in &convs[1..] {
                            y = c.forward(&y)?;
                        }
                        Cow::Owned(y)
                    }
                    Resample::Incompatible { .. } => unreachable!("rejected by validate_channels"),
                });
            }
            let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
            let x = if refs.len() == 1 {
                node.block.forward(refs[0])?
            } else {
                node.block.forward(&tensor::concat(&refs, 1)?)?
            };
            values[i] = Some(x);
        }
        self.graph
            .heads
            .iter()
            .zip(&self.heads)
            .map(|(&h, head)| {
                let info = &self.graph.nodes[h];
                let out = head.forward(values[h].as_ref().expect("every node is computed"))?;
                Ok(NeckOutput {
                    level: self.graph.spec.levels[info.level].name.clone(),
                    stride: info.stride,
                    classes: out.classes,
                    boxes: out.boxes,
                })
            })
            .collect()
    }
}

/// The small-object neck preset at width `base`, built with seeded weights.
pub fn build_sod_neck(base: usize, seed: u64) -> Result<NeckModel> {
    NeckModel::build(&NeckGraphSpec::sod(base), seed)
}
