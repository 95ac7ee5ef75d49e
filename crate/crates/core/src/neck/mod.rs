//! Feature-fusion necks described as data.
//!
//! A [`NeckGraphSpec`] lays out a grid of nodes: one column per pyramid
//! level, one row per fusion layer. Layer 0 holds the backbone features.
//! The link policy (or an explicit edge list) decides which nodes feed
//! which. [`NeckGraph::resolve`] turns a spec into a checked DAG, and
//! [`NeckModel`] attaches weights and runs it.

mod backbone;
mod graph;
mod links;
mod model;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{BlockError, DEFAULT_GROUPS};
use crate::tensor::TensorError;

pub use backbone::BackboneStub;
pub use graph::{
    shortest_gradient_distance, validate_channels, Diagnostic, GradientDistance, NeckGraph,
    NodeInfo, Resample,
};
pub use links::{dense_sources, log2n_sources, queen_fusion_edges, Edge, NodeRef};
pub use model::{build_sod_neck, NeckModel, NeckOutput};
pub use report::{neck_report, NeckReport};

#[derive(Debug, Error)]
pub enum NeckError {
    #[error("layer index must be at least 1, got {0}")]
    LayerIndex(usize),
    #[error("invalid neck spec: {0}")]
    Spec(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error(
        "levels {fine} and {coarse} are not adjacent in stride ({fine_stride} -> {coarse_stride})"
    )]
    MissingAdjacentLevel {
        fine: String,
        coarse: String,
        fine_stride: usize,
        coarse_stride: usize,
    },
    #[error("graph is not a DAG; cycle through: {}", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("channel plan failed validation:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("nodes cannot reach any output: {}", .0.join(", "))]
    Unreachable(Vec<String>),
    #[error("image {height}x{width} is not divisible by the coarsest stride {stride}")]
    Divisibility {
        height: usize,
        width: usize,
        stride: usize,
    },
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, NeckError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionOp {
    C2f,
    C2fEma,
    Conv3x3,
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionOp::C2f => "c2f",
            FusionOp::C2fEma => "c2f_ema",
            FusionOp::Conv3x3 => "conv3x3",
        })
    }
}

/// How fusion nodes are wired when no explicit edge list is given.
///
/// * `fpn`: every layer is a top-down pass; node `(k, l)` takes `(k, l-1)`
///   and the upsampled `(k+1, l)`.
/// * `pafpn`: odd layers are top-down passes, even layers bottom-up passes
///   taking `(k, l-1)` and the downsampled `(k-1, l)`.
/// * `queen_fusion`: `(k, l)` takes `(k, l-1)`, the downsampled `(k-1, l-1)`
///   and the upsampled `(k+1, l-1)`.
/// * `log2n` / `dense`: queen fusion across levels, with same-level inputs
///   from [`log2n_sources`] or [`dense_sources`] instead of `(k, l-1)` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkPolicy {
    Fpn,
    Pafpn,
    QueenFusion,
    Log2n,
    Dense,
}

impl LinkPolicy {
    pub const ALL: [LinkPolicy; 5] = [
        LinkPolicy::Fpn,
        LinkPolicy::Pafpn,
        LinkPolicy::QueenFusion,
        LinkPolicy::Log2n,
        LinkPolicy::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkPolicy::Fpn => "fpn",
            LinkPolicy::Pafpn => "pafpn",
            LinkPolicy::QueenFusion => "queen_fusion",
            LinkPolicy::Log2n => "log2n",
            LinkPolicy::Dense => "dense",
        }
    }
}

impl fmt::Display for LinkPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkPolicy {
    type Err = NeckError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| NeckError::Spec(format!("unknown link policy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub name: String,
    /// Zero means "not given"; config loading fills in defaults.
    #[serde(default)]
    pub stride: usize,
    pub channels: usize,
}

impl LevelSpec {
    pub fn new(name: impl Into<String>, stride: usize, channels: usize) -> Self {
        Self {
            name: name.into(),
            stride,
            channels,
        }
    }
}

/// Per-node settings that differ from the spec-wide defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    /// Node name, `<level>_<layer>`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<FusionOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    /// Declared entry width, checked against the summed inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
}

fn default_op() -> FusionOp {
    FusionOp::C2f
}

fn one() -> usize {
    1
}

fn default_groups() -> usize {
    DEFAULT_GROUPS
}

fn default_head_width() -> usize {
    16
}

fn default_classes() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeckGraphSpec {
    /// Fine to coarse.
    pub levels: Vec<LevelSpec>,
    /// Number of fusion layers above the backbone row.
    pub depth: usize,
    /// Required unless `edges` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_policy: Option<LinkPolicy>,
    /// Drop cross-level upsampling inputs from fusion layers after the
    /// first (queen-fusion family only).
    #[serde(default)]
    pub prune_upsampling: bool,
    #[serde(default = "default_op")]
    pub op: FusionOp,
    /// Bottlenecks per C2f node.
    #[serde(default = "one")]
    pub block_depth: usize,
    #[serde(default = "default_groups")]
    pub ema_groups: usize,
    #[serde(default = "default_head_width")]
    pub head_width: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Level names that carry a detection head. Each head reads the top
    /// node of its level.
    pub heads: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeSpec>,
    /// Replaces the policy-generated edges when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<EdgeSpec>,
}

pub const DEFAULT_STRIDES: [usize; 4] = [4, 8, 16, 32];
pub const SOD_LEVELS: [&str; 4] = ["P2", "P3", "P4", "P5"];

pub fn node_name(level: &str, layer: usize) -> String {
    format!("{level}_{layer}")
}

impl NeckGraphSpec {
    fn pyramid(
        base: usize,
        names: &[&str],
        strides: &[usize],
        depth: usize,
        policy: LinkPolicy,
    ) -> Self {
        Self {
            levels: names
                .iter()
                .zip(strides)
                .enumerate()
                .map(|(k, (n, &s))| LevelSpec::new(*n, s, base << k))
                .collect(),
            depth,
            link_policy: Some(policy),
            prune_upsampling: false,
            op: FusionOp::C2f,
            block_depth: 1,
            ema_groups: DEFAULT_GROUPS,
            head_width: base.max(16),
            num_classes: 10,
            heads: names.iter().map(|s| s.to_string()).collect(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// The small-object neck: four levels P2..P5 at strides (4, 8, 16, 32)
    /// with widths `base * (1, 2, 4, 8)`, two fusion layers wired by log2n
    /// links and pruned queen fusion, C2f-EMA fusion nodes and a detection
    /// head on every level.
    pub fn sod(base: usize) -> Self {
        let mut s = Self::pyramid(base, &SOD_LEVELS, &DEFAULT_STRIDES, 2, LinkPolicy::Log2n);
        s.prune_upsampling = true;
        s.op = FusionOp::C2fEma;
        s.with_declared_channels()
            .expect("the built-in preset resolves")
    }

    /// Three-level top-down FPN over P3..P5.
    pub fn fpn(base: usize) -> Self {
        Self::pyramid(
            base,
            &SOD_LEVELS[1..],
            &DEFAULT_STRIDES[1..],
            1,
            LinkPolicy::Fpn,
        )
    }

    /// Three-level PAFPN over P3..P5.
    pub fn pafpn(base: usize) -> Self {
        Self::pyramid(
            base,
            &SOD_LEVELS[1..],
            &DEFAULT_STRIDES[1..],
            2,
            LinkPolicy::Pafpn,
        )
    }

    /// Three-level GFPN over P3..P5 with unpruned queen fusion.
    pub fn gfpn3(base: usize) -> Self {
        let mut s = Self::pyramid(
            base,
            &SOD_LEVELS[1..],
            &DEFAULT_STRIDES[1..],
            2,
            LinkPolicy::Log2n,
        );
        s.op = FusionOp::C2fEma;
        s
    }

    /// Single-level chain of `n` nodes (the backbone node plus `n - 1`
    /// fusion layers) whose only head reads the last node. `fpn` gives a
    /// plain chain.
    pub fn chain(n: usize, policy: LinkPolicy) -> Self {
        let mut s = Self::pyramid(16, &["P3"], &[8], n.saturating_sub(1), policy);
        s.op = FusionOp::Conv3x3;
        s
    }

    /// Named presets: `sod` (alias `gfpn`), `gfpn3`, `fpn`, `pafpn`,
    /// `chain`, `log2n-chain`, `dense-chain` (chains have 8 nodes).
    pub fn preset(name: &str, base: usize) -> Result<Self> {
        Ok(match name {
            "sod" | "gfpn" => Self::sod(base),
            "gfpn3" => Self::gfpn3(base),
            "fpn" => Self::fpn(base),
            "pafpn" => Self::pafpn(base),
            "chain" => Self::chain(8, LinkPolicy::Fpn),
            "log2n-chain" => Self::chain(8, LinkPolicy::Log2n),
            "dense-chain" => Self::chain(8, LinkPolicy::Dense),
            other => {
                return Err(NeckError::Spec(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }
}

pub const PRESETS: [&str; 8] = [
    "sod",
    "gfpn",
    "gfpn3",
    "fpn",
    "pafpn",
    "chain",
    "log2n-chain",
    "dense-chain",
];
