use std::fmt;

use serde::Serialize;

use super::graph::{validate_channels, Diagnostic, NeckGraph, Resample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportRow {
    pub node: String,
    pub level: String,
    pub layer: usize,
    pub stride: usize,
    pub op: String,
    pub in_channels: Option<usize>,
    pub out_channels: usize,
    pub distance: Option<usize>,
    pub inputs: Vec<String>,
}

/// Per-node table plus gradient-distance and validation summary. The text
/// form has a fixed column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeckReport {
    pub rows: Vec<ReportRow>,
    pub edges: usize,
    pub heads: Vec<String>,
    pub max_distance: Option<usize>,
    pub unreachable: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl NeckReport {
    pub fn passed(&self) -> bool {
        self.diagnostics.is_empty() && self.unreachable.is_empty()
    }
}

pub fn neck_report(graph: &NeckGraph) -> NeckReport {
    let dist = graph.distances();
    let rows = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| ReportRow {
            node: n.name.clone(),
            level: graph.spec.levels[n.level].name.clone(),
            layer: n.layer,
            stride: n.stride,
            op: n
                .op
                .map_or_else(|| "input".to_string(), |op| op.to_string()),
            in_channels: n.op.map(|_| graph.in_channels(i)),
            out_channels: n.out_channels,
            distance: dist[i],
            inputs: n
                .inputs
                .iter()
                .zip(&n.resample)
                .map(|(&src, r)| match r {
                    Resample::Identity => graph.nodes[src].name.clone(),
                    other => format!("{}({other})", graph.nodes[src].name),
                })
                .collect(),
        })
        .collect::<Vec<_>>();
    let unreachable = rows
        .iter()
        .filter(|r| r.distance.is_none())
        .map(|r| r.node.clone())
        .collect::<Vec<_>>();
    NeckReport {
        max_distance: if unreachable.is_empty() {
            dist.iter().flatten().copied().max()
        } else {
            None
        },
        rows,
        edges: graph.edge_count(),
        heads: graph
            .heads
            .iter()
            .map(|&h| graph.nodes[h].name.clone())
            .collect(),
        unreachable,
        diagnostics: validate_channels(graph),
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

impl fmt::Display for NeckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:<6} {:>5} {:>6} {:<8} {:>6} {:>6} {:>8}  inputs",
            "node", "level", "layer", "stride", "op", "in_ch", "out_ch", "distance"
        )?;
        for r in &self.rows {
            let inputs = if r.inputs.is_empty() {
                "-".into()
            } else {
                r.inputs.join(",")
            };
            writeln!(
                f,
                "{:<10} {:<6} {:>5} {:>6} {:<8} {:>6} {:>6} {:>8}  {inputs}",
                r.node,
                r.level,
                r.layer,
                r.stride,
                r.op,
                opt(r.in_channels),
                r.out_channels,
                opt(r.distance),
            )?;
        }
        writeln!(f, "nodes: {}", self.rows.len())?;
        writeln!(f, "edges: {}", self.edges)?;
        writeln!(f, "heads: {}", self.heads.join(" "))?;
        match self.max_distance {
            Some(d) => writeln!(f, "gradient distance: {d}")?,
            None => writeln!(
                f,
                "gradient distance: unreachable nodes {}",
                self.unreachable.join(" ")
            )?,
        }
        if self.passed() {
            writeln!(f, "validation: ok")
        } else {
            writeln!(
                f,
                "validation: failed ({} problem{})",
                self.diagnostics.len() + usize::from(!self.unreachable.is_empty()),
                if self.diagnostics.len() + usize::from(!self.unreachable.is_empty()) == 1 {
                    ""
                } else {
                    "s"
                }
            )?;
            for d in &self.diagnostics {
                writeln!(f, "  {d}")?;
            }
            Ok(())
        }
    }
}
