use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use super::links::{policy_edges, Edge, NodeRef};
use super::{node_name, FusionOp, NeckError, NeckGraphSpec, NodeSpec, Result};

/// How an input is brought to the consuming node's stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Identity,
    /// Nearest-neighbour upsampling by this factor.
    Up(usize),
    /// This many stride-2 conv halvings.
    Down(usize),
    /// Strides whose ratio is not a power of two.
    Incompatible {
        from: usize,
        to: usize,
    },
}

impl Resample {
    fn between(from: usize, to: usize) -> Self {
        let pow2 = |r: usize| r.is_power_of_two().then(|| r.trailing_zeros() as usize);
        if from == to {
            Resample::Identity
        } else if to > from && to.is_multiple_of(from) {
            pow2(to / from).map_or(Resample::Incompatible { from, to }, Resample::Down)
        } else if from > to && from.is_multiple_of(to) {
            pow2(from / to).map_or(Resample::Incompatible { from, to }, |_| {
                Resample::Up(from / to)
            })
        } else {
            Resample::Incompatible { from, to }
        }
    }
}

impl fmt::Display for Resample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resample::Identity => Ok(()),
            Resample::Up(k) => write!(f, "^{k}"),
            Resample::Down(n) => write!(f, "v{}", 1usize << n),
            Resample::Incompatible { .. } => f.write_str("?"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub name: String,
    pub level: usize,
    pub layer: usize,
    pub stride: usize,
    /// `None` for backbone features (layer 0).
    pub op: Option<FusionOp>,
    pub out_channels: usize,
    pub declared_in_channels: Option<usize>,
    /// Producer node indices, in concatenation order.
    pub inputs: Vec<usize>,
    pub resample: Vec<Resample>,
}

/// A resolved neck: grid nodes with wired inputs, a topological order and
/// the head nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NeckGraph {
    pub spec: NeckGraphSpec,
    pub nodes: Vec<NodeInfo>,
    /// Topological order over all nodes.
    pub order: Vec<usize>,
    /// One node per head level, in `spec.heads` order.
    pub heads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub node: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.message)
    }
}

impl NeckGraph {
    pub fn resolve(spec: &NeckGraphSpec) -> Result<Self> {
        check_spec(spec)?;
        let k_levels = spec.levels.len();
        let index = |r: NodeRef| r.layer * k_levels + r.level;
        let mut nodes: Vec<NodeInfo> = (0..=spec.depth)
            .flat_map(|layer| {
                spec.levels
                    .iter()
                    .enumerate()
                    .map(move |(k, lv)| (layer, k, lv))
            })
            .map(|(layer, level, lv)| NodeInfo {
                name: node_name(&lv.name, layer),
                level,
                layer,
                stride: lv.stride,
                op: (layer > 0).then_some(spec.op),
                out_channels: lv.channels,
                declared_in_channels: None,
                inputs: Vec::new(),
                resample: Vec::new(),
            })
            .collect();
        let by_name: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.clone(), i))
            .collect();
        let lookup = |name: &str| {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| NeckError::UnknownNode(name.into()))
        };

        for NodeSpec {
            name,
            op,
            out_channels,
            in_channels,
        } in &spec.nodes
        {
            let n = &mut nodes[lookup(name)?];
            if n.layer == 0 {
                return Err(NeckError::Spec(format!(
                    "node '{name}' is a backbone feature; set its width on the level instead"
                )));
            }
            n.op = op.or(n.op);
            n.out_channels = out_channels.unwrap_or(n.out_channels);
            n.declared_in_channels = *in_channels;
        }

        let edges: Vec<(usize, usize)> = if spec.edges.is_empty() {
            let policy = spec.link_policy.ok_or_else(|| {
                NeckError::Spec("either link_policy or an explicit edge list is required".into())
            })?;
            policy_edges(spec, policy)?
                .into_iter()
                .map(|Edge { from, to }| (index(from), index(to)))
                .collect()
        } else {
            spec.edges
                .iter()
                .map(|e| Ok((lookup(&e.from)?, lookup(&e.to)?)))
                .collect::<Result<_>>()?
        };
        let mut seen = HashSet::new();
        for &(from, to) in &edges {
            if nodes[to].layer == 0 {
                return Err(NeckError::Spec(format!(
                    "edge {} -> {} feeds a backbone feature",
                    nodes[from].name, nodes[to].name
                )));
            }
            if !seen.insert((from, to)) {
                return Err(NeckError::Spec(format!(
                    "duplicate edge {} -> {}",
                    nodes[from].name, nodes[to].name
                )));
            }
            let r = Resample::between(nodes[from].stride, nodes[to].stride);
            nodes[to].inputs.push(from);
            nodes[to].resample.push(r);
        }

        let order = topological_order(&nodes)?;
        let heads = spec
            .heads
            .iter()
            .map(|h| {
                let k = spec.level_index(h).expect("checked in check_spec");
                index(NodeRef::new(k, spec.depth))
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            nodes,
            order,
            heads,
        })
    }

    pub fn node(&self, name: &str) -> Option<&NodeInfo> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Summed width of a node's inputs. Resampling keeps channel counts.
    pub fn in_channels(&self, node: usize) -> usize {
        self.nodes[node]
            .inputs
            .iter()
            .map(|&i| self.nodes[i].out_channels)
            .sum()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    /// Per node, the length of the shortest path to any head node, or
    /// `None` when no head is reachable.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        let mut queue = VecDeque::new();
        for &h in &self.heads {
            if dist[h].is_none() {
                dist[h] = Some(0);
                queue.push_back(h);
            }
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.nodes[u].inputs {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

fn check_spec(spec: &NeckGraphSpec) -> Result<()> {
    let err = |m: String| Err(NeckError::Spec(m));
    if spec.levels.is_empty() {
        return err("at least one level is required".into());
    }
    if spec.depth < 1 {
        return err("depth must be at least 1".into());
    }
    let mut names = HashSet::new();
    for lv in &spec.levels {
        if !names.insert(lv.name.as_str()) {
            return err(format!("duplicate level '{}'", lv.name));
        }
        if lv.stride == 0 {
            return err(format!("level '{}' has no stride", lv.name));
        }
    }
    if spec.levels.windows(2).any(|w| w[1].stride <= w[0].stride) {
        return err("level strides must increase from fine to coarse".into());
    }
    if spec.heads.is_empty() {
        return err("at least one head level is required".into());
    }
    let mut heads = HashSet::new();
    for h in &spec.heads {
        if spec.level_index(h).is_none() {
            return err(format!("head level '{h}' is not a declared level"));
        }
        if !heads.insert(h) {
            return err(format!("head level '{h}' is listed twice"));
        }
    }
    Ok(())
}

fn topological_order(nodes: &[NodeInfo]) -> Result<Vec<usize>> {
    let mut indegree: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
    let mut consumers = vec![Vec::new(); nodes.len()];
    for (to, n) in nodes.iter().enumerate() {
        for &from in &n.inputs {
            consumers[from].push(to);
        }
    }
    let mut ready: VecDeque<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(u) = ready.pop_front() {
        order.push(u);
        for &v in &consumers[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push_back(v);
            }
        }
    }
    if order.len() < nodes.len() {
        let stuck = (0..nodes.len())
            .filter(|&i| indegree[i] > 0)
            .map(|i| nodes[i].name.clone())
            .collect();
        return Err(NeckError::Cycle(stuck));
    }
    Ok(order)
}

/// Checks the channel plan and resampling of every node. An empty result
/// means the graph is executable.
pub fn validate_channels(graph: &NeckGraph) -> Vec<Diagnostic> {
    let groups = graph.spec.ema_groups;
    let mut out = Vec::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        let mut diag = |message: String| {
            out.push(Diagnostic {
                node: n.name.clone(),
                message,
            })
        };
        if n.out_channels == 0 {
            diag("output width is zero".into());
            continue;
        }
        let Some(op) = n.op else { continue };
        if n.inputs.is_empty() {
            diag("fusion node has no inputs".into());
            continue;
        }
        let sum = graph.in_channels(i);
        if let Some(declared) = n.declared_in_channels {
            if declared != sum {
                diag(format!(
                    "declares {declared} input channels but its inputs sum to {sum}"
                ));
            }
        }
        for (&src, r) in n.inputs.iter().zip(&n.resample) {
            if let Resample::Incompatible { from, to } = r {
                diag(format!(
                    "input {} at stride {from} cannot be resampled to stride {to}",
                    graph.nodes[src].name
                ));
            }
        }
        match op {
            FusionOp::C2f | FusionOp::C2fEma if n.out_channels % 2 != 0 => {
                diag(format!(
                    "{op} needs an even output width, got {}",
                    n.out_channels
                ));
            }
            FusionOp::C2fEma if groups == 0 || (n.out_channels / 2) % groups != 0 => {
                diag(format!(
                    "c2f_ema hidden width {} is not divisible by {groups} groups",
                    n.out_channels / 2
                ));
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientDistance {
    /// Longest shortest path from any node to an output.
    pub max: usize,
    pub per_node: Vec<usize>,
}

/// Maximum over nodes of the shortest path from the node to an output.
pub fn shortest_gradient_distance(graph: &NeckGraph) -> Result<GradientDistance> {
    let dist = graph.distances();
    let unreachable: Vec<String> = dist
        .iter()
        .zip(&graph.nodes)
        .filter(|(d, _)| d.is_none())
        .map(|(_, n)| n.name.clone())
        .collect();
    if !unreachable.is_empty() {
        return Err(NeckError::Unreachable(unreachable));
    }
    let per_node: Vec<usize> = dist
        .into_iter()
        .map(|d| d.expect("checked above"))
        .collect();
    Ok(GradientDistance {
        max: per_node.iter().copied().max().unwrap_or(0),
        per_node,
    })
}

impl NeckGraphSpec {
    /// Copy of the spec in which every fusion node declares the input width
    /// its wiring produces, so later edits to widths are caught by
    /// [`validate_channels`].
    pub fn with_declared_channels(mut self) -> Result<Self> {
        let graph = NeckGraph::resolve(&self)?;
        let mut declared: Vec<NodeSpec> = Vec::new();
        for (i, n) in graph.nodes.iter().enumerate().filter(|(_, n)| n.layer > 0) {
            let mut ns = self
                .nodes
                .iter()
                .find(|s| s.name == n.name)
                .cloned()
                .unwrap_or_else(|| NodeSpec {
                    name: n.name.clone(),
                    ..NodeSpec::default()
                });
            ns.in_channels = Some(graph.in_channels(i));
            declared.push(ns);
        }
        self.nodes = declared;
        Ok(self)
    }
}
