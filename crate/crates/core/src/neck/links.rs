use super::{LinkPolicy, NeckError, NeckGraphSpec, Result};

/// Grid position: pyramid level `level` (0 = finest), fusion layer `layer`
/// (0 = backbone feature).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub level: usize,
    pub layer: usize,
}

impl NodeRef {
    pub const fn new(level: usize, layer: usize) -> Self {
        Self { level, layer }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: NodeRef,
    pub to: NodeRef,
}

impl Edge {
    pub const fn new(from: NodeRef, to: NodeRef) -> Self {
        Self { from, to }
    }
}

/// Same-level inputs of layer `l` under log2n links: `l - 2^i` for every
/// `2^i <= l`, nearest first.
pub fn log2n_sources(l: usize) -> Result<Vec<usize>> {
    if l < 1 {
        return Err(NeckError::LayerIndex(l));
    }
    Ok(std::iter::successors(Some(1usize), |p| p.checked_mul(2))
        .take_while(|&p| p <= l)
        .map(|p| l - p)
        .collect())
}

/// Same-level inputs of layer `l` under dense links: every earlier layer.
pub fn dense_sources(l: usize) -> Result<Vec<usize>> {
    if l < 1 {
        return Err(NeckError::LayerIndex(l));
    }
    Ok((0..l).collect())
}

fn check_adjacent(spec: &NeckGraphSpec) -> Result<()> {
    for pair in spec.levels.windows(2) {
        if pair[1].stride != 2 * pair[0].stride {
            return Err(NeckError::MissingAdjacentLevel {
                fine: pair[0].name.clone(),
                coarse: pair[1].name.clone(),
                fine_stride: pair[0].stride,
                coarse_stride: pair[1].stride,
            });
        }
    }
    Ok(())
}

/// Diagonal inputs of `(k, l)`: the finer neighbour from layer `l - 1`
/// (downsampled) and the coarser neighbour from layer `l - 1` (upsampled).
/// With pruning, the upsampled input is kept only on the first layer.
fn diagonals(k: usize, l: usize, levels: usize, prune: bool, out: &mut Vec<Edge>) {
    let to = NodeRef::new(k, l);
    if k > 0 {
        out.push(Edge::new(NodeRef::new(k - 1, l - 1), to));
    }
    if k + 1 < levels && !(prune && l >= 2) {
        out.push(Edge::new(NodeRef::new(k + 1, l - 1), to));
    }
}

/// Queen-fusion wiring: every fusion node takes its same-level predecessor
/// plus the diagonal neighbours on either side.
pub fn queen_fusion_edges(spec: &NeckGraphSpec) -> Result<Vec<Edge>> {
    same_level_with_diagonals(spec, |l| Ok(vec![l - 1]))
}

fn same_level_with_diagonals(
    spec: &NeckGraphSpec,
    sources: impl Fn(usize) -> Result<Vec<usize>>,
) -> Result<Vec<Edge>> {
    check_adjacent(spec)?;
    let levels = spec.levels.len();
    let mut edges = Vec::new();
    for l in 1..=spec.depth {
        let same = sources(l)?;
        for k in 0..levels {
            let to = NodeRef::new(k, l);
            edges.extend(same.iter().map(|&s| Edge::new(NodeRef::new(k, s), to)));
            diagonals(k, l, levels, spec.prune_upsampling, &mut edges);
        }
    }
    Ok(edges)
}

/// Edges generated by `policy` for the grid described by `spec`.
pub(crate) fn policy_edges(spec: &NeckGraphSpec, policy: LinkPolicy) -> Result<Vec<Edge>> {
    let levels = spec.levels.len();
    match policy {
        LinkPolicy::Fpn | LinkPolicy::Pafpn => {
            check_adjacent(spec)?;
            let mut edges = Vec::new();
            for l in 1..=spec.depth {
                let top_down = policy == LinkPolicy::Fpn || l % 2 == 1;
                for k in 0..levels {
                    let to = NodeRef::new(k, l);
                    edges.push(Edge::new(NodeRef::new(k, l - 1), to));
                    if top_down && k + 1 < levels {
                        edges.push(Edge::new(NodeRef::new(k + 1, l), to));
                    } else if !top_down && k > 0 {
                        edges.push(Edge::new(NodeRef::new(k - 1, l), to));
                    }
                }
            }
            Ok(edges)
        }
        LinkPolicy::QueenFusion => queen_fusion_edges(spec),
        LinkPolicy::Log2n => same_level_with_diagonals(spec, log2n_sources),
        LinkPolicy::Dense => same_level_with_diagonals(spec, dense_sources),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neck::LevelSpec;

    #[test]
    fn log2n_examples() {
        assert_eq!(log2n_sources(1).unwrap(), [0]);
        assert_eq!(log2n_sources(4).unwrap(), [3, 2, 0]);
        assert_eq!(log2n_sources(8).unwrap(), [7, 6, 4, 0]);
        assert!(log2n_sources(0).is_err());
    }

    #[test]
    fn log2n_counts() {
        for l in 1..=64usize {
            let s = log2n_sources(l).unwrap();
            assert_eq!(s.len(), l.ilog2() as usize + 1, "l={l}");
            assert!(s.iter().all(|&x| x < l));
        }
    }

    #[test]
    fn dense_examples() {
        assert_eq!(dense_sources(1).unwrap(), [0]);
        assert_eq!(dense_sources(3).unwrap(), [0, 1, 2]);
        for l in 1..20 {
            assert_eq!(dense_sources(l).unwrap().len(), l);
        }
        assert!(dense_sources(0).is_err());
    }

    fn three_level(prune: bool, depth: usize) -> NeckGraphSpec {
        let mut s = NeckGraphSpec::gfpn3(16);
        s.prune_upsampling = prune;
        s.depth = depth;
        s
    }

    fn inputs_of(edges: &[Edge], to: NodeRef) -> Vec<NodeRef> {
        edges
            .iter()
            .filter(|e| e.to == to)
            .map(|e| e.from)
            .collect()
    }

    #[test]
    fn queen_fusion_adjacency() {
        let edges = queen_fusion_edges(&three_level(false, 1)).unwrap();
        assert_eq!(
            inputs_of(&edges, NodeRef::new(1, 1)),
            [NodeRef::new(1, 0), NodeRef::new(0, 0), NodeRef::new(2, 0)]
        );
        // Coarsest level: nothing above it to upsample from.
        assert_eq!(
            inputs_of(&edges, NodeRef::new(2, 1)),
            [NodeRef::new(2, 0), NodeRef::new(1, 0)]
        );
        assert_eq!(
            inputs_of(&edges, NodeRef::new(0, 1)),
            [NodeRef::new(0, 0), NodeRef::new(1, 0)]
        );
    }

    #[test]
    fn pruning_drops_later_upsampling_only() {
        let full = queen_fusion_edges(&three_level(false, 3)).unwrap();
        let pruned = queen_fusion_edges(&three_level(true, 3)).unwrap();
        // Two upsampling inputs per layer (levels 0 and 1), removed on layers 2 and 3.
        assert_eq!(full.len() - pruned.len(), 2 * 2);
        assert!(pruned
            .iter()
            .all(|e| e.to.layer == 1 || e.from.level <= e.to.level));
        assert!(pruned.iter().all(|e| full.contains(e)));
    }

    #[test]
    fn non_adjacent_strides_are_rejected() {
        let mut s = three_level(false, 1);
        s.levels[2] = LevelSpec::new("P6", 64, 64);
        assert!(matches!(
            queen_fusion_edges(&s),
            Err(NeckError::MissingAdjacentLevel { .. })
        ));
    }
}
