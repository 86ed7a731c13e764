use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EdgeType, FlowError, FlowGraph};
use crate::asm::{Function, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    PatchRelated,
    Context,
}

/// Multi-hot edge type in `(Cfg, Cdg, Ddg)` order. Never all false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeTypeVector([bool; 3]);

impl EdgeTypeVector {
    pub fn new(bits: [bool; 3]) -> Option<Self> {
        bits.iter().any(|b| *b).then_some(EdgeTypeVector(bits))
    }

    pub fn single(t: EdgeType) -> Self {
        let mut bits = [false; 3];
        bits[t.index()] = true;
        EdgeTypeVector(bits)
    }

    pub fn has(self, t: EdgeType) -> bool {
        self.0[t.index()]
    }

    pub fn bits(self) -> [bool; 3] {
        self.0
    }

    pub fn as_f64(self) -> [f64; 3] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpgNode {
    pub id: String,
    pub kind: NodeKind,
    /// Token rows of the block, one per instruction.
    pub instructions: Vec<Vec<Token>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpgEdge {
    pub src: usize,
    pub dst: usize,
    pub types: EdgeTypeVector,
}

/// Code property graph: CFG, CDG and DDG over one node set, with parallel
/// edges between the same ordered pair folded into one typed record.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cpg {
    pub nodes: Vec<CpgNode>,
    /// Sorted by `(src, dst)`, one record per ordered pair.
    pub edges: Vec<CpgEdge>,
}

impl Cpg {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn patch_nodes(&self) -> impl Iterator<Item = &CpgNode> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::PatchRelated)
    }

    /// Edges of one sub-graph as index pairs.
    pub fn edges_of(&self, t: EdgeType) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.types.has(t))
            .map(|e| (e.src, e.dst))
    }

    /// Induced sub-graph on the blocks named in `ids` that exist here; nodes in
    /// `patch` are marked patch-related, all others context.
    pub fn subgraph(&self, ids: &BTreeSet<String>, patch: &BTreeSet<String>) -> Cpg {
        let keep = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| ids.contains(&n.id))
            .map(|(i, _)| i)
            .collect();
        self.induced(&keep, patch, None)
    }

    /// Induced sub-graph on `keep` (indices into `self.nodes`), preserving order.
    fn induced(
        &self,
        keep: &BTreeSet<usize>,
        patch: &BTreeSet<String>,
        only: Option<EdgeType>,
    ) -> Cpg {
        let remap: BTreeMap<usize, usize> = keep
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();
        let nodes = keep
            .iter()
            .map(|&i| {
                let n = &self.nodes[i];
                let kind = if patch.contains(&n.id) {
                    NodeKind::PatchRelated
                } else {
                    NodeKind::Context
                };
                CpgNode {
                    id: n.id.clone(),
                    kind,
                    instructions: n.instructions.clone(),
                }
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                let (src, dst) = (*remap.get(&e.src)?, *remap.get(&e.dst)?);
                let types = match only {
                    Some(t) if e.types.has(t) => EdgeTypeVector::single(t),
                    Some(_) => return None,
                    None => e.types,
                };
                Some(CpgEdge { src, dst, types })
            })
            .collect();
        Cpg { nodes, edges }
    }
}

pub fn merge_cpg(
    f: &Function,
    cfg: &FlowGraph,
    cdg: &FlowGraph,
    ddg: &FlowGraph,
    patch_blocks: &BTreeSet<String>,
) -> Result<Cpg, FlowError> {
    let mut typed: BTreeMap<(usize, usize), [bool; 3]> = BTreeMap::new();
    for g in [cfg, cdg, ddg] {
        for (s, d) in g.edge_ids() {
            let (Some(si), Some(di)) = (cfg.node_index(s), cfg.node_index(d)) else {
                return Err(FlowError::InconsistentUniverse {
                    src: s.to_string(),
                    dst: d.to_string(),
                });
            };
            typed.entry((si, di)).or_default()[g.kind.index()] = true;
        }
    }
    if let Some(missing) = patch_blocks.iter().find(|b| cfg.node_index(b).is_none()) {
        return Err(FlowError::UnknownNode(missing.clone()));
    }
    let nodes = cfg
        .nodes()
        .iter()
        .map(|id| {
            let block = f
                .block(id)
                .ok_or_else(|| FlowError::UnknownNode(id.clone()))?;
            let kind = if patch_blocks.contains(id) {
                NodeKind::PatchRelated
            } else {
                NodeKind::Context
            };
            Ok(CpgNode {
                id: id.clone(),
                kind,
                instructions: block.token_rows(),
            })
        })
        .collect::<Result<Vec<_>, FlowError>>()?;
    let edges = typed
        .into_iter()
        .map(|((src, dst), bits)| CpgEdge {
            src,
            dst,
            types: EdgeTypeVector(bits),
        })
        .collect();
    Ok(Cpg { nodes, edges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceConfig {
    /// Maximum hop distance from a context node to the nearest patch node.
    pub stride: usize,
    pub time_limit: Duration,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            stride: 2,
            time_limit: Duration::from_secs(900),
        }
    }
}

impl SliceConfig {
    pub fn new(stride: usize, time_limit_seconds: u64) -> Result<Self, FlowError> {
        let c = SliceConfig {
            stride,
            time_limit: Duration::from_secs(time_limit_seconds),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.stride == 0 {
            return Err(FlowError::InvalidConfig(
                "slice stride must be at least 1".into(),
            ));
        }
        if self.time_limit.is_zero() {
            return Err(FlowError::InvalidConfig(
                "time limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMode {
    /// Patch blocks joined only by the CFG edges among them.
    Internal,
    /// Patch blocks plus their neighbourhood over all three sub-graphs.
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sliced {
    pub cpg: Cpg,
    /// Set when the time limit cut the expansion short.
    pub truncated: bool,
    pub rounds: usize,
}

/// Slices `cpg` around `patch_blocks`.
///
/// In context mode each round adds every successor of the frontier to the
/// forward collection and every predecessor to the backward collection,
/// across all three edge types, for at most `stride` rounds or until no new
/// block appears.
pub fn slice_cpg(
    cpg: &Cpg,
    patch_blocks: &BTreeSet<String>,
    mode: SliceMode,
    config: &SliceConfig,
) -> Result<Sliced, FlowError> {
    let mut seeds = BTreeSet::new();
    for id in patch_blocks {
        seeds.insert(
            cpg.node_index(id)
                .ok_or_else(|| FlowError::UnknownNode(id.clone()))?,
        );
    }
    if mode == SliceMode::Internal {
        return Ok(Sliced {
            cpg: cpg.induced(&seeds, patch_blocks, Some(EdgeType::Cfg)),
            truncated: false,
            rounds: 0,
        });
    }

    let n = cpg.nodes.len();
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    for e in &cpg.edges {
        succ[e.src].push(e.dst);
        pred[e.dst].push(e.src);
    }

    let start = Instant::now();
    let mut for_slices = BTreeSet::new();
    let mut back_slices = BTreeSet::new();
    let mut visited = seeds.clone();
    let mut frontier: Vec<usize> = seeds.iter().copied().collect();
    let mut truncated = false;
    let mut rounds = 0;
    while rounds < config.stride && !frontier.is_empty() {
        if start.elapsed() >= config.time_limit {
            truncated = true;
            break;
        }
        rounds += 1;
        let mut next = Vec::new();
        for &v in &frontier {
            for &s in &succ[v] {
                for_slices.insert(s);
                if visited.insert(s) {
                    next.push(s);
                }
            }
            for &p in &pred[v] {
                back_slices.insert(p);
                if visited.insert(p) {
                    next.push(p);
                }
            }
        }
        frontier = next;
    }

    let mut keep = seeds;
    keep.extend(for_slices);
    keep.extend(back_slices);
    Ok(Sliced {
        cpg: cpg.induced(&keep, patch_blocks, None),
        truncated,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_program;
    use crate::flow::FunctionGraphs;

    fn chain() -> (Function, FunctionGraphs) {
        let p =
            parse_program("FUNC f\nn0:\n  nop\nn1:\n  nop\nn2:\n  nop\nn3:\n  nop\nn4:\n  ret\n")
                .unwrap();
        let f = p.functions[0].clone();
        let g = FunctionGraphs::build(&f).unwrap();
        (f, g)
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn node_ids(c: &Cpg) -> Vec<&str> {
        c.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    #[test]
    fn edge_vector_folding() {
        let p = parse_program("FUNC f\nb0:\n  mov rax, 0x1\nb1:\n  mov rbx, rax\n  ret\n").unwrap();
        let f = &p.functions[0];
        let g = FunctionGraphs::build(f).unwrap();
        let cpg = g.merge(f, &BTreeSet::new()).unwrap();
        assert_eq!(cpg.edges.len(), 1);
        assert_eq!(cpg.edges[0].types.bits(), [true, false, true]);
    }

    #[test]
    fn ddg_only_edge() {
        let p = parse_program("FUNC f\nb0:\n  mov rax, 0x1\n  jmp b2\nb1:\n  ret\nb2:\n  nop\nb3:\n  add rbx, rax\n  ret\n").unwrap();
        let f = &p.functions[0];
        let g = FunctionGraphs::build(f).unwrap();
        let cpg = g.merge(f, &set(&["b0"])).unwrap();
        let e = cpg.edges.iter().find(|e| (e.src, e.dst) == (0, 3)).unwrap();
        assert_eq!(e.types.bits(), [false, false, true]);
        assert_eq!(cpg.nodes[0].kind, NodeKind::PatchRelated);
        assert_eq!(cpg.nodes[1].kind, NodeKind::Context);
    }

    #[test]
    fn cfg_only_when_other_graphs_empty() {
        let (f, g) = chain();
        let empty_cdg = FlowGraph::over(EdgeType::Cdg, &f);
        let empty_ddg = FlowGraph::over(EdgeType::Ddg, &f);
        let cpg = merge_cpg(&f, &g.cfg, &empty_cdg, &empty_ddg, &BTreeSet::new()).unwrap();
        assert_eq!(cpg.edges.len(), 4);
        assert!(cpg
            .edges
            .iter()
            .all(|e| e.types.bits() == [true, false, false]));
    }

    #[test]
    fn inconsistent_universe() {
        let (f, g) = chain();
        let mut alien = FlowGraph::new(EdgeType::Ddg, ["n0".to_string(), "zz".to_string()]);
        alien.add_edge("n0", "zz").unwrap();
        let err = merge_cpg(&f, &g.cfg, &g.cdg, &alien, &BTreeSet::new()).unwrap_err();
        assert!(matches!(err, FlowError::InconsistentUniverse { .. }));
    }

    #[test]
    fn chain_slices() {
        let (f, g) = chain();
        let patch = set(&["n2"]);
        let cpg = g.merge(&f, &patch).unwrap();
        let s1 = slice_cpg(
            &cpg,
            &patch,
            SliceMode::Context,
            &SliceConfig::new(1, 900).unwrap(),
        )
        .unwrap();
        assert_eq!(node_ids(&s1.cpg), vec!["n1", "n2", "n3"]);
        assert!(!s1.truncated);
        let s2 = slice_cpg(
            &cpg,
            &patch,
            SliceMode::Context,
            &SliceConfig::new(2, 900).unwrap(),
        )
        .unwrap();
        assert_eq!(node_ids(&s2.cpg), vec!["n0", "n1", "n2", "n3", "n4"]);
        assert_eq!(s2.cpg.edges.len(), 4);
    }

    #[test]
    fn all_patch_is_fixpoint() {
        let (f, g) = chain();
        let patch: BTreeSet<String> = f.blocks.iter().map(|b| b.id.clone()).collect();
        let cpg = g.merge(&f, &patch).unwrap();
        for stride in 1..4 {
            let s = slice_cpg(
                &cpg,
                &patch,
                SliceMode::Context,
                &SliceConfig::new(stride, 900).unwrap(),
            )
            .unwrap();
            assert_eq!(s.cpg, cpg);
        }
    }

    #[test]
    fn internal_graph_keeps_cfg_edges_among_patch_blocks() {
        let p = parse_program("FUNC f\nb0:\n  mov rax, 0x1\nb1:\n  mov rbx, rax\nb2:\n  ret\n")
            .unwrap();
        let f = &p.functions[0];
        let g = FunctionGraphs::build(f).unwrap();
        let patch = set(&["b0", "b1"]);
        let cpg = g.merge(f, &patch).unwrap();
        let s = slice_cpg(&cpg, &patch, SliceMode::Internal, &SliceConfig::default()).unwrap();
        assert_eq!(node_ids(&s.cpg), vec!["b0", "b1"]);
        assert_eq!(
            s.cpg.edges,
            vec![CpgEdge {
                src: 0,
                dst: 1,
                types: EdgeTypeVector::single(EdgeType::Cfg)
            }]
        );
    }

    #[test]
    fn time_limit_truncates() {
        let (f, g) = chain();
        let patch = set(&["n2"]);
        let cpg = g.merge(&f, &patch).unwrap();
        let cfg = SliceConfig {
            stride: 3,
            time_limit: Duration::from_nanos(1),
        };
        let s = slice_cpg(&cpg, &patch, SliceMode::Context, &cfg).unwrap();
        assert!(s.truncated);
        assert!(s.cpg.nodes.iter().any(|n| n.id == "n2"));
    }

    #[test]
    fn config_validation() {
        assert!(SliceConfig::new(0, 900).is_err());
        assert!(SliceConfig::new(1, 0).is_err());
        let d = SliceConfig::default();
        assert_eq!((d.stride, d.time_limit.as_secs()), (2, 900));
    }

    #[test]
    fn unknown_patch_block() {
        let (f, g) = chain();
        let cpg = g.merge(&f, &BTreeSet::new()).unwrap();
        assert!(slice_cpg(
            &cpg,
            &set(&["nope"]),
            SliceMode::Context,
            &SliceConfig::default()
        )
        .is_err());
    }
}
