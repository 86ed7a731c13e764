//! Block-level program graphs: control flow, control dependence and data
//! dependence, their merged code property graph, and patch-centred slicing.

mod cdg;
mod cfg;
mod cpg;
mod ddg;
mod dot;
mod postdom;

pub use cdg::{control_dependences, derive_cdg};
pub use cfg::build_cfg;
pub use cpg::{
    merge_cpg, slice_cpg, Cpg, CpgEdge, CpgNode, EdgeTypeVector, NodeKind, SliceConfig, SliceMode,
    Sliced,
};
pub use ddg::{build_ddg, instruction_effects, Effects, Location};
pub use dot::cpg_to_dot;
pub use postdom::{post_dominator_tree, PdomNode, PostDomTree};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::Function;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("unknown block '{0}'")]
    UnknownNode(String),
    #[error("edge {src}->{dst} references a block outside the CFG node set")]
    InconsistentUniverse { src: String, dst: String },
    #[error("invalid slice configuration: {0}")]
    InvalidConfig(String),
}

/// Sub-graph index. The discriminant fixes the channel and edge-vector
/// position everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    Cfg = 0,
    Cdg = 1,
    Ddg = 2,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Cfg, EdgeType::Cdg, EdgeType::Ddg];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Directed graph over the blocks of one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowGraph {
    pub kind: EdgeType,
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl FlowGraph {
    pub fn new(kind: EdgeType, nodes: impl IntoIterator<Item = String>) -> Self {
        let nodes: Vec<String> = nodes.into_iter().collect();
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        FlowGraph {
            kind,
            nodes,
            index,
            edges: BTreeSet::new(),
        }
    }

    /// Empty graph over the blocks of `f`, in block order.
    pub fn over(kind: EdgeType, f: &Function) -> Self {
        Self::new(kind, f.blocks.iter().map(|b| b.id.clone()))
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn add_edge(&mut self, src: &str, dst: &str) -> Result<(), FlowError> {
        let s = self
            .node_index(src)
            .ok_or_else(|| FlowError::UnknownNode(src.to_string()))?;
        let d = self
            .node_index(dst)
            .ok_or_else(|| FlowError::UnknownNode(dst.to_string()))?;
        self.add_edge_idx(s, d);
        Ok(())
    }

    pub fn add_edge_idx(&mut self, src: usize, dst: usize) {
        assert!(
            src < self.nodes.len() && dst < self.nodes.len(),
            "edge endpoint out of range"
        );
        self.edges.insert((src, dst));
    }

    pub fn remove_edge_idx(&mut self, src: usize, dst: usize) -> bool {
        self.edges.remove(&(src, dst))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges
            .iter()
            .map(|&(s, d)| (self.nodes[s].as_str(), self.nodes[d].as_str()))
    }

    pub fn contains_edge(&self, src: &str, dst: &str) -> bool {
        match (self.node_index(src), self.node_index(dst)) {
            (Some(s), Some(d)) => self.edges.contains(&(s, d)),
            _ => false,
        }
    }

    pub fn successor_lists(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            succ[s].push(d);
        }
        succ
    }

    pub fn predecessor_lists(&self) -> Vec<Vec<usize>> {
        let mut pred = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            pred[d].push(s);
        }
        pred
    }
}

/// The three per-function graphs built side by side.
#[derive(Debug, Clone)]
pub struct FunctionGraphs {
    pub cfg: FlowGraph,
    pub cdg: FlowGraph,
    pub ddg: FlowGraph,
}

impl FunctionGraphs {
    pub fn build(f: &Function) -> Result<Self, FlowError> {
        let cfg = build_cfg(f);
        let cdg = derive_cdg(&cfg)?;
        let ddg = build_ddg(f, &cfg);
        Ok(FunctionGraphs { cfg, cdg, ddg })
    }

    pub fn merge(&self, f: &Function, patch_blocks: &BTreeSet<String>) -> Result<Cpg, FlowError> {
        merge_cpg(f, &self.cfg, &self.cdg, &self.ddg, patch_blocks)
    }
}
