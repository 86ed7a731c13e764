use super::{EdgeType, FlowGraph};
use crate::asm::Function;

/// Intra-procedural CFG. Unreachable blocks stay as isolated nodes.
pub fn build_cfg(f: &Function) -> FlowGraph {
    let mut g = FlowGraph::over(EdgeType::Cfg, f);
    for b in &f.blocks {
        for succ in b.successors() {
            g.add_edge(&b.id, succ)
                .expect("parser guarantees successor labels exist");
        }
    }
    g
}
