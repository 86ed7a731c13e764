use super::{post_dominator_tree, EdgeType, FlowError, FlowGraph};

/// Raw control dependences: `v` depends on `u` when `u` has a successor
/// post-dominated by `v` and `v` does not strictly post-dominate `u`.
/// Self-dependences (loop headers) are dropped.
pub fn control_dependences(cfg: &FlowGraph) -> Result<FlowGraph, FlowError> {
    let tree = post_dominator_tree(cfg)?;
    let real = tree.real_len();
    let mut cdg = FlowGraph::new(EdgeType::Cdg, cfg.nodes().iter().cloned());
    for u in 0..real {
        let stop = tree.ipdom_index(u);
        for &s in tree.augmented_successors(u) {
            let mut runner = s;
            while runner != stop {
                if runner < real && runner != u {
                    cdg.add_edge_idx(u, runner);
                }
                let up = tree.ipdom_index(runner);
                if up == runner {
                    break;
                }
                runner = up;
            }
        }
    }
    Ok(cdg)
}

/// Control dependence graph with direct CFG edges removed, so it only
/// carries the indirect relationships the CFG does not already encode.
pub fn derive_cdg(cfg: &FlowGraph) -> Result<FlowGraph, FlowError> {
    let mut cdg = control_dependences(cfg)?;
    for (s, d) in cfg.edges() {
        cdg.remove_edge_idx(s, d);
    }
    Ok(cdg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> FlowGraph {
        let mut g = FlowGraph::new(EdgeType::Cfg, (0..n).map(|i| format!("b{i}")));
        for &(s, d) in edges {
            g.add_edge_idx(s, d);
        }
        g
    }

    fn ids(g: &FlowGraph) -> Vec<(String, String)> {
        g.edge_ids()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    fn pairs(p: &[(&str, &str)]) -> Vec<(String, String)> {
        p.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn diamond() {
        let g = graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(
            ids(&control_dependences(&g).unwrap()),
            pairs(&[("b0", "b1"), ("b0", "b2")])
        );
        assert_eq!(derive_cdg(&g).unwrap().edge_count(), 0);
    }

    #[test]
    fn gadget() {
        let g = graph(5, &[(0, 1), (0, 4), (1, 2), (1, 3), (2, 3), (3, 4)]);
        assert_eq!(
            ids(&control_dependences(&g).unwrap()),
            pairs(&[("b0", "b1"), ("b0", "b3"), ("b1", "b2")])
        );
        assert_eq!(ids(&derive_cdg(&g).unwrap()), pairs(&[("b0", "b3")]));
    }

    #[test]
    fn straight_line() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(control_dependences(&g).unwrap().edge_count(), 0);
    }

    #[test]
    fn loop_body_depends_on_header_without_self_edge() {
        // b0 -> b1; b1 -> {b2, b3}; b2 -> b1; b3 exit
        let g = graph(4, &[(0, 1), (1, 2), (1, 3), (2, 1)]);
        let raw = control_dependences(&g).unwrap();
        assert_eq!(ids(&raw), pairs(&[("b1", "b2")]));
        assert!(raw.edges().all(|(s, d)| s != d));
    }

    #[test]
    fn empty_graph_propagates() {
        assert_eq!(
            derive_cdg(&graph(0, &[])).unwrap_err(),
            FlowError::EmptyGraph
        );
    }
}
