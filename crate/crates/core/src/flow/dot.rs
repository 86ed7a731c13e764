use std::fmt::Write as _;

use super::{Cpg, EdgeType, NodeKind};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering. Patch blocks are filled orange, context blocks pale
/// yellow. One edge statement per edge type: CFG solid, CDG dashed, DDG dotted.
pub fn cpg_to_dot(cpg: &Cpg, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph {} {{", quote(name));
    let _ = writeln!(s, "  node [shape=box, style=filled];");
    for n in &cpg.nodes {
        let fill = match n.kind {
            NodeKind::PatchRelated => "orange",
            NodeKind::Context => "lightyellow",
        };
        let label = n
            .instructions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|t| t.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\\l");
        let _ = writeln!(
            s,
            "  {} [label={}, fillcolor={}];",
            quote(&n.id),
            quote(&format!("{}:\\l{}\\l", n.id, label)).replace("\\\\l", "\\l"),
            fill
        );
    }
    for e in &cpg.edges {
        for t in EdgeType::ALL {
            if !e.types.has(t) {
                continue;
            }
            let (style, tag) = match t {
                EdgeType::Cfg => ("solid", "cfg"),
                EdgeType::Cdg => ("dashed", "cdg"),
                EdgeType::Ddg => ("dotted", "ddg"),
            };
            let _ = writeln!(
                s,
                "  {} -> {} [style={}, label={}];",
                quote(&cpg.nodes[e.src].id),
                quote(&cpg.nodes[e.dst].id),
                style,
                tag
            );
        }
    }
    s.push_str("}\n");
    s
}
