//! `bingo-twin/1` interchange format.
//!
//! ```json
//! { "version": "bingo-twin/1", "commit_id": "...", "function": "...",
//!   "label": "security" | "non_security" | null,
//!   "pre":  { "nodes": [{"id", "kind": "patch"|"context", "tokens": [[[text, kind], ...], ...]}],
//!             "edges": [{"src", "dst", "types": [cfg, cdg, ddg]}] },
//!   "post": { ... } }
//! ```
//!
//! `tokens` holds one row per instruction. Field order is fixed and the
//! format carries no floating-point values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, PatchError, TwinGraph};
use crate::asm::{Token, TokenKind};
use crate::flow::{Cpg, CpgEdge, CpgNode, EdgeTypeVector, NodeKind};

pub const TWIN_VERSION: &str = "bingo-twin/1";

#[derive(Serialize, Deserialize)]
struct TwinJson {
    version: String,
    commit_id: String,
    function: String,
    label: Option<String>,
    pre: GraphJson,
    post: GraphJson,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: String,
    kind: String,
    tokens: Vec<Vec<(String, String)>>,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    src: String,
    dst: String,
    types: [bool; 3],
}

fn graph_to_json(g: &Cpg) -> GraphJson {
    GraphJson {
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeJson {
                id: n.id.clone(),
                kind: match n.kind {
                    NodeKind::PatchRelated => "patch",
                    NodeKind::Context => "context",
                }
                .into(),
                tokens: n
                    .instructions
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|t| (t.text.clone(), t.kind.as_str().to_string()))
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeJson {
                src: g.nodes[e.src].id.clone(),
                dst: g.nodes[e.dst].id.clone(),
                types: e.types.bits(),
            })
            .collect(),
    }
}

fn schema(msg: impl Into<String>) -> PatchError {
    PatchError::Schema(msg.into())
}

fn graph_from_json(g: GraphJson) -> Result<Cpg, PatchError> {
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for n in g.nodes {
        let kind = match n.kind.as_str() {
            "patch" => NodeKind::PatchRelated,
            "context" => NodeKind::Context,
            other => return Err(schema(format!("unknown node kind {other:?}"))),
        };
        if nodes.iter().any(|m: &CpgNode| m.id == n.id) {
            return Err(schema(format!("duplicate node id {:?}", n.id)));
        }
        let instructions = n
            .tokens
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(text, k)| {
                        let kind = TokenKind::parse(&k)
                            .ok_or_else(|| schema(format!("unknown token kind {k:?}")))?;
                        Ok(Token::new(text, kind))
                    })
                    .collect::<Result<Vec<_>, PatchError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        nodes.push(CpgNode {
            id: n.id,
            kind,
            instructions,
        });
    }
    let index = |id: &str| {
        nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| schema(format!("edge references unknown node {id:?}")))
    };
    let mut edges = Vec::with_capacity(g.edges.len());
    for e in g.edges {
        let types = EdgeTypeVector::new(e.types)
            .ok_or_else(|| schema("edge with all-false type vector"))?;
        edges.push(CpgEdge {
            src: index(&e.src)?,
            dst: index(&e.dst)?,
            types,
        });
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    if edges
        .windows(2)
        .any(|w| (w[0].src, w[0].dst) == (w[1].src, w[1].dst))
    {
        return Err(schema("parallel edge records must be merged"));
    }
    Ok(Cpg { nodes, edges })
}

pub fn twin_to_json(t: &TwinGraph) -> String {
    let j = TwinJson {
        version: TWIN_VERSION.into(),
        commit_id: t.commit_id.clone(),
        function: t.function.clone(),
        label: t.label.map(|l| l.as_str().to_string()),
        pre: graph_to_json(&t.pre_graph),
        post: graph_to_json(&t.post_graph),
    };
    let mut s = serde_json::to_string_pretty(&j).expect("twin graph serializes");
    s.push('\n');
    s
}

pub fn twin_from_json(text: &str) -> Result<TwinGraph, PatchError> {
    let j: TwinJson = serde_json::from_str(text)?;
    if j.version != TWIN_VERSION {
        return Err(schema(format!("unsupported version {:?}", j.version)));
    }
    let label = match j.label {
        None => None,
        Some(l) => Some(Label::parse(&l).ok_or_else(|| schema(format!("unknown label {l:?}")))?),
    };
    Ok(TwinGraph {
        pre_graph: graph_from_json(j.pre)?,
        post_graph: graph_from_json(j.post)?,
        label,
        commit_id: j.commit_id,
        function: j.function,
    })
}

pub fn read_twin_graph(path: &Path) -> Result<TwinGraph, PatchError> {
    let text = std::fs::read_to_string(path).map_err(|source| PatchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    twin_from_json(&text)
}

pub fn write_twin_graph(path: &Path, t: &TwinGraph) -> Result<(), PatchError> {
    std::fs::write(path, twin_to_json(t)).map_err(|source| PatchError::Io {
        path: path.display().to_string(),
        source,
    })
}
