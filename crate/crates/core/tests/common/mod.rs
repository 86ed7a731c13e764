//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use bingo::asm::{Token, TokenKind};
use bingo::flow::{Cpg, CpgEdge, CpgNode, EdgeType, EdgeTypeVector, FlowGraph, NodeKind};
use bingo::gnn::{Adjacency, GraphSide, TwinSample};
use bingo::nn::glorot;
use bingo::patch::Label;
use ndarray::{Array2, LinalgScalar};
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("b{i}")).collect()
}

/// Random directed graph with up to `max_nodes` nodes and `max_edges` edges
/// (self-loops allowed, duplicates collapse).
pub fn random_edges<R: Rng>(
    rng: &mut R,
    max_nodes: usize,
    max_edges: usize,
) -> (usize, BTreeSet<(usize, usize)>) {
    let n = rng.gen_range(1..=max_nodes);
    let m = rng.gen_range(0..=max_edges);
    let edges = (0..m)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect();
    (n, edges)
}

pub fn flow_graph(kind: EdgeType, n: usize, edges: &BTreeSet<(usize, usize)>) -> FlowGraph {
    let mut g = FlowGraph::new(kind, names(n));
    for &(s, d) in edges {
        g.add_edge_idx(s, d);
    }
    g
}

fn reach_avoiding(succ: &[Vec<usize>], from: usize, avoid: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; succ.len()];
    if Some(from) == avoid {
        return seen;
    }
    seen[from] = true;
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        for &w in &succ[v] {
            if !seen[w] && Some(w) != avoid {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Brute-force control dependences.
///
/// Exits (no successors) and the lowest-index node of every sink SCC that
/// cannot reach an exit are wired to a virtual exit `x`. Then `a`
/// post-dominates `b` iff `a == b` or `b` cannot reach `x` once `a` is
/// deleted, and `v` depends on `u` iff some successor `s` of `u` is
/// post-dominated by `v` while `v` does not strictly post-dominate `u`.
pub fn oracle_control_deps(n: usize, edges: &BTreeSet<(usize, usize)>) -> BTreeSet<(usize, usize)> {
    let x = n;
    let mut succ = vec![Vec::new(); n + 1];
    for &(s, d) in edges {
        succ[s].push(d);
    }
    let exits: Vec<usize> = (0..n).filter(|&v| succ[v].is_empty()).collect();
    let reach: Vec<Vec<bool>> = (0..n).map(|v| reach_avoiding(&succ, v, None)).collect();
    let reaches_exit = |v: usize| exits.iter().any(|&e| reach[v][e]);
    for v in 0..n {
        if reaches_exit(v) {
            continue;
        }
        let scc_members: Vec<usize> = (0..n).filter(|&u| reach[v][u] && reach[u][v]).collect();
        let sink = (0..n).filter(|&u| reach[v][u]).all(|u| reach[u][v]);
        if sink && scc_members.iter().min() == Some(&v) {
            succ[v].push(x);
        }
    }
    for &e in &exits {
        succ[e].push(x);
    }
    let pdom = |a: usize, b: usize| a == b || !reach_avoiding(&succ, b, Some(a))[x];
    let mut out = BTreeSet::new();
    for u in 0..n {
        for v in 0..n {
            if v == u || (pdom(v, u)) {
                continue;
            }
            if succ[u].iter().any(|&s| s < n && pdom(v, s)) {
                out.insert((u, v));
            }
        }
    }
    out
}

pub fn random_cpg<R: Rng>(rng: &mut R, max_nodes: usize, max_edges: usize) -> Cpg {
    let n = rng.gen_range(1..=max_nodes);
    let nodes = (0..n)
        .map(|i| CpgNode {
            id: format!("b{i}"),
            kind: NodeKind::Context,
            instructions: vec![vec![Token::new("nop", TokenKind::Opcode)]],
        })
        .collect();
    let mut pairs = BTreeSet::new();
    for _ in 0..rng.gen_range(0..=max_edges) {
        let (s, d) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if s != d {
            pairs.insert((s, d));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(src, dst)| {
            let types = loop {
                if let Some(t) = EdgeTypeVector::new([rng.gen(), rng.gen(), rng.gen()]) {
                    break t;
                }
            };
            CpgEdge { src, dst, types }
        })
        .collect();
    Cpg { nodes, edges }
}

pub fn random_subset<R: Rng>(rng: &mut R, ids: &[String], min: usize) -> BTreeSet<String> {
    let k = rng.gen_range(min.min(ids.len())..=ids.len());
    ids.choose_multiple(rng, k).cloned().collect()
}

/// Ids within `stride` undirected hops of any patch node.
pub fn oracle_slice_nodes(cpg: &Cpg, patch: &BTreeSet<String>, stride: usize) -> BTreeSet<String> {
    let n = cpg.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for e in &cpg.edges {
        adj[e.src].push(e.dst);
        adj[e.dst].push(e.src);
    }
    let mut dist = vec![usize::MAX; n];
    let mut q = VecDeque::new();
    for (i, node) in cpg.nodes.iter().enumerate() {
        if patch.contains(&node.id) {
            dist[i] = 0;
            q.push_back(i);
        }
    }
    while let Some(v) = q.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    (0..n)
        .filter(|&i| dist[i] <= stride)
        .map(|i| cpg.nodes[i].id.clone())
        .collect()
}

pub const DDG_REGS: &[&str] = &["rax", "rbx", "rcx", "rdx"];

/// Random function over [`DDG_REGS`] using only `mov`, `add` and `cmp`, with
/// arbitrary jumps (loops included). Returns ASM-TEXT.
pub fn random_register_function<R: Rng>(rng: &mut R, max_blocks: usize) -> String {
    let k = rng.gen_range(1..=max_blocks);
    let mut s = String::from("FUNC f\n");
    for i in 0..k {
        s.push_str(&format!("b{i}:\n"));
        for _ in 0..rng.gen_range(1..=3) {
            let a = DDG_REGS.choose(rng).unwrap();
            let b = DDG_REGS.choose(rng).unwrap();
            let line = match rng.gen_range(0..4) {
                0 => format!("mov {a}, {b}"),
                1 => format!("mov {a}, {:#x}", rng.gen_range(0..16)),
                2 => format!("add {a}, {b}"),
                _ => format!("cmp {a}, {b}"),
            };
            s.push_str(&format!("  {line}\n"));
        }
        let target = format!("b{}", rng.gen_range(0..k));
        match rng.gen_range(0..5) {
            0 => s.push_str(&format!("  jmp {target}\n")),
            1 | 2 => s.push_str(&format!("  jne {target}\n")),
            3 => s.push_str("  ret\n"),
            _ => {}
        }
    }
    s
}

/// (uses, defs) of one restricted instruction line.
fn line_effects(line: &str) -> (Vec<String>, Vec<String>) {
    let (m, ops) = line.split_once(' ').unwrap_or((line, ""));
    let ops: Vec<String> = ops
        .split(',')
        .map(|o| o.trim().to_string())
        .filter(|o| DDG_REGS.contains(&o.as_str()))
        .collect();
    let operand = |i: usize| {
        line.split_once(' ')
            .map(|(_, o)| o.split(',').nth(i).unwrap_or("").trim().to_string())
            .unwrap_or_default()
    };
    let is_reg = |o: &str| DDG_REGS.contains(&o);
    match m {
        "mov" => (
            if is_reg(&operand(1)) {
                vec![operand(1)]
            } else {
                vec![]
            },
            vec![operand(0)],
        ),
        "add" => (ops, vec![operand(0)]),
        "cmp" => (ops, vec![]),
        _ => (vec![], vec![]),
    }
}

/// Single-register path simulation over the restricted instruction set.
///
/// `(a, b)` is a dependence iff some register `r` is written in block `a`,
/// read in block `b` before any write of `r` there, and some CFG walk of one
/// or more edges leads from `a` to `b` whose intermediate blocks never write
/// `r`.
pub fn oracle_ddg(blocks: &[Vec<String>], succ: &[Vec<usize>]) -> BTreeSet<(usize, usize)> {
    let n = blocks.len();
    let fx: Vec<Vec<(Vec<String>, Vec<String>)>> = blocks
        .iter()
        .map(|b| b.iter().map(|l| line_effects(l)).collect())
        .collect();
    let writes = |b: usize, r: &str| fx[b].iter().any(|(_, d)| d.iter().any(|x| x == r));
    let exposed_read = |b: usize, r: &str| {
        for (u, d) in &fx[b] {
            if u.iter().any(|x| x == r) {
                return true;
            }
            if d.iter().any(|x| x == r) {
                return false;
            }
        }
        false
    };
    let mut out = BTreeSet::new();
    for r in DDG_REGS {
        for a in (0..n).filter(|&a| writes(a, r)) {
            let mut seen = vec![false; n];
            let mut stack: Vec<usize> = succ[a].clone();
            while let Some(v) = stack.pop() {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                if v != a && exposed_read(v, r) {
                    out.insert((a, v));
                }
                if !writes(v, r) {
                    stack.extend(&succ[v]);
                }
            }
        }
    }
    out
}

/// Instruction lines per block and successor lists, read straight off the
/// ASM-TEXT produced by [`random_register_function`].
pub fn text_blocks(text: &str) -> (Vec<Vec<String>>, Vec<Vec<usize>>) {
    let mut blocks: Vec<Vec<String>> = Vec::new();
    for line in text.lines().skip(1) {
        if line.ends_with(':') {
            blocks.push(Vec::new());
        } else {
            blocks.last_mut().unwrap().push(line.trim().to_string());
        }
    }
    let k = blocks.len();
    let succ = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let last = b.last().unwrap();
            let target = || {
                last.split_once(" b")
                    .map(|(_, t)| t.parse::<usize>().unwrap())
            };
            let fall = (i + 1 < k).then_some(i + 1);
            let mut s = Vec::new();
            if last.starts_with("jmp") {
                s.extend(target());
            } else if last.starts_with("jne") {
                s.extend(target());
                s.extend(fall);
            } else if last != "ret" {
                s.extend(fall);
            }
            s
        })
        .collect();
    let blocks = blocks
        .into_iter()
        .map(|b| {
            b.into_iter()
                .filter(|l| !l.starts_with('j') && l != "ret")
                .collect()
        })
        .collect();
    (blocks, succ)
}

pub fn random_adjacency<R: Rng>(rng: &mut R, n: usize, max_edges: usize) -> Adjacency {
    let mut edges: [Vec<(usize, usize)>; 3] = Default::default();
    for ch in edges.iter_mut() {
        let set: BTreeSet<(usize, usize)> = (0..rng.gen_range(0..=max_edges))
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .filter(|(s, d)| s != d)
            .collect();
        ch.extend(set);
    }
    Adjacency { n, edges }
}

/// Unit-norm rows with non-negative entries, as the hashed embedder yields.
pub fn unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    let mut x = Array2::from_shape_fn((n, d), |_| rng.gen::<f64>());
    for mut r in x.rows_mut() {
        let norm = r.dot(&r).sqrt();
        r /= norm;
    }
    x
}

pub fn random_side<R: Rng>(rng: &mut R, max_nodes: usize, input: usize) -> GraphSide {
    let n = rng.gen_range(1..=max_nodes);
    GraphSide::new(random_adjacency(rng, n, 2 * n), unit_rows(rng, n, input)).unwrap()
}

pub fn random_sample<R: Rng>(rng: &mut R, max_nodes: usize, input: usize) -> TwinSample {
    let label = if rng.gen() {
        Label::Security
    } else {
        Label::NonSecurity
    };
    TwinSample {
        pre: random_side(rng, max_nodes, input),
        post: random_side(rng, max_nodes, input),
        label: Some(label),
    }
}

/// `(A + I) X W` with a dense adjacency matrix, ReLU, channels side by side.
pub fn dense_conv<F: Float + LinalgScalar>(
    adj: &Adjacency,
    x: &Array2<F>,
    w: &[Array2<F>; 3],
) -> Array2<F> {
    let n = adj.n;
    let c = w[0].ncols();
    let mut out = Array2::<F>::zeros((n, 3 * c));
    for k in 0..3 {
        let mut a = Array2::<F>::eye(n);
        for &(s, d) in &adj.edges[k] {
            a[[s, d]] = a[[s, d]] + F::one();
        }
        let m = a.dot(x).dot(&w[k]);
        for i in 0..n {
            for j in 0..c {
                out[[i, k * c + j]] = m[[i, j]].max(F::zero());
            }
        }
    }
    out
}

pub fn glorot_f32<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f32> {
    glorot(rows, cols, rng).mapv(|v| v as f32)
}
