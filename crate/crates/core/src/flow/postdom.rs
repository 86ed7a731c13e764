//! Forward dominance (post-dominator) tree.
//!
//! Computed with the iterative Cooper–Harvey–Kennedy dominator algorithm on
//! the reversed CFG. When the graph has several exits, no exit, or regions
//! that never reach an exit (infinite loops), a virtual exit node is
//! appended: every real exit gets an edge to it, and so does one
//! representative (lowest index) of each dead-end strongly connected
//! component.

use std::collections::HashMap;

use super::{FlowError, FlowGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdomNode<'a> {
    Block(&'a str),
    VirtualExit,
}

#[derive(Debug, Clone)]
pub struct PostDomTree {
    names: Vec<String>,
    /// Immediate post-dominator per node; index `names.len()` is the
    /// virtual exit when present. The root maps to itself.
    ipdom: Vec<usize>,
    virtual_exit: Option<usize>,
    /// Successor lists of the (possibly augmented) graph.
    succ: Vec<Vec<usize>>,
}

impl PostDomTree {
    pub fn root(&self) -> usize {
        self.virtual_exit.unwrap_or_else(|| {
            (0..self.names.len())
                .find(|&i| self.ipdom[i] == i)
                .expect("tree has a root")
        })
    }

    pub fn virtual_exit(&self) -> Option<usize> {
        self.virtual_exit
    }

    /// Number of nodes including the virtual exit.
    pub fn len(&self) -> usize {
        self.ipdom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipdom.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.names.len()
    }

    pub fn ipdom_index(&self, node: usize) -> usize {
        self.ipdom[node]
    }

    pub fn ipdom(&self, id: &str) -> Option<PdomNode<'_>> {
        let i = self.names.iter().position(|n| n == id)?;
        Some(self.node(self.ipdom[i]))
    }

    pub fn node(&self, i: usize) -> PdomNode<'_> {
        if Some(i) == self.virtual_exit {
            PdomNode::VirtualExit
        } else {
            PdomNode::Block(&self.names[i])
        }
    }

    /// Successors in the augmented graph (includes edges to the virtual exit).
    pub fn augmented_successors(&self, node: usize) -> &[usize] {
        &self.succ[node]
    }

    /// Whether `a` post-dominates `b` (reflexive).
    pub fn post_dominates(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            let next = self.ipdom[cur];
            if next == cur {
                return false;
            }
            cur = next;
        }
    }
}

pub fn post_dominator_tree(g: &FlowGraph) -> Result<PostDomTree, FlowError> {
    let n = g.len();
    if n == 0 {
        return Err(FlowError::EmptyGraph);
    }
    let mut succ = g.successor_lists();
    let exits: Vec<usize> = (0..n).filter(|&v| succ[v].is_empty()).collect();

    let reaches_exit = backward_reach(&succ, &exits);
    let stranded: Vec<usize> = (0..n).filter(|&v| !reaches_exit[v]).collect();

    let (root, virtual_exit) = if exits.len() == 1 && stranded.is_empty() {
        (exits[0], None)
    } else {
        let vx = n;
        succ.push(Vec::new());
        for &e in &exits {
            succ[e].push(vx);
        }
        for rep in dead_end_representatives(&succ, &stranded) {
            succ[rep].push(vx);
        }
        (vx, Some(vx))
    };
    let total = succ.len();

    // Reverse postorder of the reversed graph, rooted at the exit.
    let mut pred = vec![Vec::new(); total];
    for (v, ss) in succ.iter().enumerate() {
        for &s in ss {
            pred[s].push(v);
        }
    }
    let order = reverse_postorder(root, &pred);
    let mut rpo_num = vec![usize::MAX; total];
    for (i, &v) in order.iter().enumerate() {
        rpo_num[v] = i;
    }

    const UNDEF: usize = usize::MAX;
    let mut idom = vec![UNDEF; total];
    idom[root] = root;
    let mut changed = true;
    while changed {
        changed = false;
        for &v in order.iter().skip(1) {
            // In the reversed graph, v's predecessors are its CFG successors.
            let mut new_idom = UNDEF;
            for &s in &succ[v] {
                if idom[s] == UNDEF {
                    continue;
                }
                new_idom = if new_idom == UNDEF {
                    s
                } else {
                    intersect(&idom, &rpo_num, s, new_idom)
                };
            }
            if new_idom != UNDEF && idom[v] != new_idom {
                idom[v] = new_idom;
                changed = true;
            }
        }
    }
    debug_assert!(
        idom.iter().all(|&d| d != UNDEF),
        "augmentation makes every node reach the exit"
    );

    Ok(PostDomTree {
        names: g.nodes().to_vec(),
        ipdom: idom,
        virtual_exit,
        succ,
    })
}

fn intersect(idom: &[usize], rpo: &[usize], mut a: usize, mut b: usize) -> usize {
    while a != b {
        while rpo[a] > rpo[b] {
            a = idom[a];
        }
        while rpo[b] > rpo[a] {
            b = idom[b];
        }
    }
    a
}

fn reverse_postorder(root: usize, next: &[Vec<usize>]) -> Vec<usize> {
    let mut visited = vec![false; next.len()];
    let mut post = Vec::with_capacity(next.len());
    let mut stack = vec![(root, 0usize)];
    visited[root] = true;
    while let Some((v, i)) = stack.pop() {
        if i < next[v].len() {
            stack.push((v, i + 1));
            let w = next[v][i];
            if !visited[w] {
                visited[w] = true;
                stack.push((w, 0));
            }
        } else {
            post.push(v);
        }
    }
    post.reverse();
    post
}

fn backward_reach(succ: &[Vec<usize>], targets: &[usize]) -> Vec<bool> {
    let n = succ.len();
    let mut pred = vec![Vec::new(); n];
    for (v, ss) in succ.iter().enumerate() {
        for &s in ss {
            pred[s].push(v);
        }
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = targets.to_vec();
    for &t in targets {
        seen[t] = true;
    }
    while let Some(v) = stack.pop() {
        for &p in &pred[v] {
            if !seen[p] {
                seen[p] = true;
                stack.push(p);
            }
        }
    }
    seen
}

fn forward_reach(succ: &[Vec<usize>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; succ.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &s in &succ[v] {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen
}

/// Lowest-index member of every terminal SCC among `stranded` nodes.
fn dead_end_representatives(succ: &[Vec<usize>], stranded: &[usize]) -> Vec<usize> {
    // Everything reachable from a stranded node is stranded too.
    let reach: HashMap<usize, Vec<bool>> = stranded
        .iter()
        .map(|&v| (v, forward_reach(succ, v)))
        .collect();
    let mut reps = Vec::new();
    for &v in stranded {
        let r = &reach[&v];
        let reached = || (0..r.len()).filter(|&u| r[u]);
        // v sits in a terminal SCC iff everything it reaches reaches it back;
        // the reached set is then exactly that SCC.
        if reached().all(|u| reach[&u][v]) && reached().min() == Some(v) {
            reps.push(v);
        }
    }
    reps
}
