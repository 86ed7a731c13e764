use std::collections::BTreeSet;
use std::fmt;

use super::{PatchBlockSet, PatchError};
use crate::asm::{Function, Program};
use crate::flow::{slice_cpg, Cpg, FunctionGraphs, SliceConfig, SliceMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonSecurity,
    Security,
}

impl Label {
    /// Class index used by the classifier: 1 = security.
    pub fn class_index(self) -> usize {
        match self {
            Label::NonSecurity => 0,
            Label::Security => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Security => "security",
            Label::NonSecurity => "non_security",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "security" => Some(Label::Security),
            "non_security" | "non-security" => Some(Label::NonSecurity),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sliced pre/post graphs of one function touched by one commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwinGraph {
    pub pre_graph: Cpg,
    pub post_graph: Cpg,
    pub label: Option<Label>,
    pub commit_id: String,
    pub function: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwinWarning {
    pub function: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct TwinBuild {
    pub twins: Vec<TwinGraph>,
    pub warnings: Vec<TwinWarning>,
}

fn side_cpg(f: &Function, patch: &BTreeSet<String>) -> Result<Cpg, PatchError> {
    Ok(FunctionGraphs::build(f)?.merge(f, patch)?)
}

/// Builds one twin graph per function that has patch blocks on either side.
///
/// A side without patch blocks in that function contributes a context-only
/// graph: the blocks whose labels also appear in the other side's slice, or
/// its entry block when no label is shared. Functions that fail are skipped
/// and reported in `warnings`.
pub fn build_twin_graph(
    pre: &Program,
    post: &Program,
    pbs: &PatchBlockSet,
    config: &SliceConfig,
    label: Option<Label>,
) -> Result<TwinBuild, PatchError> {
    if pbs.is_empty() {
        return Err(PatchError::EmptyPatch);
    }
    config.validate()?;
    let commit_id = if post.commit_id.is_empty() {
        pre.commit_id.clone()
    } else {
        post.commit_id.clone()
    };
    let mut out = TwinBuild::default();
    for name in pbs.functions() {
        let warn = |message: String| TwinWarning {
            function: name.clone(),
            message,
        };
        let (Some(fa), Some(fb)) = (pre.function(&name), post.function(&name)) else {
            out.warnings
                .push(warn("function missing on one side".into()));
            continue;
        };
        match twin_for_function(fa, fb, pbs, config) {
            Ok((pre_graph, post_graph, truncated)) => {
                if truncated {
                    out.warnings
                        .push(warn("slicing hit the time limit; graph truncated".into()));
                }
                out.twins.push(TwinGraph {
                    pre_graph,
                    post_graph,
                    label,
                    commit_id: commit_id.clone(),
                    function: name.clone(),
                });
            }
            Err(e) => out.warnings.push(warn(e.to_string())),
        }
    }
    Ok(out)
}

fn twin_for_function(
    fa: &Function,
    fb: &Function,
    pbs: &PatchBlockSet,
    config: &SliceConfig,
) -> Result<(Cpg, Cpg, bool), PatchError> {
    let patch_a = pbs.blocks_in(false, &fa.name);
    let patch_b = pbs.blocks_in(true, &fb.name);
    let cpg_a = side_cpg(fa, &patch_a)?;
    let cpg_b = side_cpg(fb, &patch_b)?;

    let slice =
        |cpg: &Cpg, patch: &BTreeSet<String>| slice_cpg(cpg, patch, SliceMode::Context, config);
    match (patch_a.is_empty(), patch_b.is_empty()) {
        (false, false) => {
            let a = slice(&cpg_a, &patch_a)?;
            let b = slice(&cpg_b, &patch_b)?;
            Ok((a.cpg, b.cpg, a.truncated || b.truncated))
        }
        (true, false) => {
            let b = slice(&cpg_b, &patch_b)?;
            Ok((context_only(&cpg_a, fa, &b.cpg), b.cpg, b.truncated))
        }
        (false, true) => {
            let a = slice(&cpg_a, &patch_a)?;
            let ctx = context_only(&cpg_b, fb, &a.cpg);
            Ok((a.cpg, ctx, a.truncated))
        }
        (true, true) => unreachable!("function listed only when it has patch blocks"),
    }
}

fn context_only(cpg: &Cpg, f: &Function, other: &Cpg) -> Cpg {
    let mut anchors: BTreeSet<String> = other
        .nodes
        .iter()
        .map(|n| n.id.clone())
        .filter(|id| cpg.node_index(id).is_some())
        .collect();
    if anchors.is_empty() {
        anchors.insert(f.entry.clone());
    }
    cpg.subgraph(&anchors, &BTreeSet::new())
}
