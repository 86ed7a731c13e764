use std::collections::{BTreeMap, BTreeSet};

use super::PatchError;
use crate::asm::{block_fingerprint, Function, Program};

/// `(function name, block id)`.
pub type BlockRef = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    DebugLines,
    FingerprintDiff,
}

/// Patch-related blocks on each side. The two sides need not correspond
/// one-to-one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchBlockSet {
    pub pre_blocks: BTreeSet<BlockRef>,
    pub post_blocks: BTreeSet<BlockRef>,
    pub provenance: Provenance,
}

impl PatchBlockSet {
    pub fn is_empty(&self) -> bool {
        self.pre_blocks.is_empty() && self.post_blocks.is_empty()
    }

    /// Block ids of one side restricted to `function`.
    pub fn blocks_in(&self, post: bool, function: &str) -> BTreeSet<String> {
        let side = if post {
            &self.post_blocks
        } else {
            &self.pre_blocks
        };
        side.iter()
            .filter(|(f, _)| f == function)
            .map(|(_, b)| b.clone())
            .collect()
    }

    /// Function names touched on either side, sorted.
    pub fn functions(&self) -> BTreeSet<String> {
        self.pre_blocks
            .iter()
            .chain(&self.post_blocks)
            .map(|(f, _)| f.clone())
            .collect()
    }

    pub fn swapped(&self) -> Self {
        PatchBlockSet {
            pre_blocks: self.post_blocks.clone(),
            post_blocks: self.pre_blocks.clone(),
            provenance: self.provenance,
        }
    }
}

fn blocks_on_lines(p: &Program, lines: &BTreeSet<u32>) -> Result<BTreeSet<BlockRef>, PatchError> {
    let mut out = BTreeSet::new();
    if lines.is_empty() {
        return Ok(out);
    }
    for f in &p.functions {
        let hits: Vec<&str> = f
            .blocks
            .iter()
            .filter(|b| {
                b.instructions
                    .iter()
                    .any(|i| i.src_line.is_some_and(|l| lines.contains(&l)))
            })
            .map(|b| b.id.as_str())
            .collect();
        if hits.is_empty() {
            continue;
        }
        let total: usize = f.blocks.iter().map(|b| b.instructions.len()).sum();
        let annotated = f
            .blocks
            .iter()
            .flat_map(|b| &b.instructions)
            .filter(|i| i.src_line.is_some())
            .count();
        if annotated * 2 < total {
            return Err(PatchError::MissingDebugInfo {
                function: f.name.clone(),
                annotated,
                total,
            });
        }
        out.extend(hits.into_iter().map(|b| (f.name.clone(), b.to_string())));
    }
    Ok(out)
}

/// Blocks owning at least one instruction whose source line changed.
pub fn patch_blocks_from_debug(
    pre: &Program,
    post: &Program,
    changed_pre_lines: &BTreeSet<u32>,
    changed_post_lines: &BTreeSet<u32>,
) -> Result<PatchBlockSet, PatchError> {
    for (p, lines) in [(pre, changed_pre_lines), (post, changed_post_lines)] {
        let any_annotation = p
            .functions
            .iter()
            .flat_map(|f| &f.blocks)
            .flat_map(|b| &b.instructions)
            .any(|i| i.src_line.is_some());
        if !lines.is_empty() && !any_annotation {
            let name = p
                .functions
                .first()
                .map(|f| f.name.clone())
                .unwrap_or_default();
            let total = p
                .functions
                .iter()
                .flat_map(|f| &f.blocks)
                .map(|b| b.instructions.len())
                .sum();
            return Err(PatchError::MissingDebugInfo {
                function: name,
                annotated: 0,
                total,
            });
        }
    }
    Ok(PatchBlockSet {
        pre_blocks: blocks_on_lines(pre, changed_pre_lines)?,
        post_blocks: blocks_on_lines(post, changed_post_lines)?,
        provenance: Provenance::DebugLines,
    })
}

fn fingerprint_multiset(f: &Function) -> Vec<u64> {
    let mut v: Vec<u64> = f.blocks.iter().map(block_fingerprint).collect();
    v.sort_unstable();
    v
}

/// Blocks of `a` left unmatched after pairing the k-th block with a given
/// fingerprint in `a` against the k-th such block in `b`.
fn unmatched(a: &Function, b: &Function) -> Vec<String> {
    let mut available: BTreeMap<u64, usize> = BTreeMap::new();
    for blk in &b.blocks {
        *available.entry(block_fingerprint(blk)).or_default() += 1;
    }
    a.blocks
        .iter()
        .filter(|blk| match available.get_mut(&block_fingerprint(blk)) {
            Some(n) if *n > 0 => {
                *n -= 1;
                false
            }
            _ => true,
        })
        .map(|blk| blk.id.clone())
        .collect()
}

/// Syntax-level diff: pair functions by name, drop pairs whose block
/// fingerprint multisets agree, then keep the blocks left without a
/// fingerprint partner on the other side.
pub fn patch_blocks_by_diff(pre: &Program, post: &Program) -> Result<PatchBlockSet, PatchError> {
    let mut pre_blocks = BTreeSet::new();
    let mut post_blocks = BTreeSet::new();
    let mut common = 0;
    for fa in &pre.functions {
        let Some(fb) = post.function(&fa.name) else {
            continue;
        };
        common += 1;
        if fingerprint_multiset(fa) == fingerprint_multiset(fb) {
            continue;
        }
        pre_blocks.extend(unmatched(fa, fb).into_iter().map(|b| (fa.name.clone(), b)));
        post_blocks.extend(unmatched(fb, fa).into_iter().map(|b| (fb.name.clone(), b)));
    }
    if common == 0 {
        return Err(PatchError::NoCommonFunctions);
    }
    Ok(PatchBlockSet {
        pre_blocks,
        post_blocks,
        provenance: Provenance::FingerprintDiff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_program;

    const DIAMOND: &str = "FUNC f\nb0:\n  cmp rax, 0x0\n  jle b2\nb1:\n  mov rbx, 0x1\n  jmp b3\nb2:\n  mov rbx, 0x2\nb3:\n  ret\n";

    fn refs(items: &[(&str, &str)]) -> BTreeSet<BlockRef> {
        items
            .iter()
            .map(|(f, b)| (f.to_string(), b.to_string()))
            .collect()
    }

    fn lines(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn identical_programs_have_no_patch() {
        let p = parse_program(DIAMOND).unwrap();
        assert!(patch_blocks_by_diff(&p, &p).unwrap().is_empty());
    }

    #[test]
    fn added_block_is_the_only_patch_block() {
        let pre = parse_program(DIAMOND).unwrap();
        let post =
            parse_program(&DIAMOND.replace("b3:\n  ret\n", "b4:\n  add rbx, 0x2\nb3:\n  ret\n"))
                .unwrap();
        let pbs = patch_blocks_by_diff(&pre, &post).unwrap();
        assert!(pbs.pre_blocks.is_empty());
        assert_eq!(pbs.post_blocks, refs(&[("f", "b4")]));
        assert_eq!(pbs.provenance, Provenance::FingerprintDiff);
    }

    #[test]
    fn replaced_register_marks_both_sides() {
        let pre = parse_program(DIAMOND).unwrap();
        let post = parse_program(&DIAMOND.replace("  mov rbx, 0x1\n", "  mov rcx, 0x1\n")).unwrap();
        let pbs = patch_blocks_by_diff(&pre, &post).unwrap();
        assert_eq!(pbs.pre_blocks, refs(&[("f", "b1")]));
        assert_eq!(pbs.post_blocks, refs(&[("f", "b1")]));
    }

    #[test]
    fn no_common_functions() {
        let a = parse_program("FUNC f\nb0:\n  ret\n").unwrap();
        let b = parse_program("FUNC g\nb0:\n  ret\n").unwrap();
        assert!(matches!(
            patch_blocks_by_diff(&a, &b),
            Err(PatchError::NoCommonFunctions)
        ));
    }

    #[test]
    fn debug_lines_single_block() {
        let text = "FUNC f\nb0:\n  mov rax, 0x1 ;line=16\n  cmp rax, 0x0 ;line=16\n  je b2 ;line=16\nb1:\n  mov rbx, 0x1 ;line=17\nb2:\n  ret ;line=18\n";
        let p = parse_program(text).unwrap();
        let pbs = patch_blocks_from_debug(&p, &p, &lines(&[17]), &lines(&[17])).unwrap();
        assert_eq!(pbs.post_blocks, refs(&[("f", "b1")]));
        assert_eq!(pbs.pre_blocks, refs(&[("f", "b1")]));
        assert_eq!(pbs.provenance, Provenance::DebugLines);
    }

    #[test]
    fn debug_lines_empty_sets() {
        let p = parse_program(DIAMOND).unwrap();
        assert!(patch_blocks_from_debug(&p, &p, &lines(&[]), &lines(&[]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn one_line_spanning_three_blocks() {
        // `if (a && b) x = 1;` style guard split across three blocks.
        let text = "FUNC f\n\
            b0:\n  cmp rdi, 0x0 ;line=9\n  je b3 ;line=9\n\
            b1:\n  cmp rsi, 0x0 ;line=9\n  je b3 ;line=9\n\
            b2:\n  mov rax, 0x1 ;line=9\n\
            b3:\n  ret ;line=10\n";
        let p = parse_program(text).unwrap();
        let pbs = patch_blocks_from_debug(&p, &p, &lines(&[]), &lines(&[9])).unwrap();
        assert_eq!(
            pbs.post_blocks,
            refs(&[("f", "b0"), ("f", "b1"), ("f", "b2")])
        );
    }

    #[test]
    fn missing_debug_info() {
        let p = parse_program("FUNC f\nb0:\n  nop\n  nop\n  nop ;line=3\n  ret\n").unwrap();
        assert!(matches!(
            patch_blocks_from_debug(&p, &p, &lines(&[3]), &lines(&[])),
            Err(PatchError::MissingDebugInfo {
                annotated: 1,
                total: 4,
                ..
            })
        ));
        let bare = parse_program(DIAMOND).unwrap();
        assert!(matches!(
            patch_blocks_from_debug(&bare, &bare, &lines(&[]), &lines(&[5])),
            Err(PatchError::MissingDebugInfo { .. })
        ));
    }
}
