//! Block-level data dependences from register reaching definitions.
//!
//! Registers are tracked by their full-width family (`eax` writes `rax`).
//! Memory operands are a weak extension: two operands alias only when their
//! bracketed address text is identical.

use std::collections::{BTreeMap, BTreeSet};

use super::{EdgeType, FlowGraph};
use crate::asm::{register_family, Function, Instruction, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Reg(&'static str),
    Mem(String),
}

/// Per-instruction effects. `kills` always contains `defs`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Effects {
    pub uses: Vec<Location>,
    pub defs: Vec<Location>,
    pub kills: Vec<Location>,
}

const MOVES: &[&str] = &["mov", "movzx", "movsx", "movsxd", "movabs", "lea"];
const ALU: &[&str] = &[
    "add", "sub", "and", "or", "xor", "adc", "sbb", "imul", "shl", "shr", "sar", "rol", "ror",
];
const UNARY: &[&str] = &["inc", "dec", "neg", "not"];
const COMPARES: &[&str] = &["cmp", "test"];
const CALLER_SAVED: &[&str] = &["rax", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r10", "r11"];

enum Operand {
    Reg(&'static str),
    Mem {
        addr_regs: Vec<&'static str>,
        addr: String,
    },
    Other,
}

fn classify(tokens: &[Token]) -> Operand {
    if let Some(open) = tokens.iter().position(|t| t.text == "[") {
        let close = tokens
            .iter()
            .rposition(|t| t.text == "]")
            .unwrap_or(tokens.len() - 1);
        let inner = &tokens[open..=close.max(open)];
        let addr_regs = inner
            .iter()
            .filter(|t| t.kind == TokenKind::Register)
            .filter_map(|t| register_family(&t.text))
            .collect();
        let addr = inner
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        return Operand::Mem { addr_regs, addr };
    }
    match tokens {
        [t] if t.kind == TokenKind::Register => {
            Operand::Reg(register_family(&t.text).expect("register token"))
        }
        _ => Operand::Other,
    }
}

fn read(op: &Operand, fx: &mut Effects) {
    match op {
        Operand::Reg(r) => fx.uses.push(Location::Reg(r)),
        Operand::Mem { addr_regs, addr } => {
            fx.uses.extend(addr_regs.iter().map(|r| Location::Reg(r)));
            fx.uses.push(Location::Mem(addr.clone()));
        }
        Operand::Other => {}
    }
}

fn address_only(op: &Operand, fx: &mut Effects) {
    match op {
        Operand::Reg(r) => fx.uses.push(Location::Reg(r)),
        Operand::Mem { addr_regs, .. } => {
            fx.uses.extend(addr_regs.iter().map(|r| Location::Reg(r)))
        }
        Operand::Other => {}
    }
}

fn write(op: &Operand, fx: &mut Effects) {
    match op {
        Operand::Reg(r) => fx.defs.push(Location::Reg(r)),
        Operand::Mem { addr_regs, addr } => {
            fx.uses.extend(addr_regs.iter().map(|r| Location::Reg(r)));
            fx.defs.push(Location::Mem(addr.clone()));
        }
        Operand::Other => {}
    }
}

/// Uses, definitions and kills of one instruction, from a fixed mnemonic
/// table. Unlisted mnemonics read every operand and, with two or more
/// operands, also write the first.
pub fn instruction_effects(ins: &Instruction) -> Effects {
    let ops: Vec<Operand> = ins.operands().iter().map(|t| classify(t)).collect();
    let m = ins.mnemonic.as_str();
    let mut fx = Effects::default();
    match (m, ops.as_slice()) {
        ("lea", [dst, src]) => {
            address_only(src, &mut fx);
            write(dst, &mut fx);
        }
        (_, [dst, src]) if MOVES.contains(&m) => {
            read(src, &mut fx);
            write(dst, &mut fx);
        }
        ("xor" | "sub", [Operand::Reg(a), Operand::Reg(b)]) if a == b => {
            // zeroing idiom
            fx.defs.push(Location::Reg(a));
        }
        (_, [dst, rest @ ..]) if ALU.contains(&m) && !rest.is_empty() => {
            for op in rest {
                read(op, &mut fx);
            }
            read(dst, &mut fx);
            write(dst, &mut fx);
        }
        (_, [op]) if UNARY.contains(&m) => {
            read(op, &mut fx);
            write(op, &mut fx);
        }
        _ if COMPARES.contains(&m) => ops.iter().for_each(|op| read(op, &mut fx)),
        ("push", _) => ops.iter().for_each(|op| read(op, &mut fx)),
        ("pop", [op]) => write(op, &mut fx),
        ("call", _) => {
            ops.iter().for_each(|op| read(op, &mut fx));
            fx.defs.push(Location::Reg("rax"));
            fx.kills
                .extend(CALLER_SAVED.iter().map(|r| Location::Reg(r)));
        }
        ("ret", _) => {}
        _ if m.starts_with('j') => ops.iter().for_each(|op| read(op, &mut fx)),
        (_, [dst, rest @ ..]) if !rest.is_empty() => {
            for op in rest {
                read(op, &mut fx);
            }
            read(dst, &mut fx);
            write(dst, &mut fx);
        }
        _ => ops.iter().for_each(|op| read(op, &mut fx)),
    }
    for d in &fx.defs {
        if !fx.kills.contains(d) {
            fx.kills.push(d.clone());
        }
    }
    fx
}

#[derive(Debug, Default)]
struct BlockSummary {
    upward_uses: BTreeSet<Location>,
    kills: BTreeSet<Location>,
    /// Locations whose last write in the block is a definition (not a clobber).
    live_defs: BTreeSet<Location>,
}

fn summarize(instructions: &[Instruction]) -> BlockSummary {
    let mut s = BlockSummary::default();
    for ins in instructions {
        let fx = instruction_effects(ins);
        for u in fx.uses {
            if !s.kills.contains(&u) {
                s.upward_uses.insert(u);
            }
        }
        for k in &fx.kills {
            s.kills.insert(k.clone());
            s.live_defs.remove(k);
        }
        s.live_defs.extend(fx.defs);
    }
    s
}

/// Edge `A -> B` (A ≠ B) when a location defined in `A` reaches an
/// upward-exposed use in `B` along CFG paths with no intervening kill.
pub fn build_ddg(f: &Function, cfg: &FlowGraph) -> FlowGraph {
    let n = cfg.len();
    let summaries: Vec<BlockSummary> = cfg
        .nodes()
        .iter()
        .map(|id| {
            f.block(id)
                .map(|b| summarize(&b.instructions))
                .unwrap_or_default()
        })
        .collect();
    let preds = cfg.predecessor_lists();

    type Defs = BTreeSet<(usize, Location)>;
    let mut out: Vec<Defs> = (0..n)
        .map(|b| {
            summaries[b]
                .live_defs
                .iter()
                .map(|l| (b, l.clone()))
                .collect()
        })
        .collect();
    let mut inn: Vec<Defs> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            let mut in_b = Defs::new();
            for &p in &preds[b] {
                in_b.extend(out[p].iter().cloned());
            }
            let mut out_b: Defs = in_b
                .iter()
                .filter(|(_, l)| !summaries[b].kills.contains(l))
                .cloned()
                .collect();
            out_b.extend(summaries[b].live_defs.iter().map(|l| (b, l.clone())));
            if out_b != out[b] {
                out[b] = out_b;
                changed = true;
            }
            inn[b] = in_b;
        }
    }

    let mut ddg = FlowGraph::new(EdgeType::Ddg, cfg.nodes().iter().cloned());
    for b in 0..n {
        let mut by_loc: BTreeMap<&Location, Vec<usize>> = BTreeMap::new();
        for (a, l) in &inn[b] {
            by_loc.entry(l).or_default().push(*a);
        }
        for u in &summaries[b].upward_uses {
            for &a in by_loc.get(u).into_iter().flatten() {
                if a != b {
                    ddg.add_edge_idx(a, b);
                }
            }
        }
    }
    ddg
}
