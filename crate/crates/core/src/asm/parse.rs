//! ASM-TEXT reader and canonical printer.
//!
//! ```text
//! file      := { funcdecl }
//! funcdecl  := "FUNC" SP name NL { blockdecl }
//! blockdecl := label ":" NL { instrline }
//! instrline := 2×SP mnemonic [ SP operands ] [ SP ";line=" INT ] NL
//! ```
//!
//! Blank lines are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use super::token::{
    is_block_terminator, is_conditional_jump, render_operand, split_operands, TokenizeError,
};
use super::{BasicBlock, Function, Instruction, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        ParseError {
            line,
            msg: msg.into(),
        }
    }
}

struct PendingBlock {
    id: String,
    line: usize,
    instructions: Vec<Instruction>,
    // line of each instruction, for error reporting
    lines: Vec<usize>,
}

struct PendingFunction {
    name: String,
    line: usize,
    blocks: Vec<PendingBlock>,
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut functions: Vec<PendingFunction> = Vec::new();
    let mut address = 0u64;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(name) = raw.strip_prefix("FUNC ") {
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(ParseError::new(lineno, "malformed FUNC declaration"));
            }
            functions.push(PendingFunction {
                name: name.to_string(),
                line: lineno,
                blocks: Vec::new(),
            });
        } else if let Some(body) = raw.strip_prefix("  ") {
            let func = functions
                .last_mut()
                .ok_or_else(|| ParseError::new(lineno, "instruction outside of a function"))?;
            let block = func
                .blocks
                .last_mut()
                .ok_or_else(|| ParseError::new(lineno, "instruction outside of a block"))?;
            let ins = parse_instruction(body, address).map_err(|e| ParseError::new(lineno, e))?;
            address += 1;
            block.instructions.push(ins);
            block.lines.push(lineno);
        } else if let Some(label) = raw.trim_end().strip_suffix(':') {
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(ParseError::new(
                    lineno,
                    format!("malformed block label {label:?}"),
                ));
            }
            let func = functions
                .last_mut()
                .ok_or_else(|| ParseError::new(lineno, "block outside of a function"))?;
            if func.blocks.iter().any(|b| b.id == label) {
                return Err(ParseError::new(
                    lineno,
                    format!("duplicate block label '{label}'"),
                ));
            }
            func.blocks.push(PendingBlock {
                id: label.to_string(),
                line: lineno,
                instructions: Vec::new(),
                lines: Vec::new(),
            });
        } else {
            return Err(ParseError::new(
                lineno,
                format!("unknown directive {:?}", raw.trim()),
            ));
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(functions.len());
    for f in functions {
        if !seen.insert(f.name.clone()) {
            return Err(ParseError::new(
                f.line,
                format!("duplicate function '{}'", f.name),
            ));
        }
        out.push(finish_function(f)?);
    }
    Ok(Program {
        functions: out,
        ..Program::default()
    })
}

fn parse_instruction(body: &str, address: u64) -> Result<Instruction, String> {
    if body.starts_with(char::is_whitespace) {
        return Err("instruction must be indented by exactly two spaces".into());
    }
    let (code, src_line) = match body.find(";line=") {
        Some(pos) => {
            let n = body[pos + 6..].trim();
            let n: u32 = n
                .parse()
                .map_err(|_| format!("bad line annotation {n:?}"))?;
            if n == 0 {
                return Err("line annotation must be positive".into());
            }
            (&body[..pos], Some(n))
        }
        None => (body, None),
    };
    if code.contains(';') {
        return Err(format!("unknown annotation in {code:?}"));
    }
    let code = code.trim();
    let (mnemonic, operands) = match code.split_once(' ') {
        Some((m, rest)) => (m, rest.trim()),
        None => (code, ""),
    };
    Instruction::new(mnemonic, operands, src_line, address)
        .map_err(|e: TokenizeError| e.to_string())
}

fn finish_function(f: PendingFunction) -> Result<Function, ParseError> {
    let entry = match f.blocks.first() {
        Some(b) => b.id.clone(),
        None => {
            return Err(ParseError::new(
                f.line,
                format!("function '{}' has no blocks", f.name),
            ))
        }
    };
    let labels: HashSet<&str> = f.blocks.iter().map(|b| b.id.as_str()).collect();
    let mut blocks = Vec::with_capacity(f.blocks.len());
    for (i, b) in f.blocks.iter().enumerate() {
        if b.instructions.is_empty() {
            return Err(ParseError::new(b.line, format!("empty block '{}'", b.id)));
        }
        for (ins, line) in b.instructions.iter().zip(&b.lines).rev().skip(1) {
            if is_block_terminator(&ins.mnemonic) {
                return Err(ParseError::new(
                    *line,
                    format!("'{}' must end its block", ins.mnemonic),
                ));
            }
        }
        let last = b.instructions.last().expect("non-empty");
        let last_line = *b.lines.last().expect("non-empty");
        let mut targets = Vec::new();
        if is_block_terminator(&last.mnemonic) && last.mnemonic != "ret" {
            let target = last.operand_text.trim();
            if !labels.contains(target) {
                return Err(ParseError::new(
                    last_line,
                    format!("undefined label '{target}'"),
                ));
            }
            targets.push(target.to_string());
        }
        let falls = last.mnemonic != "jmp" && last.mnemonic != "ret";
        debug_assert!(!is_conditional_jump(&last.mnemonic) || falls);
        let falls_through_to = if falls {
            f.blocks.get(i + 1).map(|n| n.id.clone())
        } else {
            None
        };
        blocks.push(BasicBlock {
            id: b.id.clone(),
            instructions: b.instructions.clone(),
            terminator_targets: targets,
            falls_through_to,
        });
    }
    Ok(Function {
        name: f.name,
        blocks,
        entry,
    })
}

/// Canonical ASM-TEXT rendering. `parse_program(&print_program(p))`
/// reproduces `p` up to constant spelling (constants print as lowercase hex).
pub fn print_program(p: &Program) -> String {
    let mut s = String::new();
    for f in &p.functions {
        let _ = writeln!(s, "FUNC {}", f.name);
        for b in &f.blocks {
            let _ = writeln!(s, "{}:", b.id);
            for ins in &b.instructions {
                s.push_str("  ");
                s.push_str(&ins.mnemonic);
                // Labels are case-sensitive; tokens are lowercased.
                let ops: Vec<String> = if is_block_terminator(&ins.mnemonic) {
                    split_operands(&ins.operand_text)
                        .into_iter()
                        .map(str::to_string)
                        .collect()
                } else {
                    split_operands(&ins.operand_text)
                        .into_iter()
                        .zip(ins.operands())
                        .map(|(raw, toks)| {
                            if toks.is_empty() {
                                raw.to_string()
                            } else {
                                render_operand(&toks)
                            }
                        })
                        .collect()
                };
                if !ops.is_empty() {
                    s.push(' ');
                    s.push_str(&ops.join(", "));
                }
                if let Some(line) = ins.src_line {
                    let _ = write!(s, " ;line={line}");
                }
                s.push('\n');
            }
        }
    }
    s
}
