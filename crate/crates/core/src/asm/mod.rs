//! Assembly model: programs, functions, basic blocks and instructions,
//! parsed from the line-oriented ASM-TEXT format.

mod fingerprint;
mod parse;
mod token;

pub use fingerprint::block_fingerprint;
pub use parse::{parse_program, print_program, ParseError};
pub use token::{
    canonical_constant, is_block_terminator, is_branch, is_conditional_jump, is_register,
    register_family, render_operand, split_operands, tokenize_instruction, Token, TokenKind,
    TokenizeError, BRANCH_MNEMONICS, OPERATORS, RESERVED_WORDS,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub mnemonic: String,
    pub operand_text: String,
    pub tokens: Vec<Token>,
    /// Source line from the `;line=` debug annotation.
    pub src_line: Option<u32>,
    pub address: u64,
}

impl Instruction {
    pub fn new(
        mnemonic: &str,
        operand_text: &str,
        src_line: Option<u32>,
        address: u64,
    ) -> Result<Self, TokenizeError> {
        let tokens = tokenize_instruction(mnemonic, operand_text)?;
        Ok(Instruction {
            mnemonic: tokens[0].text.clone(),
            operand_text: operand_text.trim().to_string(),
            tokens,
            src_line,
            address,
        })
    }

    /// Operand tokens grouped per comma-separated operand.
    pub fn operands(&self) -> Vec<Vec<Token>> {
        split_operands(&self.operand_text)
            .into_iter()
            .map(|op| {
                tokenize_instruction(&self.mnemonic, op)
                    .map(|mut t| t.split_off(1))
                    .unwrap_or_default()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: String,
    pub instructions: Vec<Instruction>,
    pub terminator_targets: Vec<String>,
    pub falls_through_to: Option<String>,
}

impl BasicBlock {
    /// CFG successors in a fixed order: branch targets, then fall-through.
    pub fn successors(&self) -> impl Iterator<Item = &str> {
        self.terminator_targets
            .iter()
            .map(String::as_str)
            .chain(self.falls_through_to.as_deref())
    }

    pub fn token_rows(&self) -> Vec<Vec<Token>> {
        self.instructions.iter().map(|i| i.tokens.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
    pub entry: String,
}

impl Function {
    pub fn block(&self, id: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn block_index(&self, id: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Side {
    #[default]
    PrePatch,
    PostPatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub functions: Vec<Function>,
    pub commit_id: String,
    pub side: Side,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn with_origin(mut self, commit_id: impl Into<String>, side: Side) -> Self {
        self.commit_id = commit_id.into();
        self.side = side;
        self
    }
}
