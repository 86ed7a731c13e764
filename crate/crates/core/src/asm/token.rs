//! Instruction tokenizer.
//!
//! An instruction is split into its opcode followed by operand tokens. Each
//! comma-separated operand is broken further into registers, constants,
//! size keywords and single-character operators so that compound memory
//! operands such as `qword [rsp+0x58]` do not become one opaque token.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Opcode,
    Register,
    Constant,
    ReservedWord,
    Operator,
    /// Branch or call target (block label / function name).
    Symbol,
    /// Sentinels used only by the encoder: `[PAD]`, `[UNK]`, `[MASK]`, `[CLS]`, `[SEP]`.
    Special,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Opcode => "opcode",
            TokenKind::Register => "register",
            TokenKind::Constant => "constant",
            TokenKind::ReservedWord => "reserved_word",
            TokenKind::Operator => "operator",
            TokenKind::Symbol => "symbol",
            TokenKind::Special => "special",
        }
    }

    pub fn parse(s: &str) -> Option<TokenKind> {
        Some(match s {
            "opcode" => TokenKind::Opcode,
            "register" => TokenKind::Register,
            "constant" => TokenKind::Constant,
            "reserved_word" => TokenKind::ReservedWord,
            "operator" => TokenKind::Operator,
            "symbol" => TokenKind::Symbol,
            "special" => TokenKind::Special,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        Token {
            text: text.into(),
            kind,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{:?}", self.text, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("empty mnemonic")]
    EmptyMnemonic,
    #[error("malformed mnemonic {0:?}")]
    BadMnemonic(String),
    #[error("invalid character {ch:?} in operand {operand:?}")]
    InvalidChar { ch: char, operand: String },
    #[error("empty operand in {0:?}")]
    EmptyOperand(String),
    #[error("malformed constant {0:?}")]
    BadConstant(String),
    #[error("unrecognized word {word:?} in operand {operand:?}")]
    UnknownWord { word: String, operand: String },
}

pub const RESERVED_WORDS: &[&str] = &["byte", "word", "dword", "qword", "ptr"];

pub const OPERATORS: &[char] = &['+', '-', '*', '[', ']'];

/// Mnemonics that end a basic block or name a code target.
pub const BRANCH_MNEMONICS: &[&str] = &[
    "jmp", "je", "jne", "jle", "jl", "jge", "jg", "jz", "jnz", "call", "ret",
];

pub fn is_branch(mnemonic: &str) -> bool {
    BRANCH_MNEMONICS.contains(&mnemonic)
}

/// Branches that terminate a block (everything except `call`).
pub fn is_block_terminator(mnemonic: &str) -> bool {
    is_branch(mnemonic) && mnemonic != "call"
}

pub fn is_conditional_jump(mnemonic: &str) -> bool {
    is_block_terminator(mnemonic) && mnemonic != "jmp" && mnemonic != "ret"
}

/// Maps any x86-64 register name to its full-width family name
/// (`eax` -> `rax`, `r9b` -> `r9`). Returns `None` for non-registers.
pub fn register_family(name: &str) -> Option<&'static str> {
    const LEGACY: &[(&str, [&str; 5])] = &[
        ("rax", ["eax", "ax", "al", "ah", ""]),
        ("rbx", ["ebx", "bx", "bl", "bh", ""]),
        ("rcx", ["ecx", "cx", "cl", "ch", ""]),
        ("rdx", ["edx", "dx", "dl", "dh", ""]),
        ("rsi", ["esi", "si", "sil", "", ""]),
        ("rdi", ["edi", "di", "dil", "", ""]),
        ("rsp", ["esp", "sp", "spl", "", ""]),
        ("rbp", ["ebp", "bp", "bpl", "", ""]),
        ("rip", ["eip", "ip", "", "", ""]),
    ];
    for (family, subs) in LEGACY {
        if name == *family || subs.iter().any(|s| !s.is_empty() && *s == name) {
            return Some(family);
        }
    }
    const EXTENDED: [&str; 8] = ["r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15"];
    for family in EXTENDED {
        if let Some(rest) = name.strip_prefix(family) {
            if matches!(rest, "" | "d" | "w" | "b") {
                return Some(family);
            }
        }
    }
    const XMM: [&str; 16] = [
        "xmm0", "xmm1", "xmm2", "xmm3", "xmm4", "xmm5", "xmm6", "xmm7", "xmm8", "xmm9", "xmm10",
        "xmm11", "xmm12", "xmm13", "xmm14", "xmm15",
    ];
    XMM.iter().find(|x| **x == name).copied()
}

pub fn is_register(name: &str) -> bool {
    register_family(name).is_some()
}

fn is_constant(word: &str) -> bool {
    if let Some(hex) = word.strip_prefix("0x") {
        !hex.is_empty() && hex.bytes().all(|b| b.is_ascii_hexdigit())
    } else {
        !word.is_empty() && word.bytes().all(|b| b.is_ascii_digit())
    }
}

fn is_symbol(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits an operand list on commas and trims each operand.
pub fn split_operands(operand_text: &str) -> Vec<&str> {
    if operand_text.trim().is_empty() {
        return Vec::new();
    }
    operand_text.split(',').map(str::trim).collect()
}

pub fn tokenize_instruction(
    mnemonic: &str,
    operand_text: &str,
) -> Result<Vec<Token>, TokenizeError> {
    let mnemonic = mnemonic.trim().to_ascii_lowercase();
    if mnemonic.is_empty() {
        return Err(TokenizeError::EmptyMnemonic);
    }
    if !mnemonic.starts_with(|c: char| c.is_ascii_lowercase())
        || !mnemonic
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '.' || c == '_')
    {
        return Err(TokenizeError::BadMnemonic(mnemonic));
    }
    let branch = is_branch(&mnemonic);
    let mut tokens = vec![Token::new(mnemonic, TokenKind::Opcode)];
    for operand in split_operands(operand_text) {
        tokenize_operand(operand, branch, &mut tokens)?;
    }
    Ok(tokens)
}

fn tokenize_operand(
    operand: &str,
    branch: bool,
    out: &mut Vec<Token>,
) -> Result<(), TokenizeError> {
    let lowered = operand.to_ascii_lowercase();
    if lowered.trim().is_empty() {
        return Err(TokenizeError::EmptyOperand(operand.to_string()));
    }
    if let Some(ch) = lowered.chars().find(|c| {
        !(c.is_ascii_lowercase()
            || c.is_ascii_digit()
            || *c == '_'
            || *c == ' '
            || OPERATORS.contains(c))
    }) {
        return Err(TokenizeError::InvalidChar {
            ch,
            operand: operand.to_string(),
        });
    }

    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Token>| -> Result<(), TokenizeError> {
        if word.is_empty() {
            return Ok(());
        }
        let w = std::mem::take(word);
        let kind = classify_word(&w, branch).ok_or_else(|| {
            if w.starts_with(|c: char| c.is_ascii_digit()) {
                TokenizeError::BadConstant(w.clone())
            } else {
                TokenizeError::UnknownWord {
                    word: w.clone(),
                    operand: operand.to_string(),
                }
            }
        })?;
        out.push(Token::new(w, kind));
        Ok(())
    };
    for c in lowered.chars() {
        if c == ' ' {
            flush(&mut word, out)?;
        } else if OPERATORS.contains(&c) {
            flush(&mut word, out)?;
            out.push(Token::new(c.to_string(), TokenKind::Operator));
        } else {
            word.push(c);
        }
    }
    flush(&mut word, out)
}

fn classify_word(word: &str, branch: bool) -> Option<TokenKind> {
    if is_register(word) {
        Some(TokenKind::Register)
    } else if RESERVED_WORDS.contains(&word) {
        Some(TokenKind::ReservedWord)
    } else if word.starts_with(|c: char| c.is_ascii_digit()) {
        is_constant(word).then_some(TokenKind::Constant)
    } else if branch && is_symbol(word) {
        Some(TokenKind::Symbol)
    } else {
        None
    }
}

/// Renders one operand's tokens canonically: words separated by a single
/// space, no spaces around operators, constants as lowercase hex.
pub fn render_operand(tokens: &[Token]) -> String {
    let mut s = String::new();
    let mut prev: Option<&Token> = None;
    for t in tokens {
        let word = t.kind != TokenKind::Operator;
        if let Some(p) = prev {
            let prev_closes = p.kind != TokenKind::Operator || p.text == "]";
            if prev_closes && (word || t.text == "[") {
                s.push(' ');
            }
        }
        if t.kind == TokenKind::Constant {
            s.push_str(&canonical_constant(&t.text));
        } else {
            s.push_str(&t.text);
        }
        prev = Some(t);
    }
    s
}

/// Lowercase hex rendering of a constant token; values too wide for `u128`
/// are left as written.
pub fn canonical_constant(text: &str) -> String {
    if text.starts_with("0x") {
        return text.to_ascii_lowercase();
    }
    match text.parse::<u128>() {
        Ok(v) => format!("{v:#x}"),
        Err(_) => text.to_string(),
    }
}
