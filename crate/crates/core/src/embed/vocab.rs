use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::EmbedError;
use crate::asm::Token;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const CLS: usize = 3;
pub const SEP: usize = 4;

pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"];

/// Token text to id. Ids are line numbers of the vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self, EmbedError> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(EmbedError::Vocab(format!("line {} must be {s}", i + 1)));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(EmbedError::Vocab(format!("line {} is empty", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(EmbedError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Specials followed by every distinct token text, sorted.
    pub fn from_corpus<'a>(tokens: impl IntoIterator<Item = &'a Token>) -> Self {
        let distinct: BTreeSet<&str> = tokens.into_iter().map(|t| t.text.as_str()).collect();
        let all = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(
                distinct
                    .into_iter()
                    .filter(|t| !SPECIALS.contains(t))
                    .map(str::to_string),
            )
            .collect();
        Vocab::from_tokens(all).expect("specials are in place")
    }

    pub fn parse(text: &str) -> Result<Self, EmbedError> {
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let text = std::fs::read_to_string(path).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Vocab::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, text: &str) -> usize {
        self.index.get(text).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}
