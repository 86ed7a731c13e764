//! Node and edge attributes for the graph model.
//!
//! [`HashedEmbedder`] is the deterministic default. [`EncoderEmbedder`] wraps
//! a small transformer encoder pretrained with masked-token, context-window
//! and def-use ordering tasks.

mod encoder;
mod pretrain;
mod tasks;
mod vocab;

pub use encoder::{Encoder, EncoderConfig, EncoderParams, ForwardCache};
pub use pretrain::{
    load_encoder, make_example, pretrain, save_encoder, EncoderEmbedder, PretrainConfig,
    PretrainReport, ENC_MAGIC,
};
pub use tasks::{
    block_sequence, make_cwp_pairs, make_dup_pairs, make_mlm_batch, pair_sequence, CwpPairs,
    PretrainBatch, PretrainTask, Sequence, Targets,
};
pub use vocab::{Vocab, CLS, MASK, PAD, SEP, SPECIALS, UNK};

use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::Array1;
use thiserror::Error;

use crate::asm::{BasicBlock, Token};
use crate::flow::{CpgEdge, EdgeTypeVector};
use crate::nn::BlobError;

pub const EMBED_DIM: usize = 128;

const BUCKET_SEED: u64 = 0x6269_6e67_6f5f_6862;

pub type NodeEmbedding = Array1<f64>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("sequence has no maskable tokens")]
    EmptySequence,
    #[error("need at least 2 instructions, got {0}")]
    TooShort(usize),
    #[error("context window must be at least 1")]
    ZeroWindow,
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("pretraining corpus has no usable blocks")]
    EmptyCorpus,
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Maps one block's instruction token rows to a fixed-width vector.
pub trait NodeEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, instructions: &[Vec<Token>]) -> NodeEmbedding;
}

/// Bag of tokens hashed into `dim` buckets, then L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dim: EMBED_DIM }
    }
}

pub fn token_bucket(text: &str, dim: usize) -> usize {
    let mut h = FnvHasher::with_key(BUCKET_SEED);
    h.write(text.as_bytes());
    (h.finish() % dim as u64) as usize
}

impl NodeEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, instructions: &[Vec<Token>]) -> NodeEmbedding {
        let mut v: NodeEmbedding = Array1::zeros(self.dim);
        for t in instructions.iter().flatten() {
            v[token_bucket(&t.text, self.dim)] += 1.0;
        }
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        v
    }
}

pub fn hashed_embed(block: &BasicBlock) -> NodeEmbedding {
    HashedEmbedder::default().embed(&block.token_rows())
}

pub fn edge_type_vector(edge: &CpgEdge) -> EdgeTypeVector {
    edge.types
}
