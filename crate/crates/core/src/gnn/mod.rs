//! Siamese multi-edge-type graph convolution classifier.

mod metrics;
mod model;
mod train;

pub use metrics::{Confusion, Metrics};
pub use model::{
    conv_forward, model_forward, pool, sample_dropout_masks, Dropout, GnnParams, ModelDims,
    Prediction,
};
pub use train::{
    evaluate, load_model, loss_and_grads, save_model, train, EpochRecord, History, TrainConfig,
    GNN_MAGIC,
};

use ndarray::Array2;
use thiserror::Error;

use crate::embed::NodeEmbedder;
use crate::flow::{Cpg, EdgeType};
use crate::nn::BlobError;
use crate::patch::{Label, TwinGraph};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {0} has no label")]
    Unlabeled(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Directed edges per type; `(src, dst)` indices below `n`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    pub n: usize,
    pub edges: [Vec<(usize, usize)>; 3],
}

impl Adjacency {
    pub fn from_cpg(cpg: &Cpg) -> Self {
        let mut edges: [Vec<(usize, usize)>; 3] = Default::default();
        for t in EdgeType::ALL {
            edges[t.index()] = cpg.edges_of(t).collect();
        }
        Adjacency {
            n: cpg.nodes.len(),
            edges,
        }
    }
}

/// One side of a twin: adjacency plus the node matrix (`n × embed_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSide {
    pub adj: Adjacency,
    pub x: Array2<f64>,
}

impl GraphSide {
    pub fn new(adj: Adjacency, x: Array2<f64>) -> Result<Self, GnnError> {
        if adj.n == 0 {
            return Err(GnnError::EmptyGraph);
        }
        if x.nrows() != adj.n {
            return Err(GnnError::ShapeMismatch(format!(
                "{} node rows for {} nodes",
                x.nrows(),
                adj.n
            )));
        }
        if let Some(&(s, d)) = adj
            .edges
            .iter()
            .flatten()
            .find(|&&(s, d)| s >= adj.n || d >= adj.n)
        {
            return Err(GnnError::ShapeMismatch(format!(
                "edge ({s}, {d}) outside {} nodes",
                adj.n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GnnError::ShapeMismatch("non-finite node attribute".into()));
        }
        Ok(GraphSide { adj, x })
    }

    pub fn from_cpg(cpg: &Cpg, embedder: &dyn NodeEmbedder) -> Result<Self, GnnError> {
        let mut x = Array2::zeros((cpg.nodes.len(), embedder.dim()));
        for (i, n) in cpg.nodes.iter().enumerate() {
            x.row_mut(i).assign(&embedder.embed(&n.instructions));
        }
        GraphSide::new(Adjacency::from_cpg(cpg), x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinSample {
    pub pre: GraphSide,
    pub post: GraphSide,
    pub label: Option<Label>,
}

impl TwinSample {
    pub fn from_twin(t: &TwinGraph, embedder: &dyn NodeEmbedder) -> Result<Self, GnnError> {
        Ok(TwinSample {
            pre: GraphSide::from_cpg(&t.pre_graph, embedder)?,
            post: GraphSide::from_cpg(&t.post_graph, embedder)?,
            label: t.label,
        })
    }

    pub fn swapped(&self) -> Self {
        TwinSample {
            pre: self.post.clone(),
            post: self.pre.clone(),
            label: self.label,
        }
    }
}
