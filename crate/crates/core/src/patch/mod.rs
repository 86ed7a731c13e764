//! Patch-related block extraction, twin-graph assembly and dataset manifests.

mod diff;
mod json;
mod manifest;
mod twin;

pub use diff::{
    patch_blocks_by_diff, patch_blocks_from_debug, BlockRef, PatchBlockSet, Provenance,
};
pub use json::{read_twin_graph, twin_from_json, twin_to_json, write_twin_graph, TWIN_VERSION};
pub use manifest::{split_dataset, DatasetManifest, ManifestEntry, Split};
pub use twin::{build_twin_graph, Label, TwinBuild, TwinGraph, TwinWarning};

use thiserror::Error;

use crate::flow::FlowError;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error(
        "function '{function}' lacks debug line info ({annotated}/{total} instructions annotated)"
    )]
    MissingDebugInfo {
        function: String,
        annotated: usize,
        total: usize,
    },
    #[error("no function names in common between the two programs")]
    NoCommonFunctions,
    #[error("patch block set is empty on both sides")]
    EmptyPatch,
    #[error("dataset has a single commit and cannot be split")]
    SingleCommit,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadSplitRatio(f64),
    #[error("twin graph schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
