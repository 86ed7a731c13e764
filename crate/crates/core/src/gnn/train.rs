use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward_cached};
use super::{
    sample_dropout_masks, Confusion, Dropout, GnnError, GnnParams, Metrics, ModelDims, TwinSample,
};
use crate::nn::{read_blob_header, read_blob_tensors, write_blob, Adam, AdamConfig, TensorList};

pub const GNN_MAGIC: &str = "bingo-gnn/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            adam: AdamConfig::default(),
            dropout: 0.5,
            max_epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::Config(m.into()));
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

fn label_of(s: &TwinSample, i: usize) -> Result<usize, GnnError> {
    s.label
        .map(|l| l.class_index())
        .ok_or(GnnError::Unlabeled(i))
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn loss_and_grads(
    params: &GnnParams,
    batch: &[&TwinSample],
    dropout: &Dropout<'_>,
) -> Result<(f64, GnnParams), GnnError> {
    if batch.is_empty() {
        return Err(GnnError::EmptyDataset);
    }
    let mut grads = params.zeros_like();
    let w = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let label = label_of(s, i)?;
        let mask = match dropout {
            Dropout::Off => None,
            Dropout::Masks(m) => Some(m.get(i).ok_or_else(|| {
                GnnError::ShapeMismatch("fewer dropout masks than samples".into())
            })?),
        };
        let (pred, cache) = forward_cached(params, s, mask)?;
        let p = if label == 1 { pred.p1 } else { pred.p0 };
        loss -= p.max(f64::MIN_POSITIVE).ln();
        backward(params, s, &cache, pred, label, w, &mut grads);
    }
    Ok((loss * w, grads))
}

/// Confusion matrix and rates of the eval-mode predictions.
pub fn evaluate(params: &GnnParams, samples: &[TwinSample]) -> Result<Metrics, GnnError> {
    if samples.is_empty() {
        return Err(GnnError::EmptyDataset);
    }
    let mut c = Confusion::default();
    for (i, s) in samples.iter().enumerate() {
        let label = label_of(s, i)?;
        let (pred, _) = forward_cached(params, s, None)?;
        c.record(label == 1, pred.is_security());
    }
    Ok(Metrics::from_confusion(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Adam over seeded shuffles of `train_set`; records the mean training loss
/// and the test metrics after every epoch.
pub fn train(
    params: &mut GnnParams,
    train_set: &[TwinSample],
    test_set: &[TwinSample],
    cfg: &TrainConfig,
) -> Result<History, GnnError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(GnnError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam, params);
    let width = 2 * params.dims.graph_width();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TwinSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let masks = sample_dropout_masks(batch.len(), width, cfg.dropout, &mut rng);
            let (loss, grads) = loss_and_grads(params, &batch, &Dropout::Masks(&masks))?;
            opt.step(params, &grads);
            total += loss * batch.len() as f64;
        }
        let test = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(params, test_set)?)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            test,
        });
    }
    Ok(history)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GnnError + '_ {
    move |source| GnnError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_model(
    path: &Path,
    params: &GnnParams,
    seed: u64,
    epoch: usize,
) -> Result<(), GnnError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let header = serde_json::json!({ "format": GNN_MAGIC, "dims": params.dims, "seed": seed, "epoch": epoch });
    write_blob(&mut w, GNN_MAGIC, header, params)?;
    w.flush().map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<GnnParams, GnnError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let header = read_blob_header(&mut r, GNN_MAGIC)?;
    let dims: ModelDims = serde_json::from_value(header["dims"].clone())
        .map_err(|e| GnnError::ShapeMismatch(format!("checkpoint dims: {e}")))?;
    let mut params = GnnParams::zeros(dims);
    read_blob_tensors(&mut r, &header, &mut params)?;
    Ok(params)
}
