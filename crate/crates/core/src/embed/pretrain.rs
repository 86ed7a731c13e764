use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    block_sequence, make_cwp_pairs, make_dup_pairs, make_mlm_batch, pair_sequence, EmbedError,
    Encoder, EncoderConfig, EncoderParams, NodeEmbedder, PretrainBatch, PretrainTask, Targets,
    Vocab,
};
use crate::asm::Token;
use crate::nn::{read_blob_header, read_blob_tensors, write_blob, Adam, AdamConfig, TensorList};

pub const ENC_MAGIC: &str = "bingo-enc/1";

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub steps: usize,
    /// Examples averaged per optimizer step.
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Tasks cycled through, one per step.
    pub tasks: Vec<PretrainTask>,
}

impl PretrainConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        PretrainConfig {
            encoder,
            steps: 2000,
            batch: 1,
            seed: 0,
            adam: AdamConfig::default(),
            tasks: vec![PretrainTask::Mlm, PretrainTask::Cwp, PretrainTask::Dup],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PretrainReport {
    /// Mean loss of each step with the task it trained.
    pub losses: Vec<(PretrainTask, f64)>,
}

/// Draws one training example for `task` from a block, or `None` when the
/// block is too short for it.
pub fn make_example<R: Rng>(
    task: PretrainTask,
    block: &[Vec<Token>],
    vocab: &Vocab,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<Option<PretrainBatch>, EmbedError> {
    let pair = |a: usize, b: usize, label: bool| PretrainBatch {
        sequence: pair_sequence(vocab, &block[a], &block[b], cfg.max_seq),
        task,
        targets: Targets::Binary(label),
    };
    match task {
        PretrainTask::Mlm => {
            let seq = block_sequence(vocab, block, cfg.max_seq);
            match make_mlm_batch(&seq, cfg.mask_prob, rng) {
                Ok(b) => Ok(Some(b)),
                Err(EmbedError::EmptySequence) => Ok(None),
                Err(e) => Err(e),
            }
        }
        _ if block.len() < 2 => Ok(None),
        // Blocks without a far pair would only ever teach the positive class.
        PretrainTask::Cwp if block.len() < cfg.cwp_window + 2 => Ok(None),
        PretrainTask::Cwp => {
            let want = rng.gen_bool(0.5);
            let pairs = make_cwp_pairs(block.len(), cfg.cwp_window, rng)?.pairs;
            let same: Vec<_> = pairs.into_iter().filter(|p| p.2 == want).collect();
            let &(a, b, label) = same.choose(rng).expect("both classes present");
            Ok(Some(pair(a, b, label)))
        }
        PretrainTask::Dup => {
            let (a, b, label) = make_dup_pairs(block.len(), 1, rng)?[0];
            Ok(Some(pair(a, b, label)))
        }
    }
}

/// Trains a fresh encoder on token rows of basic blocks.
pub fn pretrain(
    corpus: &[Vec<Vec<Token>>],
    vocab: &Vocab,
    cfg: &PretrainConfig,
) -> Result<(Encoder, PretrainReport), EmbedError> {
    if cfg.encoder.vocab_size != vocab.len() {
        return Err(EmbedError::Config(format!(
            "vocab_size {} but vocabulary has {}",
            cfg.encoder.vocab_size,
            vocab.len()
        )));
    }
    if corpus.iter().all(|b| b.is_empty()) || cfg.tasks.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc = Encoder::new(cfg.encoder, &mut rng)?;
    let mut opt = Adam::new(cfg.adam, &enc.params);
    let mut report = PretrainReport::default();
    let at_least =
        |n: usize| -> Vec<&Vec<Vec<Token>>> { corpus.iter().filter(|b| b.len() >= n).collect() };
    let (any, multi, wide) = (
        at_least(1),
        at_least(2),
        at_least(cfg.encoder.cwp_window + 2),
    );
    for step in 0..cfg.steps {
        let task = cfg.tasks[step % cfg.tasks.len()];
        let pool = match task {
            PretrainTask::Mlm => &any,
            PretrainTask::Cwp => &wide,
            PretrainTask::Dup => &multi,
        };
        if pool.is_empty() {
            continue;
        }
        let mut examples = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch.max(1) * 4 {
            if examples.len() == cfg.batch.max(1) {
                break;
            }
            let block = pool[rng.gen_range(0..pool.len())];
            if let Some(b) = make_example(task, block, vocab, &cfg.encoder, &mut rng)? {
                examples.push(b);
            }
        }
        if examples.is_empty() {
            continue;
        }
        let mut grads: EncoderParams = enc.params.zeros_like();
        let w = 1.0 / examples.len() as f64;
        let loss: f64 = examples
            .iter()
            .map(|b| enc.accumulate(b, w, &mut grads))
            .sum::<f64>()
            * w;
        opt.step(&mut enc.params, &grads);
        report.losses.push((task, loss));
    }
    Ok((enc, report))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_encoder(path: &Path, enc: &Encoder) -> Result<(), EmbedError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let header = serde_json::json!({ "format": ENC_MAGIC, "config": enc.config });
    write_blob(&mut w, ENC_MAGIC, header, &enc.params)?;
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn load_encoder(path: &Path) -> Result<Encoder, EmbedError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let header = read_blob_header(&mut r, ENC_MAGIC)?;
    let config: EncoderConfig = serde_json::from_value(header["config"].clone())
        .map_err(|e| EmbedError::Config(e.to_string()))?;
    config.validate()?;
    let mut params = EncoderParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
    read_blob_tensors(&mut r, &header, &mut params)?;
    Ok(Encoder { config, params })
}

/// Node embeddings from a pretrained encoder.
#[derive(Debug, Clone)]
pub struct EncoderEmbedder {
    pub encoder: Encoder,
    pub vocab: Vocab,
}

impl EncoderEmbedder {
    pub fn new(encoder: Encoder, vocab: Vocab) -> Result<Self, EmbedError> {
        if encoder.config.vocab_size != vocab.len() {
            return Err(EmbedError::Config(format!(
                "checkpoint vocab_size {} but vocabulary has {} entries",
                encoder.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(EncoderEmbedder { encoder, vocab })
    }

    /// Loads `encoder.bin` and `vocab.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, EmbedError> {
        let encoder = load_encoder(&dir.join("encoder.bin"))?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        EncoderEmbedder::new(encoder, vocab)
    }

    pub fn save(&self, dir: &Path) -> Result<(), EmbedError> {
        save_encoder(&dir.join("encoder.bin"), &self.encoder)?;
        let p = dir.join("vocab.txt");
        std::fs::write(&p, self.vocab.to_text()).map_err(io_err(&p))
    }
}

impl NodeEmbedder for EncoderEmbedder {
    fn dim(&self) -> usize {
        self.encoder.config.embed_dim
    }

    fn embed(&self, instructions: &[Vec<Token>]) -> Array1<f64> {
        self.encoder.encode(&block_sequence(
            &self.vocab,
            instructions,
            self.encoder.config.max_seq,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::tokenize_instruction;

    fn corpus() -> Vec<Vec<Vec<Token>>> {
        let ins = |m: &str, o: &str| tokenize_instruction(m, o).unwrap();
        vec![
            vec![
                ins("mov", "rax, qword [rsp+0x8]"),
                ins("add", "rax, 0x1"),
                ins("ret", ""),
            ],
            vec![
                ins("push", "rbp"),
                ins("mov", "rbp, rsp"),
                ins("sub", "rsp, 0x20"),
                ins("mov", "qword [rbp-0x8], rdi"),
            ],
        ]
    }

    fn tiny(vocab: &Vocab) -> PretrainConfig {
        let enc = EncoderConfig {
            layers: 1,
            heads: 2,
            embed_dim: 16,
            vocab_size: vocab.len(),
            max_seq: 32,
            ..EncoderConfig::new(0)
        };
        PretrainConfig {
            steps: 30,
            ..PretrainConfig::new(enc)
        }
    }

    #[test]
    fn pretraining_is_seeded_and_checkpoints_round_trip() {
        let c = corpus();
        let vocab = Vocab::from_corpus(c.iter().flatten().flatten());
        let cfg = tiny(&vocab);
        let (a, ra) = pretrain(&c, &vocab, &cfg).unwrap();
        let (b, rb) = pretrain(&c, &vocab, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(ra.losses.len(), 30);
        assert!(ra.losses.iter().any(|l| l.0 == PretrainTask::Cwp));

        let dir = tempfile::tempdir().unwrap();
        let emb = EncoderEmbedder::new(a, vocab).unwrap();
        emb.save(dir.path()).unwrap();
        let back = EncoderEmbedder::load(dir.path()).unwrap();
        assert_eq!(back.encoder.config, emb.encoder.config);
        let x = emb.embed(&c[0]);
        let y = back.embed(&c[0]);
        assert_eq!(x.len(), 16);
        // f32 storage
        assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-4));
    }

    #[test]
    fn vocab_size_must_match() {
        let c = corpus();
        let vocab = Vocab::from_corpus(c.iter().flatten().flatten());
        let mut cfg = tiny(&vocab);
        cfg.encoder.vocab_size += 1;
        assert!(matches!(
            pretrain(&c, &vocab, &cfg),
            Err(EmbedError::Config(_))
        ));
    }
}
