//! Command implementations behind the `bingo` binary.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::asm::{parse_program, ParseError, Program, Side};
use crate::embed::{
    pretrain, EmbedError, EncoderConfig, EncoderEmbedder, HashedEmbedder, NodeEmbedder,
    PretrainConfig, Vocab,
};
use crate::flow::{cpg_to_dot, FlowError, SliceConfig};
use crate::gnn::{
    evaluate, load_model, save_model, train, EpochRecord, GnnError, GnnParams, Metrics, ModelDims,
    TrainConfig, TwinSample,
};
use crate::patch::{
    build_twin_graph, patch_blocks_by_diff, patch_blocks_from_debug, read_twin_graph,
    split_dataset, write_twin_graph, DatasetManifest, Label, ManifestEntry, PatchError, Split,
    TwinGraph,
};
use crate::synth;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    ChangedLines {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{context}: {source}")]
    Patch { context: String, source: PatchError },
    #[error("{context}: {source}")]
    Gnn { context: String, source: GnnError },
    #[error("{context}: {source}")]
    Embed { context: String, source: EmbedError },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn patch_ctx(context: impl fmt::Display) -> impl FnOnce(PatchError) -> PipelineError {
    move |source| PipelineError::Patch {
        context: context.to_string(),
        source,
    }
}

fn gnn_ctx(context: impl fmt::Display) -> impl FnOnce(GnnError) -> PipelineError {
    move |source| PipelineError::Gnn {
        context: context.to_string(),
        source,
    }
}

fn embed_ctx(context: impl fmt::Display) -> impl FnOnce(EmbedError) -> PipelineError {
    move |source| PipelineError::Embed {
        context: context.to_string(),
        source,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io(path))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io(path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io(path))
}

pub fn load_program(path: &Path) -> Result<Program> {
    parse_program(&read(path)?).map_err(|source| PipelineError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// `hashed` or `encoder:DIR` (DIR holding `encoder.bin` and `vocab.txt`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderChoice {
    Hashed,
    Encoder(PathBuf),
}

impl FromStr for EmbedderChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            None if s == "hashed" => Ok(EmbedderChoice::Hashed),
            Some(("encoder", p)) if !p.is_empty() => Ok(EmbedderChoice::Encoder(PathBuf::from(p))),
            _ => Err(format!("expected 'hashed' or 'encoder:PATH', got {s:?}")),
        }
    }
}

impl EmbedderChoice {
    pub fn load(&self) -> Result<Box<dyn NodeEmbedder>> {
        match self {
            EmbedderChoice::Hashed => Ok(Box::new(HashedEmbedder::default())),
            EmbedderChoice::Encoder(dir) => Ok(Box::new(
                EncoderEmbedder::load(dir).map_err(embed_ctx(dir.display()))?,
            )),
        }
    }
}

/// Changed source lines, one `pre:N` or `post:N` per line; `#` starts a comment.
pub fn parse_changed_lines(path: &Path) -> Result<(BTreeSet<u32>, BTreeSet<u32>)> {
    let (mut pre, mut post) = (BTreeSet::new(), BTreeSet::new());
    for (i, raw) in read(path)?.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| PipelineError::ChangedLines {
            path: path.display().to_string(),
            line: i + 1,
            msg: msg.into(),
        };
        let (side, n) = line
            .split_once(':')
            .ok_or_else(|| err("expected pre:N or post:N"))?;
        let n: u32 = n
            .trim()
            .parse()
            .map_err(|_| err("line number is not an integer"))?;
        match side.trim() {
            "pre" => pre.insert(n),
            "post" => post.insert(n),
            _ => return Err(err("side must be 'pre' or 'post'")),
        };
    }
    Ok((pre, post))
}

#[derive(Debug, Clone)]
pub enum PatchSource {
    ChangedLines(PathBuf),
    Diff,
}

#[derive(Debug, Clone)]
pub struct ExtractArgs {
    pub pre: PathBuf,
    pub post: PathBuf,
    pub source: PatchSource,
    pub out_dir: PathBuf,
    pub label: Option<Label>,
    pub commit_id: String,
    pub slice: SliceConfig,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOutcome {
    pub written: Vec<PathBuf>,
    /// Problems confined to one function; its graph was skipped or truncated.
    pub function_warnings: Vec<String>,
    /// Informational notes that do not affect the exit status.
    pub notes: Vec<String>,
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn twin_file_name(commit_id: &str, function: &str) -> String {
    format!(
        "{}__{}.twin.json",
        file_stem(commit_id),
        file_stem(function)
    )
}

pub fn extract_twins(
    pre: &Program,
    post: &Program,
    source: &PatchSource,
    label: Option<Label>,
    slice: &SliceConfig,
) -> Result<(Vec<TwinGraph>, ExtractOutcome)> {
    let pbs = match source {
        PatchSource::Diff => {
            patch_blocks_by_diff(pre, post).map_err(patch_ctx("fingerprint diff"))?
        }
        PatchSource::ChangedLines(p) => {
            let (a, b) = parse_changed_lines(p)?;
            patch_blocks_from_debug(pre, post, &a, &b).map_err(patch_ctx(p.display()))?
        }
    };
    let mut outcome = ExtractOutcome::default();
    if pbs.is_empty() {
        outcome.notes.push("no patch blocks".into());
        return Ok((vec![], outcome));
    }
    let built = build_twin_graph(pre, post, &pbs, slice, label).map_err(patch_ctx("twin graph"))?;
    outcome.function_warnings = built
        .warnings
        .iter()
        .map(|w| format!("function '{}': {}", w.function, w.message))
        .collect();
    Ok((built.twins, outcome))
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<ExtractOutcome> {
    args.slice.validate()?;
    let pre = load_program(&args.pre)?.with_origin(args.commit_id.clone(), Side::PrePatch);
    let post = load_program(&args.post)?.with_origin(args.commit_id.clone(), Side::PostPatch);
    let (twins, mut outcome) = extract_twins(&pre, &post, &args.source, args.label, &args.slice)?;
    if !twins.is_empty() {
        create_dir(&args.out_dir)?;
    }
    for t in &twins {
        let path = args.out_dir.join(twin_file_name(&t.commit_id, &t.function));
        write_twin_graph(&path, t).map_err(patch_ctx(path.display()))?;
        outcome.written.push(path);
    }
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub split_ratio: f64,
    pub slice: SliceConfig,
}

/// Writes generated `asm/` pairs, `twins/` and `manifest.json` under `out_dir`.
pub fn cmd_synth(args: &SynthArgs) -> Result<DatasetManifest> {
    let asm_dir = args.out_dir.join("asm");
    let twin_dir = args.out_dir.join("twins");
    create_dir(&asm_dir)?;
    create_dir(&twin_dir)?;
    let mut entries = Vec::new();
    for s in synth::generate(args.count, args.seed) {
        write(&asm_dir.join(format!("{}.pre.asm", s.commit_id)), &s.pre)?;
        write(&asm_dir.join(format!("{}.post.asm", s.commit_id)), &s.post)?;
        let parse = |text: &str, side| {
            parse_program(text)
                .map(|p| p.with_origin(s.commit_id.clone(), side))
                .map_err(|source| PipelineError::Parse {
                    path: s.commit_id.clone(),
                    source,
                })
        };
        let (pre, post) = (
            parse(&s.pre, Side::PrePatch)?,
            parse(&s.post, Side::PostPatch)?,
        );
        let (twins, _) =
            extract_twins(&pre, &post, &PatchSource::Diff, Some(s.label), &args.slice)?;
        for t in twins {
            let name = twin_file_name(&t.commit_id, &t.function);
            let path = twin_dir.join(&name);
            write_twin_graph(&path, &t).map_err(patch_ctx(path.display()))?;
            entries.push(ManifestEntry {
                path: format!("twins/{name}"),
                commit_id: t.commit_id.clone(),
                label: s.label,
            });
        }
    }
    let manifest = DatasetManifest {
        entries,
        split_ratio: args.split_ratio,
        seed: args.seed,
    };
    write(&args.out_dir.join("manifest.json"), &manifest.to_json())?;
    Ok(manifest)
}

fn load_samples(
    base: &Path,
    entries: &[ManifestEntry],
    embedder: &dyn NodeEmbedder,
) -> Result<Vec<TwinSample>> {
    entries
        .iter()
        .map(|e| {
            let path = base.join(&e.path);
            let mut twin = read_twin_graph(&path).map_err(patch_ctx(path.display()))?;
            // the manifest is the source of truth for labels
            twin.label = Some(e.label);
            TwinSample::from_twin(&twin, embedder).map_err(gnn_ctx(path.display()))
        })
        .collect()
}

fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let m = DatasetManifest::load(path).map_err(patch_ctx(path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub embedder: EmbedderChoice,
    pub train: TrainConfig,
    pub split_ratio: Option<f64>,
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
    pub train_fraction: f64,
    pub max_commit_share: f64,
}

impl From<&Split> for SplitSummary {
    fn from(s: &Split) -> Self {
        SplitSummary {
            train: s.train.len(),
            test: s.test.len(),
            train_fraction: s.train_fraction,
            max_commit_share: s.max_commit_share,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub split: SplitSummary,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub final_test: Option<Metrics>,
}

fn split_for(manifest: &DatasetManifest, ratio: Option<f64>, seed: Option<u64>) -> Result<Split> {
    let mut m = manifest.clone();
    if let Some(r) = ratio {
        m.split_ratio = r;
    }
    if let Some(s) = seed {
        m.seed = s;
    }
    split_dataset(&m).map_err(patch_ctx("split"))
}

/// Splits by commit, trains, and writes `model.bin` and `history.json`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport> {
    let (manifest, base) = load_manifest(&args.manifest)?;
    let split = split_for(&manifest, args.split_ratio, args.split_seed)?;
    let embedder = args.embedder.load()?;
    let train_set = load_samples(&base, &split.train, embedder.as_ref())?;
    let test_set = load_samples(&base, &split.test, embedder.as_ref())?;
    let dims = ModelDims {
        input: embedder.dim(),
        ..ModelDims::default()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(args.train.seed);
    let mut params = GnnParams::init(dims, &mut rng);
    let history =
        train(&mut params, &train_set, &test_set, &args.train).map_err(gnn_ctx("training"))?;
    create_dir(&args.out_dir)?;
    let model = args.out_dir.join("model.bin");
    save_model(&model, &params, args.train.seed, history.epochs.len())
        .map_err(gnn_ctx(model.display()))?;
    let report = TrainReport {
        split: SplitSummary::from(&split),
        config: args.train,
        final_test: history.epochs.last().and_then(|e| e.test),
        epochs: history.epochs,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write(&args.out_dir.join("history.json"), &text)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    All,
    Train,
    Test,
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Subset::All),
            "train" => Ok(Subset::Train),
            "test" => Ok(Subset::Test),
            _ => Err(format!("expected all, train or test, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub embedder: EmbedderChoice,
    pub subset: Subset,
    pub split_ratio: Option<f64>,
    pub split_seed: Option<u64>,
    pub out: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Metrics> {
    let params = load_model(&args.checkpoint).map_err(gnn_ctx(args.checkpoint.display()))?;
    let (manifest, base) = load_manifest(&args.manifest)?;
    let entries = match args.subset {
        Subset::All => manifest.entries.clone(),
        Subset::Train => split_for(&manifest, args.split_ratio, args.split_seed)?.train,
        Subset::Test => split_for(&manifest, args.split_ratio, args.split_seed)?.test,
    };
    if entries.is_empty() {
        return Err(gnn_ctx(args.manifest.display())(GnnError::EmptyDataset));
    }
    let embedder = args.embedder.load()?;
    if embedder.dim() != params.dims.input {
        return Err(gnn_ctx(args.checkpoint.display())(GnnError::ShapeMismatch(
            format!(
                "model expects {}-dim node vectors, embedder gives {}",
                params.dims.input,
                embedder.dim()
            ),
        )));
    }
    let samples = load_samples(&base, &entries, embedder.as_ref())?;
    let metrics = evaluate(&params, &samples).map_err(gnn_ctx("evaluation"))?;
    let mut text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    text.push('\n');
    write(&args.out, &text)?;
    Ok(metrics)
}

/// Writes `pre.dot` and `post.dot` for one twin graph.
pub fn cmd_export_dot(twin: &Path, out_dir: &Path) -> Result<[PathBuf; 2]> {
    let t = read_twin_graph(twin).map_err(patch_ctx(twin.display()))?;
    create_dir(out_dir)?;
    let pre = out_dir.join("pre.dot");
    let post = out_dir.join("post.dot");
    write(
        &pre,
        &cpg_to_dot(&t.pre_graph, &format!("{}_pre", t.function)),
    )?;
    write(
        &post,
        &cpg_to_dot(&t.post_graph, &format!("{}_post", t.function)),
    )?;
    Ok([pre, post])
}

#[derive(Debug, Clone)]
pub struct PretrainArgs {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
}

/// Builds a vocabulary from the blocks of every input, pretrains an encoder
/// and writes `encoder.bin` and `vocab.txt`.
pub fn cmd_pretrain(args: &PretrainArgs) -> Result<Vec<f64>> {
    let mut corpus = Vec::new();
    for p in &args.inputs {
        let prog = load_program(p)?;
        corpus.extend(
            prog.functions
                .iter()
                .flat_map(|f| &f.blocks)
                .map(|b| b.token_rows()),
        );
    }
    if corpus.is_empty() {
        return Err(PipelineError::Usage("no basic blocks in the inputs".into()));
    }
    let vocab = Vocab::from_corpus(corpus.iter().flatten().flatten());
    let mut cfg = PretrainConfig::new(EncoderConfig::new(vocab.len()));
    cfg.steps = args.steps;
    cfg.seed = args.seed;
    cfg.adam.lr = args.lr;
    let (encoder, report) = pretrain(&corpus, &vocab, &cfg).map_err(embed_ctx("pretraining"))?;
    create_dir(&args.out_dir)?;
    EncoderEmbedder::new(encoder, vocab)
        .and_then(|e| e.save(&args.out_dir))
        .map_err(embed_ctx(args.out_dir.display()))?;
    Ok(report.losses.into_iter().map(|(_, l)| l).collect())
}
