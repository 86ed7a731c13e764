use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bingo::flow::SliceConfig;
use bingo::gnn::TrainConfig;
use bingo::nn::AdamConfig;
use bingo::patch::Label;
use bingo::pipeline::{
    cmd_eval, cmd_export_dot, cmd_extract, cmd_pretrain, cmd_synth, cmd_train, EmbedderChoice,
    EvalArgs, ExtractArgs, PatchSource, PipelineError, PretrainArgs, Subset, SynthArgs, TrainArgs,
};

/// Binary security-patch detection over ASM-TEXT listings.
#[derive(Parser)]
#[command(name = "bingo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct SliceFlags {
    /// Maximum hop distance from context nodes to the patch.
    #[arg(long, default_value_t = 2)]
    slice_stride: usize,
    /// Wall-clock budget for slicing one function, in seconds.
    #[arg(long, default_value_t = 900)]
    time_limit_s: u64,
}

impl SliceFlags {
    fn config(self) -> Result<SliceConfig, PipelineError> {
        Ok(SliceConfig::new(self.slice_stride, self.time_limit_s)?)
    }
}

#[derive(Args, Clone)]
struct SplitFlags {
    /// Train fraction of the commit-disjoint split (default: manifest value).
    #[arg(long)]
    split: Option<f64>,
    /// Seed for the split and training (default: manifest seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build twin graphs for every function a patch touches.
    Extract {
        pre: PathBuf,
        post: PathBuf,
        /// Changed source lines (`pre:N` / `post:N` per line).
        #[arg(long, conflicts_with = "diff", required_unless_present = "diff")]
        lines: Option<PathBuf>,
        /// Locate patch blocks by fingerprint diff instead of debug lines.
        #[arg(long)]
        diff: bool,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_parser = parse_label)]
        label: Option<Label>,
        #[arg(long, default_value = "local")]
        commit: String,
        #[command(flatten)]
        slice: SliceFlags,
    },
    /// Train the classifier on a dataset manifest.
    Train {
        manifest: PathBuf,
        #[arg(long, short, default_value = "run")]
        out: PathBuf,
        #[arg(long, default_value = "hashed")]
        embedder: EmbedderChoice,
        #[command(flatten)]
        split: SplitFlags,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 0.5)]
        dropout: f64,
    },
    /// Score a checkpoint on a manifest and write metrics JSON.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value = "hashed")]
        embedder: EmbedderChoice,
        /// Which entries to score: all, train or test.
        #[arg(long, default_value = "all")]
        subset: Subset,
        #[command(flatten)]
        split: SplitFlags,
        #[arg(long, short, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Render a twin graph as pre.dot and post.dot.
    ExportDot {
        twin: PathBuf,
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Generate a labeled synthetic dataset.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[command(flatten)]
        slice: SliceFlags,
    },
    /// Pretrain the block encoder on ASM-TEXT files.
    Pretrain {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
    },
}

fn parse_label(s: &str) -> Result<Label, String> {
    Label::parse(s).ok_or_else(|| format!("expected security or non_security, got {s:?}"))
}

/// Exit status: 0 clean, 2 with per-function warnings.
fn run(cli: Cli) -> Result<u8, PipelineError> {
    match cli.command {
        Command::Extract {
            pre,
            post,
            lines,
            diff: _,
            out,
            label,
            commit,
            slice,
        } => {
            let source = lines.map_or(PatchSource::Diff, PatchSource::ChangedLines);
            let outcome = cmd_extract(&ExtractArgs {
                pre,
                post,
                source,
                out_dir: out,
                label,
                commit_id: commit,
                slice: slice.config()?,
            })?;
            for n in &outcome.notes {
                eprintln!("warning: {n}");
            }
            for w in &outcome.function_warnings {
                eprintln!("warning: {w}");
            }
            for p in &outcome.written {
                println!("{}", p.display());
            }
            Ok(if outcome.function_warnings.is_empty() {
                0
            } else {
                2
            })
        }
        Command::Train {
            manifest,
            out,
            embedder,
            split,
            epochs,
            batch,
            lr,
            dropout,
        } => {
            let train = TrainConfig {
                batch_size: batch,
                adam: AdamConfig {
                    lr,
                    ..AdamConfig::default()
                },
                dropout,
                max_epochs: epochs,
                seed: split.seed.unwrap_or(0),
            };
            let report = cmd_train(&TrainArgs {
                manifest,
                out_dir: out,
                embedder,
                train,
                split_ratio: split.split,
                split_seed: split.seed,
            })?;
            if let Some(last) = report.epochs.last() {
                println!("epoch {} train_loss {:.6}", last.epoch, last.train_loss);
            }
            if let Some(m) = report.final_test {
                println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
            }
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            manifest,
            embedder,
            subset,
            split,
            out,
        } => {
            let m = cmd_eval(&EvalArgs {
                checkpoint,
                manifest,
                embedder,
                subset,
                split_ratio: split.split,
                split_seed: split.seed,
                out,
            })?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
            Ok(0)
        }
        Command::ExportDot { twin, out } => {
            for p in cmd_export_dot(&twin, &out)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Synth {
            out,
            count,
            seed,
            split,
            slice,
        } => {
            let m = cmd_synth(&SynthArgs {
                out_dir: out.clone(),
                count,
                seed,
                split_ratio: split,
                slice: slice.config()?,
            })?;
            println!(
                "{} twin graphs, manifest {}",
                m.entries.len(),
                out.join("manifest.json").display()
            );
            Ok(0)
        }
        Command::Pretrain {
            inputs,
            out,
            steps,
            seed,
            lr,
        } => {
            let losses = cmd_pretrain(&PretrainArgs {
                inputs,
                out_dir: out,
                steps,
                seed,
                lr,
            })?;
            if let Some(l) = losses.last() {
                println!("{} steps, last loss {l:.4}", losses.len());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
