//! `vidcap`: synthetic data, vocabulary, training, captioning, evaluation
//! and gradient checks from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use settings::Settings;
use vidcap::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "vidcap", version, about = "Recurrent encoder-decoder video captioning")]
struct Cli {
    /// Seed for every random stream (init, shuffle, split, synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset (features, manifest, archetypes).
    Synth(SynthArgs),
    /// Build a vocabulary from a manifest's captions.
    Vocab(VocabArgs),
    /// Train a model; writes model.ckpt, last.ckpt and history.tsv.
    Train(TrainArgs),
    /// Caption every video in a manifest.
    Caption(CaptionArgs),
    /// Score one or more models on a manifest.
    Eval(EvalArgs),
    /// Finite-difference check of all four model variants.
    Gradcheck,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n_videos: Option<usize>,
    #[arg(long)]
    t_enc: Option<usize>,
    #[arg(long)]
    d_feat: Option<usize>,
    #[arg(long)]
    archetypes: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Output directory.
    #[arg(long, alias = "out-dir")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Maximum size including the four reserved tokens.
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_parser = ["lstm", "gru"])]
    cell: Option<String>,
    #[arg(long, value_parser = ["on", "off"])]
    attention: Option<String>,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    t_enc: Option<usize>,
    /// Defaults to the feature width found in the manifest.
    #[arg(long)]
    d_feat: Option<usize>,
    #[arg(long)]
    t_dec_max: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long, value_parser = ["greedy", "beam"])]
    search: Option<String>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long, value_parser = ["on", "off"])]
    length_norm: Option<String>,
}

#[derive(Args, Debug)]
struct CaptionArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output TSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to score; repeat for several report rows.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report TSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-video score tables, one per model.
    #[arg(long)]
    per_video: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

type Pairs = Vec<(&'static str, String)>;

fn push<T: ToString>(pairs: &mut Pairs, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        pairs.push((key, v.to_string()));
    }
}

fn push_path(pairs: &mut Pairs, key: &'static str, value: &Option<PathBuf>) {
    if let Some(v) = value {
        pairs.push((key, v.display().to_string()));
    }
}

impl ModelArgs {
    fn pairs(&self, p: &mut Pairs) {
        push(p, "cell", &self.cell);
        push(p, "attention", &self.attention);
        push(p, "d_h", &self.d_h);
        push(p, "d_emb", &self.d_emb);
        push(p, "t_enc", &self.t_enc);
        push(p, "d_feat", &self.d_feat);
        push(p, "t_dec_max", &self.t_dec_max);
    }
}

impl DecodeArgs {
    fn pairs(&self, p: &mut Pairs) {
        push(p, "search", &self.search);
        push(p, "beam_width", &self.beam_width);
        push(p, "length_norm", &self.length_norm);
    }
}

impl Cli {
    fn pairs(&self) -> Pairs {
        let mut p = Pairs::new();
        push(&mut p, "seed", &self.seed);
        push(&mut p, "threads", &self.threads);
        match &self.command {
            Command::Synth(a) => {
                push(&mut p, "n_videos", &a.n_videos);
                push(&mut p, "t_enc", &a.t_enc);
                push(&mut p, "d_feat", &a.d_feat);
                push(&mut p, "archetypes", &a.archetypes);
                push(&mut p, "noise", &a.noise);
                push_path(&mut p, "out", &a.out);
            }
            Command::Vocab(a) => {
                push_path(&mut p, "manifest", &a.manifest);
                push(&mut p, "vocab_size", &a.vocab_size);
                push_path(&mut p, "out", &a.out);
            }
            Command::Train(a) => {
                push_path(&mut p, "manifest", &a.manifest);
                push_path(&mut p, "vocab", &a.vocab);
                push_path(&mut p, "out", &a.out);
                a.model.pairs(&mut p);
                push(&mut p, "epochs", &a.epochs);
                push(&mut p, "batch_size", &a.batch_size);
                push(&mut p, "lr", &a.lr);
                push(&mut p, "split_ratio", &a.split_ratio);
                push(&mut p, "patience", &a.patience);
                push(&mut p, "clip_norm", &a.clip_norm);
            }
            Command::Caption(a) => {
                push_path(&mut p, "model", &a.model);
                push_path(&mut p, "vocab", &a.vocab);
                push_path(&mut p, "manifest", &a.manifest);
                push_path(&mut p, "out", &a.out);
                a.decode.pairs(&mut p);
            }
            Command::Eval(a) => {
                for m in &a.model {
                    p.push(("model", m.display().to_string()));
                }
                push_path(&mut p, "vocab", &a.vocab);
                push_path(&mut p, "manifest", &a.manifest);
                push_path(&mut p, "out", &a.out);
                push_path(&mut p, "per_video", &a.per_video);
                a.decode.pairs(&mut p);
            }
            Command::Gradcheck => {}
        }
        p
    }

    fn name(&self) -> &'static str {
        match self.command {
            Command::Synth(_) => "synth",
            Command::Vocab(_) => "vocab",
            Command::Train(_) => "train",
            Command::Caption(_) => "caption",
            Command::Eval(_) => "eval",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) => 1,
        Error::Dimension(_) | Error::Format { .. } | Error::Data { .. } | Error::Io { .. } => 2,
        Error::Numeric { .. } => 3,
    }
}

fn resolve(cli: &Cli) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        s.load_file(path)?;
    }
    let pairs = cli.pairs();
    if pairs.iter().any(|(k, _)| *k == "model") {
        s.clear_models();
    }
    for (key, value) in pairs {
        s.set(key, &value)?;
    }
    Ok(s)
}

fn execute(cli: &Cli) -> Result<()> {
    let s = resolve(cli)?;
    eprintln!("# vidcap {} resolved config", cli.name());
    eprint!("{}", s.resolved());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {:?} worker threads: {e}", s.threads)))?;
    pool.install(|| match &cli.command {
        Command::Synth(_) => commands::synth(&s),
        Command::Vocab(_) => commands::vocab(&s),
        Command::Train(_) => commands::train(&s),
        Command::Caption(_) => commands::caption(&s),
        Command::Eval(_) => commands::eval(&s),
        Command::Gradcheck => commands::gradcheck(&s),
    })
}

fn run(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
