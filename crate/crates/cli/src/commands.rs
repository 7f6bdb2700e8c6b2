use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vidcap::cells::CellKind;
use vidcap::features::{load_manifest, synth_dataset, synth_videos, FeatureMatrix, SynthSpec, VideoExample};
use vidcap::metrics::{evaluate_corpus, report_table, EvalPair, ScoreReport};
use vidcap::model::{ModelConfig, Seq2Seq};
use vidcap::text::{build_vocab_from_records, decode_to_tokens, CaptionRecord, Vocab, END};
use vidcap::training::{self, load_checkpoint, save_checkpoint, write_history, TrainConfig};
use vidcap::{Error, Result};

use crate::settings::{Search, Settings};

/// Relative-error bound for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `text` to `out`, or to standard output.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(io_err(path)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn synth(s: &Settings) -> Result<()> {
    let out = required(&s.out, "out")?;
    let spec = SynthSpec {
        n_videos: s.n_videos,
        t_enc: s.model.t_enc,
        d_feat: s.model.d_feat,
        archetypes: s.archetypes,
        noise: s.noise,
    };
    let manifest = synth_dataset(s.seed, &spec, out)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn vocab(s: &Settings) -> Result<()> {
    let manifest = required(&s.manifest, "manifest")?;
    let out = required(&s.out, "out")?;
    let videos = load_manifest(manifest, None)?;
    let records: Vec<CaptionRecord> = videos.into_iter().flat_map(|v| v.references).collect();
    let vocab = build_vocab_from_records(&records, s.model.vocab_size)?;
    vocab.save(out)?;
    eprintln!("vocabulary: {} tokens, hash {}", vocab.len(), vocab.hash());
    Ok(())
}

fn load_data(s: &Settings) -> Result<(Vocab, Vec<VideoExample>)> {
    let vocab_path = required(&s.vocab, "vocab")?;
    let manifest = required(&s.manifest, "manifest")?;
    let vocab = Vocab::load(vocab_path)?;
    let videos = load_manifest(manifest, Some(&vocab))?;
    Ok((vocab, videos))
}

pub fn train(s: &Settings) -> Result<()> {
    let out = required(&s.out, "out")?;
    let (vocab, videos) = load_data(s)?;
    let mut model = s.model.clone();
    if !s.is_explicit("d_feat") {
        if let Some(v) = videos.first() {
            model.d_feat = v.features.dim();
        }
    }
    model.vocab_size = vocab.len();
    eprintln!("model: {model}");
    let cfg = TrainConfig {
        batch_size: s.batch_size,
        epochs: s.epochs,
        learning_rate: s.lr,
        split_ratio: s.split_ratio,
        seed: s.seed,
        model,
        patience: s.patience,
        clip_norm: s.clip_norm,
    };
    let outcome = training::train(&videos, &vocab, &cfg, |r| {
        eprintln!(
            "epoch {} train_loss {:.6} train_acc {:.4} val_loss {:.6} val_acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    })?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    save_checkpoint(&out.join("model.ckpt"), &outcome.best)?;
    save_checkpoint(&out.join("last.ckpt"), &outcome.last)?;
    write_history(&out.join("history.tsv"), &outcome.history)?;
    eprintln!("best epoch {} of {}", outcome.best.epoch, outcome.history.len());
    println!("{}", out.join("model.ckpt").display());
    Ok(())
}

fn load_model(path: &Path, vocab: &Vocab) -> Result<Seq2Seq> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.vocab_hash != vocab.hash() {
        return Err(Error::Usage(format!(
            "{} was trained with vocabulary {} but the given vocabulary hashes to {}",
            path.display(),
            ckpt.vocab_hash,
            vocab.hash()
        )));
    }
    ckpt.model()
}

fn decode_one(model: &Seq2Seq, features: &FeatureMatrix, s: &Settings) -> Result<Vec<usize>> {
    let cfg = &model.config;
    if features.dim() != cfg.d_feat {
        return Err(Error::Dimension(format!(
            "features have width {} but the model expects {}",
            features.dim(),
            cfg.d_feat
        )));
    }
    let x = features.resample(cfg.t_enc)?.into_tensor();
    match s.search {
        Search::Greedy => model.greedy_decode(&x),
        Search::Beam => Ok(model.beam_decode(&x, s.beam_width, s.length_norm)?.tokens),
    }
}

fn decode_all(model: &Seq2Seq, videos: &[VideoExample], vocab: &Vocab, s: &Settings) -> Result<Vec<Vec<String>>> {
    videos
        .par_iter()
        .map(|v| {
            let ids = decode_one(model, &v.features, s)
                .map_err(|e| match e {
                    Error::Dimension(msg) => Error::Dimension(format!("video {}: {msg}", v.video_id)),
                    other => other,
                })?;
            decode_to_tokens(&ids, vocab)
        })
        .collect()
}

pub fn caption(s: &Settings) -> Result<()> {
    let model_path = match s.models.as_slice() {
        [one] => one,
        [] => return Err(Error::Usage("--model is required".into())),
        _ => return Err(Error::Usage("caption takes a single --model".into())),
    };
    let (vocab, videos) = load_data(s)?;
    let model = load_model(model_path, &vocab)?;
    let captions = decode_all(&model, &videos, &vocab, s)?;
    let mut text = String::new();
    for (v, c) in videos.iter().zip(&captions) {
        text.push_str(&format!("{}\t{}\n", v.video_id, c.join(" ")));
    }
    emit(&s.out, &text)
}

pub fn eval(s: &Settings) -> Result<()> {
    if s.models.is_empty() {
        return Err(Error::Usage("at least one --model is required".into()));
    }
    let (vocab, videos) = load_data(s)?;
    let mut rows: Vec<(String, ScoreReport)> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for path in &s.models {
        let model = load_model(path, &vocab)?;
        let captions = decode_all(&model, &videos, &vocab, s)?;
        let pairs: Vec<EvalPair> = videos
            .iter()
            .zip(captions)
            .map(|(v, c)| EvalPair::new(&v.video_id, c, v.references.iter().map(|r| r.tokens.clone()).collect()))
            .collect();
        let report = evaluate_corpus(&pairs)?;
        let base = model.config.label();
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        let label = if *n == 1 { base } else { format!("{base}#{n}") };
        eprintln!("{label}: {}", path.display());
        rows.push((label, report));
    }
    if let Some(dir) = &s.per_video {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (label, report) in &rows {
            let path = dir.join(format!("{label}.tsv"));
            std::fs::write(&path, report.per_video_tsv()).map_err(io_err(&path))?;
        }
    }
    emit(&s.out, &report_table(&rows))
}

/// The fixed small configuration used by `gradcheck`.
pub fn gradcheck_config(cell: CellKind, attention: bool, seed: u64) -> ModelConfig {
    ModelConfig {
        cell,
        attention,
        d_feat: 6,
        t_enc: 4,
        d_h: 5,
        d_emb: 4,
        vocab_size: 12,
        t_dec_max: 3,
        seed,
    }
}

pub fn gradcheck(s: &Settings) -> Result<()> {
    let spec = SynthSpec::new(1, 4, 6);
    let features = synth_videos(s.seed, &spec)?.remove(0).features.into_tensor();
    let targets = [4 + (s.seed % 8) as usize, 4 + (s.seed / 8 % 8) as usize, END];
    println!("variant\tentries\tmax_rel_error\tresult");
    let mut failed = Vec::new();
    for cell in [CellKind::Lstm, CellKind::Gru] {
        for attention in [false, true] {
            let model = Seq2Seq::new(gradcheck_config(cell, attention, s.seed))?;
            let report = training::loss_grad_check(&model, &features, &targets, 1e-5)?;
            let ok = report.max_rel_error < GRADCHECK_TOLERANCE;
            let label = model.config.label();
            println!(
                "{label}\t{}\t{:.3e}\t{}",
                report.entries,
                report.max_rel_error,
                if ok { "PASS" } else { "FAIL" }
            );
            if !ok {
                failed.push(label);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric {
            op: "gradcheck".into(),
            detail: format!("relative error at or above {GRADCHECK_TOLERANCE} for {}", failed.join(", ")),
        })
    }
}
