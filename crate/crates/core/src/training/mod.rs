//! Masked cross-entropy, Adam, dataset splitting and the epoch loop.
//!
//! Each batch runs one tape per (video, reference) pair in parallel. The
//! per-example gradients are summed in example order and divided by the
//! batch size, clipped to a global norm, then applied with Adam, so the
//! result does not depend on the number of worker threads.

mod checkpoint;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::features::VideoExample;
use crate::model::{teacher_forced_graph, ModelConfig, ModelParams, Seq2Seq};
use crate::tensor::kernels;
use crate::text::{encode_caption, EncodedCaption, Vocab};
use crate::{rng, tensor, Error, Result, Tape, Tensor, Var};

/// Mean masked cross-entropy and the number of positions it averages over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedLoss {
    pub loss: f64,
    /// Masked-on positions. Zero means the loss was defined as 0.
    pub count: usize,
}

fn check_targets(t: usize, v: usize, targets: &[usize], mask: &[bool]) -> Result<usize> {
    if targets.len() != t || mask.len() != t {
        return Err(Error::dim(format!(
            "logits have {t} rows but {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    for (&target, &on) in targets.iter().zip(mask) {
        if on && target >= v {
            return Err(Error::usage(format!("target {target} out of range for {v} classes")));
        }
    }
    Ok(mask.iter().filter(|&&m| m).count())
}

fn logits_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [t, v] => Ok((t, v)),
        _ => Err(Error::dim(format!("logits must be [T, V], got {shape:?}"))),
    }
}

/// Mean over masked positions of `−log softmax(logits_t)[target_t]`.
pub fn cross_entropy_loss(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<MaskedLoss> {
    let (t, v) = logits_dims(logits.shape())?;
    let count = check_targets(t, v, targets, mask)?;
    if count == 0 {
        return Ok(MaskedLoss { loss: 0.0, count });
    }
    let logp = kernels::log_softmax_rows(logits.data(), v);
    let mut total = 0.0;
    for (row, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if on {
            total -= logp[row * v + target];
        }
    }
    Ok(MaskedLoss {
        loss: total / count as f64,
        count,
    })
}

/// Differentiable form of [`cross_entropy_loss`].
///
/// Computed as `sum(log_softmax(logits) ⊙ W)` where `W` holds `−1/count` at
/// each masked-on target and zero elsewhere, so masked-off rows receive an
/// exactly zero gradient.
pub fn masked_cross_entropy_graph(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
) -> Result<(Var, usize)> {
    let (t, v) = logits_dims(tape.shape(logits))?;
    let count = check_targets(t, v, targets, mask)?;
    if count == 0 {
        return Ok((tape.constant(Tensor::scalar(0.0)), 0));
    }
    let mut w = vec![0.0; t * v];
    let weight = -1.0 / count as f64;
    for (row, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if on {
            w[row * v + target] = weight;
        }
    }
    let w = tape.constant(Tensor::new([t, v], w)?);
    let logp = tape.log_softmax(logits)?;
    let weighted = tape.mul(logp, w)?;
    Ok((tape.sum(weighted)?, count))
}

/// Correct and total masked positions; argmax ties go to the lowest id.
pub fn token_hits(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<(usize, usize)> {
    let (t, v) = logits_dims(logits.shape())?;
    let count = check_targets(t, v, targets, mask)?;
    let hits = (0..t)
        .filter(|&r| mask[r] && tensor::argmax(logits.row(r)) == targets[r])
        .count();
    Ok((hits, count))
}

/// Fraction of masked positions predicted correctly, 0 when none are masked.
pub fn token_accuracy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64> {
    let (hits, count) = token_hits(logits, targets, mask)?;
    Ok(if count == 0 { 0.0 } else { hits as f64 / count as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single tensor at step `t ≥ 1`.
pub fn adam_update(
    hyper: &AdamHyper,
    t: u64,
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
) -> Result<()> {
    if param.shape() != grad.shape() || m.shape() != grad.shape() || v.shape() != grad.shape() {
        return Err(Error::dim(format!(
            "adam: param {:?}, grad {:?}, moments {:?}/{:?}",
            param.shape(),
            grad.shape(),
            m.shape(),
            v.shape()
        )));
    }
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - hyper.beta1.powi(exp);
    let c2 = 1.0 - hyper.beta2.powi(exp);
    let (p, m, v) = (param.data_mut(), m.data_mut(), v.data_mut());
    for i in 0..p.len() {
        let g = grad.data()[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Adam state over every model tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl Adam {
    pub fn new(hyper: AdamHyper, params: &ModelParams) -> Self {
        let zeros = params.map(&mut |_, t| t.zeros_like());
        Self {
            hyper,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Nothing changes if any gradient is non-finite.
    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let mut bad = None;
        grads.visit(&mut |name, g| {
            if bad.is_none() && !g.all_finite() {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::numeric("adam_step", format!("non-finite gradient for {name}")));
        }
        self.step += 1;
        let mut g = Vec::new();
        grads.visit(&mut |_, t| g.push(t));
        let mut m = Vec::new();
        self.m.visit_mut(&mut |_, t| m.push(t));
        let mut v = Vec::new();
        self.v.visit_mut(&mut |_, t| v.push(t));
        let mut p = Vec::new();
        params.visit_mut(&mut |_, t| p.push(t));
        if [g.len(), m.len(), v.len()] != [p.len(); 3] {
            return Err(Error::dim("adam: parameter, gradient and moment layouts differ"));
        }
        for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
            adam_update(&self.hyper, self.step, p, g, m, v)?;
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.visit_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|x| *x *= scale));
    }
    norm
}

/// Seeded shuffle then `⌊ratio·n⌋` items to train, the rest to validation.
pub fn split_dataset<T: Clone>(examples: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if examples.len() < 2 {
        return Err(Error::usage(format!(
            "splitting needs at least 2 examples, got {}",
            examples.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::usage(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let n_train = (ratio * examples.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub split_ratio: f64,
    /// Drives the split and shuffle streams; parameter init uses `model.seed`.
    pub seed: u64,
    pub model: ModelConfig,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 320,
            epochs: 100,
            learning_rate: 1e-3,
            split_ratio: 0.85,
            seed: 0,
            model: ModelConfig::default(),
            patience: None,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be at least 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::usage(format!("split_ratio must be in (0, 1), got {}", self.split_ratio)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::usage(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::usage(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc";

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        )
        .unwrap();
    }
    s
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_tsv(history)).map_err(|e| Error::io(path, e))
}

/// One teacher-forcing pair: a video's features and one of its captions.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub features: Tensor,
    pub caption: EncodedCaption,
}

/// Expands videos into (features, reference) pairs, resampling features
/// to `t_enc` rows.
pub fn make_pairs(videos: &[VideoExample], vocab: &Vocab, cfg: &ModelConfig) -> Result<Vec<TrainPair>> {
    let mut pairs = Vec::new();
    for video in videos {
        if video.features.dim() != cfg.d_feat {
            return Err(Error::dim(format!(
                "video {}: feature dim {} but model expects {}",
                video.video_id,
                video.features.dim(),
                cfg.d_feat
            )));
        }
        let features = video.features.resample(cfg.t_enc)?.into_tensor();
        for r in &video.references {
            pairs.push(TrainPair {
                features: features.clone(),
                caption: encode_caption(&r.tokens, vocab, cfg.t_dec_max),
            });
        }
    }
    Ok(pairs)
}

/// Loss, accuracy counts and (optionally) gradients for one pair.
struct PairResult {
    loss: f64,
    hits: usize,
    count: usize,
    grads: Option<ModelParams>,
}

fn run_pair(model: &Seq2Seq, pair: &TrainPair, with_grads: bool) -> Result<PairResult> {
    let steps = pair.caption.mask.iter().rposition(|&m| m).map_or(0, |i| i + 1);
    if steps == 0 {
        return Ok(PairResult {
            loss: 0.0,
            hits: 0,
            count: 0,
            grads: with_grads.then(|| model.params.map(&mut |_, t| t.zeros_like())),
        });
    }
    let targets = &pair.caption.target[..steps];
    let mask = &pair.caption.mask[..steps];
    let mut tape = Tape::new();
    let p = model.vars(&mut tape, with_grads);
    let f = tape.constant(pair.features.clone());
    let logits = teacher_forced_graph(&mut tape, &model.config, &p, f, targets)?;
    let (loss, _) = masked_cross_entropy_graph(&mut tape, logits, targets, mask)?;
    let (hits, count) = token_hits(tape.value(logits), targets, mask)?;
    let grads = if with_grads {
        let g = tape.backward(loss)?;
        Some(p.map(&mut |_, &v| g.wrt(v).clone()))
    } else {
        None
    };
    Ok(PairResult {
        loss: tape.value(loss).item(),
        hits,
        count,
        grads,
    })
}

/// Loss and gradient of one pair, averaged like a batch of one.
pub fn pair_loss_and_grads(model: &Seq2Seq, pair: &TrainPair) -> Result<(f64, ModelParams)> {
    let r = run_pair(model, pair, true)?;
    Ok((r.loss, r.grads.expect("requested gradients")))
}

/// Finite-difference check of the teacher-forced loss over every model
/// parameter entry, with all target positions masked on.
pub fn loss_grad_check(
    model: &Seq2Seq,
    features: &Tensor,
    targets: &[usize],
    eps: f64,
) -> Result<tensor::GradCheckReport> {
    let mut inputs = Vec::new();
    model.params.visit(&mut |_, t| inputs.push(t.clone()));
    let mask = vec![true; targets.len()];
    tensor::grad_check(&inputs, eps, |tape, vars| {
        let mut next = vars.iter().copied();
        let p = model.params.map(&mut |_, _| next.next().expect("one var per tensor"));
        let f = tape.constant(features.clone());
        let logits = teacher_forced_graph(tape, &model.config, &p, f, targets)?;
        Ok(masked_cross_entropy_graph(tape, logits, targets, &mask)?.0)
    })
}

/// Mean per-pair loss and pooled token accuracy under teacher forcing.
pub fn evaluate_pairs(model: &Seq2Seq, pairs: &[TrainPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let results: Vec<PairResult> = pairs
        .par_iter()
        .map(|p| run_pair(model, p, false))
        .collect::<Result<_>>()?;
    Ok(summarize(&results))
}

fn summarize(results: &[PairResult]) -> (f64, f64) {
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
    let hits: usize = results.iter().map(|r| r.hits).sum();
    let count: usize = results.iter().map(|r| r.count).sum();
    let acc = if count == 0 { 0.0 } else { hits as f64 / count as f64 };
    (loss, acc)
}

/// Mean of per-pair gradients, summed in slice order.
fn mean_grads(results: &mut [PairResult]) -> ModelParams {
    let n = results.len() as f64;
    let mut iter = results.iter_mut().map(|r| r.grads.take().expect("gradients"));
    let mut total = iter.next().expect("non-empty batch");
    {
        let mut acc = Vec::new();
        total.visit_mut(&mut |_, t| acc.push(t));
        for g in iter {
            let mut i = 0;
            g.visit(&mut |_, t| {
                for (a, b) in acc[i].data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
                i += 1;
            });
        }
    }
    total.visit_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|x| *x /= n));
    total
}

fn at_batch(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: format!("epoch {epoch} batch {batch}: {detail}"),
        },
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss seen (earliest on ties).
    pub best: Checkpoint,
    /// State after the last epoch run.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Splits `dataset` by video and trains on the larger part.
pub fn train(
    dataset: &[VideoExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = split_dataset(dataset, cfg.split_ratio, cfg.seed)?;
    if train_set.is_empty() {
        return Err(Error::usage(format!(
            "split ratio {} leaves no training videos out of {}",
            cfg.split_ratio,
            dataset.len()
        )));
    }
    fit(&train_set, &val_set, vocab, cfg, on_epoch)
}

/// Trains on `train_set` and tracks validation loss on `val_set`.
pub fn fit(
    train_set: &[VideoExample],
    val_set: &[VideoExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if vocab.len() != cfg.model.vocab_size {
        return Err(Error::usage(format!(
            "vocabulary has {} entries but model expects {}",
            vocab.len(),
            cfg.model.vocab_size
        )));
    }
    let train_pairs = make_pairs(train_set, vocab, &cfg.model)?;
    let val_pairs = make_pairs(val_set, vocab, &cfg.model)?;
    if train_pairs.is_empty() {
        return Err(Error::usage("no training pairs"));
    }

    let mut model = Seq2Seq::new(cfg.model.clone())?;
    let hyper = AdamHyper {
        lr: cfg.learning_rate,
        ..AdamHyper::default()
    };
    let mut adam = Adam::new(hyper, &model.params);
    let mut shuffle = rng::stream(cfg.seed, rng::SHUFFLE);
    let vocab_hash = vocab.hash();
    let snapshot = |model: &Seq2Seq, adam: &Adam, epoch: usize| Checkpoint {
        config: model.config.clone(),
        params: model.params.clone(),
        adam: Some(adam.clone()),
        vocab_hash: vocab_hash.clone(),
        epoch,
    };

    let mut best = snapshot(&model, &adam, 0);
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_results = Vec::with_capacity(order.len());
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut results: Vec<PairResult> = batch
                .par_iter()
                .map(|&i| run_pair(&model, &train_pairs[i], true))
                .collect::<Result<_>>()
                .map_err(|e| at_batch(e, epoch, b + 1))?;
            let mut grads = mean_grads(&mut results);
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(&mut model.params, &grads)
                .map_err(|e| at_batch(e, epoch, b + 1))?;
            epoch_results.extend(results);
        }
        let (train_loss, train_acc) = summarize(&epoch_results);
        let (val_loss, val_acc) = if val_pairs.is_empty() {
            (train_loss, train_acc)
        } else {
            evaluate_pairs(&model, &val_pairs)?
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        on_epoch(&record);
        history.push(record);

        if val_loss < best_val {
            best_val = val_loss;
            best = snapshot(&model, &adam, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let last = snapshot(&model, &adam, history.len());
    Ok(TrainOutcome { best, last, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_log_v() {
        let logits = Tensor::zeros([3, 1500]);
        let l = cross_entropy_loss(&logits, &[4, 5, 0], &[true, true, false]).unwrap();
        assert!((l.loss - 1500f64.ln()).abs() < 1e-12);
        assert_eq!(l.count, 2);
    }

    #[test]
    fn two_class_example() {
        let logits = Tensor::matrix(1, 2, vec![0.0, 3f64.ln()]).unwrap();
        let l = cross_entropy_loss(&logits, &[1], &[true]).unwrap();
        assert!((l.loss - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_zero_and_flagged() {
        let logits = Tensor::ones([2, 3]);
        let l = cross_entropy_loss(&logits, &[0, 0], &[false, false]).unwrap();
        assert_eq!(l, MaskedLoss { loss: 0.0, count: 0 });
        assert_eq!(token_accuracy(&logits, &[0, 0], &[false, false]).unwrap(), 0.0);
    }

    #[test]
    fn graph_matches_value_loss() {
        let logits = Tensor::from_fn([3, 4], |i| (i as f64 * 0.37).sin()).unwrap();
        let (targets, mask) = ([1, 3, 2], [true, false, true]);
        let mut tape = Tape::new();
        let x = tape.param(logits.clone());
        let (loss, count) = masked_cross_entropy_graph(&mut tape, x, &targets, &mask).unwrap();
        let want = cross_entropy_loss(&logits, &targets, &mask).unwrap();
        assert_eq!(count, 2);
        assert!((tape.value(loss).item() - want.loss).abs() < 1e-14);
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(x).row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let logits = Tensor::matrix(3, 3, vec![1.0, 1.0, 0.0, 0.0, 2.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
        assert_eq!(token_hits(&logits, &[0, 1, 1], &[true, true, true]).unwrap(), (2, 3));
        assert_eq!(token_accuracy(&logits, &[1, 0, 1], &[true, true, true]).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_mismatched_lengths() {
        let logits = Tensor::zeros([2, 3]);
        assert!(matches!(
            cross_entropy_loss(&logits, &[0], &[true, true]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            cross_entropy_loss(&logits, &[0, 3], &[true, true]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn adam_first_step() {
        let mut p = Tensor::scalar(1.0);
        let (mut m, mut v) = (Tensor::scalar(0.0), Tensor::scalar(0.0));
        let hyper = AdamHyper { lr: 0.1, ..AdamHyper::default() };
        adam_update(&hyper, 1, &mut p, &Tensor::scalar(1.0), &mut m, &mut v).unwrap();
        assert_eq!(p.item(), 1.0 - 0.1 / (1.0 + 1e-8));

        let mut q = Tensor::scalar(0.25);
        let (mut m, mut v) = (Tensor::scalar(0.0), Tensor::scalar(0.0));
        adam_update(&hyper, 1, &mut q, &Tensor::scalar(0.0), &mut m, &mut v).unwrap();
        assert_eq!(q.item(), 0.25);
    }

    #[test]
    fn split_counts() {
        let items: Vec<usize> = (0..20).collect();
        let (a, b) = split_dataset(&items, 0.85, 4).unwrap();
        assert_eq!((a.len(), b.len()), (17, 3));
        assert_eq!(split_dataset(&items, 0.85, 4).unwrap(), (a, b));
        assert!(split_dataset(&items[..1], 0.5, 0).is_err());
        assert!(split_dataset(&items, 1.0, 0).is_err());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let cfg = ModelConfig {
            d_feat: 2,
            t_enc: 2,
            d_h: 2,
            d_emb: 2,
            vocab_size: 5,
            ..ModelConfig::default()
        };
        let mut g = ModelParams::init(&cfg).unwrap();
        g.visit_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|x| *x *= 100.0));
        let before = clip_global_norm(&mut g, 5.0);
        assert!(before > 5.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn history_format() {
        let h = [EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.25,
            val_loss: 1.0,
            val_acc: 0.0,
        }];
        assert_eq!(history_tsv(&h), format!("{HISTORY_HEADER}\n1\t0.5\t0.25\t1\t0\n"));
    }
}
