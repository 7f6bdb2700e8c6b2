mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use support::{log_softmax, random_tensor, rng};
use vidcap::cells::CellKind;
use vidcap::features::{synth_videos, SynthSpec, VideoExample};
use vidcap::model::{teacher_forced_graph, ModelConfig, ModelParams, Seq2Seq};
use vidcap::tensor::Tape;
use vidcap::text::{build_vocab_from_records, CaptionRecord, Vocab};
use vidcap::training::{
    adam_update, clip_global_norm, cross_entropy_loss, fit, load_checkpoint, make_pairs,
    masked_cross_entropy_graph, pair_loss_and_grads, save_checkpoint, split_dataset, token_accuracy,
    token_hits, Adam, AdamHyper, Checkpoint, TrainConfig,
};
use vidcap::{Error, Tensor};

fn dataset(n: usize, seed: u64) -> (Vec<VideoExample>, Vocab) {
    let videos = synth_videos(seed, &SynthSpec::new(n, 4, 8)).unwrap();
    let examples: Vec<VideoExample> = videos
        .into_iter()
        .map(|v| VideoExample {
            references: vec![CaptionRecord::new(v.video_id.clone(), v.caption)],
            video_id: v.video_id,
            features: v.features,
        })
        .collect();
    let records: Vec<CaptionRecord> = examples.iter().flat_map(|e| e.references.clone()).collect();
    let vocab = build_vocab_from_records(&records, 1000).unwrap();
    (examples, vocab)
}

fn small_config(vocab: &Vocab, cell: CellKind, attention: bool) -> TrainConfig {
    TrainConfig {
        batch_size: 3,
        epochs: 3,
        learning_rate: 5e-3,
        split_ratio: 0.75,
        seed: 9,
        model: ModelConfig {
            cell,
            attention,
            d_feat: 8,
            t_enc: 4,
            d_h: 6,
            d_emb: 5,
            vocab_size: vocab.len(),
            t_dec_max: 8,
            seed: 3,
        },
        patience: None,
        clip_norm: 5.0,
    }
}

fn bits(p: &ModelParams) -> Vec<u64> {
    let mut out = Vec::new();
    p.visit(&mut |_, t| out.extend(t.data().iter().map(|v| v.to_bits())));
    out
}

#[test]
fn cross_entropy_matches_scalar_loop() {
    let mut r = rng(1);
    for case in 0..20 {
        let (t, v) = (3 + case % 4, 5 + case % 3);
        let logits = random_tensor(&mut r, &[t, v], 4.0);
        let targets: Vec<usize> = (0..t).map(|i| (i * 7 + case) % v).collect();
        let mask: Vec<bool> = (0..t).map(|i| (i + case) % 3 != 0).collect();

        let mut total = 0.0;
        let mut n = 0;
        for i in 0..t {
            if mask[i] {
                total -= log_softmax(logits.row(i))[targets[i]];
                n += 1;
            }
        }
        let expected = total / n as f64;
        let got = cross_entropy_loss(&logits, &targets, &mask).unwrap();
        assert_eq!(got.count, n);
        assert!((got.loss - expected).abs() < 1e-12);

        let mut tape = Tape::new();
        let l = tape.param(logits.clone());
        let (loss, count) = masked_cross_entropy_graph(&mut tape, l, &targets, &mask).unwrap();
        assert_eq!(count, n);
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }
}

#[test]
fn all_masked_loss_is_zero() {
    let logits = random_tensor(&mut rng(2), &[3, 4], 1.0);
    let got = cross_entropy_loss(&logits, &[1, 2, 3], &[false; 3]).unwrap();
    assert_eq!((got.loss, got.count), (0.0, 0));
    assert_eq!(token_accuracy(&logits, &[1, 2, 3], &[false; 3]).unwrap(), 0.0);
}

#[test]
fn accuracy_matches_counting() {
    let mut r = rng(3);
    for case in 0..20 {
        let logits = random_tensor(&mut r, &[6, 7], 1.0);
        let targets: Vec<usize> = (0..6).map(|i| (i * 3 + case) % 7).collect();
        let mask: Vec<bool> = (0..6).map(|i| i != case % 6).collect();
        let mut hits = 0;
        for i in 0..6 {
            let row = logits.row(i);
            let mut best = 0;
            for j in 1..7 {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if mask[i] && best == targets[i] {
                hits += 1;
            }
        }
        assert_eq!(token_hits(&logits, &targets, &mask).unwrap(), (hits, 5));
        assert_eq!(token_accuracy(&logits, &targets, &mask).unwrap(), hits as f64 / 5.0);
    }
}

#[test]
fn adam_two_steps_by_hand() {
    let hyper = AdamHyper {
        lr: 0.1,
        ..AdamHyper::default()
    };
    let mut p = Tensor::new([1], vec![0.5]).unwrap();
    let mut m = Tensor::zeros([1]);
    let mut v = Tensor::zeros([1]);
    adam_update(&hyper, 1, &mut p, &Tensor::new([1], vec![1.0]).unwrap(), &mut m, &mut v).unwrap();
    // m1 = 0.1, v1 = 0.001, both bias corrections give exactly 1.
    let p1 = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
    assert!((p.data()[0] - p1).abs() < 1e-15);

    adam_update(&hyper, 2, &mut p, &Tensor::new([1], vec![-1.0]).unwrap(), &mut m, &mut v).unwrap();
    let m2: f64 = 0.9 * 0.1 - 0.1;
    let v2: f64 = 0.999 * 0.001 + 0.001;
    let m_hat = m2 / (1.0 - 0.81);
    let v_hat = v2 / (1.0 - 0.998001);
    let p2 = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((m.data()[0] - m2).abs() < 1e-15);
    assert!((v.data()[0] - v2).abs() < 1e-15);
    assert!((p.data()[0] - p2).abs() < 1e-15);
}

#[test]
fn adam_rejects_non_finite_gradient_without_changes() {
    let cfg = small_config(&dataset(4, 0).1, CellKind::Gru, true).model;
    let mut params = ModelParams::init(&cfg).unwrap();
    let before = params.clone();
    let mut adam = Adam::new(AdamHyper::default(), &params);
    let mut grads = params.map(&mut |_, t| t.zeros_like());
    grads.out_b.data_mut()[0] = f64::NAN;
    match adam.update(&mut params, &grads) {
        Err(Error::Numeric { op, detail }) => {
            assert_eq!(op, "adam_step");
            assert!(detail.contains("output.b"));
        }
        other => panic!("expected numeric error, got {other:?}"),
    }
    assert_eq!(adam.step, 0);
    assert_eq!(params, before);
}

#[test]
fn clipping_matches_manual_norm() {
    let cfg = small_config(&dataset(4, 0).1, CellKind::Lstm, true).model;
    let mut grads = ModelParams::init(&cfg).unwrap();
    let mut sq = 0.0;
    grads.visit(&mut |_, t| sq += t.data().iter().map(|x| x * x).sum::<f64>());
    let norm = sq.sqrt();
    let original = grads.clone();
    assert!((clip_global_norm(&mut grads, norm * 2.0) - norm).abs() < 1e-12);
    assert_eq!(grads, original);
    clip_global_norm(&mut grads, 1.0);
    assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    let scale = 1.0 / norm;
    assert!((grads.out_w.data()[3] - original.out_w.data()[3] * scale).abs() < 1e-15);
}

#[test]
fn split_partitions_examples() {
    for seed in 0..100u64 {
        let n = 2 + (seed as usize * 7) % 60;
        let items: Vec<usize> = (0..n).collect();
        let ratio = 0.85;
        let (train, val) = split_dataset(&items, ratio, seed).unwrap();
        assert_eq!(train.len(), (ratio * n as f64).floor() as usize);
        let a: BTreeSet<usize> = train.iter().copied().collect();
        let b: BTreeSet<usize> = val.iter().copied().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), n);
        assert_eq!(a.union(&b).copied().collect::<Vec<_>>(), items);
        assert_eq!(split_dataset(&items, ratio, seed).unwrap(), (train, val));
    }
    assert!(matches!(split_dataset(&[1], 0.5, 0), Err(Error::Usage(_))));
    assert!(matches!(split_dataset(&[1, 2], 1.0, 0), Err(Error::Usage(_))));
}

#[test]
fn masked_targets_do_not_affect_gradients() {
    let m = Seq2Seq::new(ModelConfig {
        vocab_size: 9,
        ..small_config(&dataset(4, 0).1, CellKind::Gru, true).model
    })
    .unwrap();
    let f = random_tensor(&mut rng(5), &[4, 8], 1.0);
    let inputs = [4, 5, 6, 2];
    let mask = [true, false, true, false];
    let grads_for = |targets: &[usize]| {
        let mut tape = Tape::new();
        let p = m.vars(&mut tape, true);
        let fv = tape.constant(f.clone());
        let logits = teacher_forced_graph(&mut tape, &m.config, &p, fv, &inputs).unwrap();
        let (loss, _) = masked_cross_entropy_graph(&mut tape, logits, targets, &mask).unwrap();
        let g = tape.backward(loss).unwrap();
        (tape.value(loss).item().to_bits(), bits(&p.map(&mut |_, &v| g.wrt(v).clone())))
    };
    let base = grads_for(&[4, 5, 6, 2]);
    assert_eq!(grads_for(&[4, 8, 6, 0]), base);
    assert_eq!(grads_for(&[4, 3, 6, 7]), base);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (data, vocab) = dataset(8, 1);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_config(&vocab, CellKind::Lstm, true)
    };
    let initial = Seq2Seq::new(cfg.model.clone()).unwrap();
    let out = fit(&data[..6], &data[6..], &vocab, &cfg, |_| {}).unwrap();
    assert_eq!(bits(&out.last.params), bits(&initial.params));
    assert_eq!(out.last.adam.as_ref().unwrap().step, 3 * 2);
    let losses: Vec<u64> = out.history.iter().map(|r| r.val_loss.to_bits()).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn full_batch_epoch_matches_manual_step() {
    let (data, vocab) = dataset(6, 2);
    let cfg = TrainConfig {
        batch_size: 64,
        epochs: 1,
        clip_norm: 1e6,
        ..small_config(&vocab, CellKind::Gru, true)
    };
    let out = fit(&data, &[], &vocab, &cfg, |_| {}).unwrap();

    let mut model = Seq2Seq::new(cfg.model.clone()).unwrap();
    let pairs = make_pairs(&data, &vocab, &cfg.model).unwrap();
    let mut sum = model.params.map(&mut |_, t| t.zeros_like());
    let mut loss = 0.0;
    for pair in &pairs {
        let (l, g) = pair_loss_and_grads(&model, pair).unwrap();
        loss += l;
        let mut acc = Vec::new();
        sum.visit_mut(&mut |_, t| acc.push(t));
        let mut i = 0;
        g.visit(&mut |_, t| {
            for (a, b) in acc[i].data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
            i += 1;
        });
    }
    let n = pairs.len() as f64;
    let mean = sum.map(&mut |_, t| Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x / n).collect()).unwrap());
    let mut adam = Adam::new(
        AdamHyper {
            lr: cfg.learning_rate,
            ..AdamHyper::default()
        },
        &model.params,
    );
    adam.update(&mut model.params, &mean).unwrap();

    assert!((out.history[0].train_loss - loss / n).abs() < 1e-12);
    let mut a = Vec::new();
    out.last.params.visit(&mut |_, t| a.extend_from_slice(t.data()));
    let mut b = Vec::new();
    model.params.visit(&mut |_, t| b.extend_from_slice(t.data()));
    assert!(support::max_abs_diff(&a, &b) < 1e-12);
}

#[test]
fn same_seed_same_history() {
    let (data, vocab) = dataset(12, 4);
    let cfg = small_config(&vocab, CellKind::Gru, true);
    let a = vidcap::training::train(&data, &vocab, &cfg, |_| {}).unwrap();
    let b = vidcap::training::train(&data, &vocab, &cfg, |_| {}).unwrap();
    assert_eq!(
        vidcap::training::history_tsv(&a.history),
        vidcap::training::history_tsv(&b.history)
    );
    assert_eq!(bits(&a.last.params), bits(&b.last.params));
    let best = a.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(a.history[a.best.epoch - 1].val_loss, best);
}

#[test]
fn training_reduces_loss() {
    let (data, vocab) = dataset(8, 5);
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 1e-2,
        ..small_config(&vocab, CellKind::Lstm, false)
    };
    let out = fit(&data, &[], &vocab, &cfg, |_| {}).unwrap();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn checkpoint_round_trip_preserves_decoding() {
    let (data, vocab) = dataset(8, 6);
    let cfg = small_config(&vocab, CellKind::Lstm, true);
    let out = fit(&data[..6], &data[6..], &vocab, &cfg, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &out.last).unwrap();
    let loaded: Checkpoint = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.vocab_hash, vocab.hash());
    assert_eq!(bits(&loaded.params), bits(&out.last.params));
    assert_eq!(loaded.adam, out.last.adam);

    let (a, b) = (out.last.model().unwrap(), loaded.model().unwrap());
    let mut r = rng(7);
    for _ in 0..10 {
        let f = random_tensor(&mut r, &[4, 8], 1.5);
        assert_eq!(a.greedy_decode(&f).unwrap(), b.greedy_decode(&f).unwrap());
    }
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let (data, vocab) = dataset(4, 0);
    let mut cfg = small_config(&vocab, CellKind::Gru, false);
    cfg.model.vocab_size += 1;
    assert!(matches!(fit(&data, &[], &vocab, &cfg, |_| {}), Err(Error::Usage(_))));
}

proptest! {
    #[test]
    fn loss_is_non_negative(seed in 0u64..1000, t in 1usize..5, v in 2usize..6) {
        let logits = random_tensor(&mut rng(seed), &[t, v], 10.0);
        let targets: Vec<usize> = (0..t).map(|i| (i + seed as usize) % v).collect();
        let got = cross_entropy_loss(&logits, &targets, &vec![true; t]).unwrap();
        prop_assert!(got.loss >= 0.0);
    }
}
