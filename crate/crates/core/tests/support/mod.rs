//! Independent reference implementations used as test oracles.
//!
//! Everything here works on plain `Vec<f64>` with explicit loops and never
//! calls the tape or the crate's kernels.

#![allow(dead_code)]

pub mod metric_ref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidcap::attention::AttentionParams;
use vidcap::cells::{CellParams, GruParams, LstmParams};
use vidcap::model::{ModelConfig, Seq2Seq};
use vidcap::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale)).unwrap()
}

pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Row vector `x` times matrix `w` (`[len(x), cols]`).
pub fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), rows);
    (0..cols)
        .map(|j| (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum())
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Softmax first, then the natural log of each entry.
pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    softmax(v).iter().map(|p| p.ln()).collect()
}

fn gate(x: &[f64], u: &Tensor, h: &[f64], w: &Tensor, b: &Tensor, f: fn(f64) -> f64) -> Vec<f64> {
    let xu = vecmat(x, u);
    let hw = vecmat(h, w);
    (0..b.len()).map(|j| f(xu[j] + hw[j] + b.data()[j])).collect()
}

/// One LSTM step, returning `(h, c)`.
pub fn lstm_ref(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
    let i = gate(x, &p.u_i, h, &p.w_i, &p.b_i, sigmoid);
    let f = gate(x, &p.u_f, h, &p.w_f, &p.b_f, sigmoid);
    let o = gate(x, &p.u_o, h, &p.w_o, &p.b_o, sigmoid);
    let g = gate(x, &p.u_g, h, &p.w_g, &p.b_g, f64::tanh);
    let c_new: Vec<f64> = (0..c.len()).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
    let h_new = (0..c.len()).map(|j| c_new[j].tanh() * o[j]).collect();
    (h_new, c_new)
}

pub fn gru_ref(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
    let z = gate(x, &p.w_zx, h, &p.w_zh, &p.b_z, sigmoid);
    let r = gate(x, &p.w_rx, h, &p.w_rh, &p.b_r, sigmoid);
    let rh: Vec<f64> = (0..h.len()).map(|j| r[j] * h[j]).collect();
    let cand = gate(x, &p.w_hx, &rh, &p.w_hh, &p.b_h, f64::tanh);
    (0..h.len()).map(|j| z[j] * h[j] + (1.0 - z[j]) * cand[j]).collect()
}

/// `(h, c)`; `c` is empty for GRU.
pub fn cell_ref(x: &[f64], h: &[f64], c: &[f64], p: &CellParams) -> (Vec<f64>, Vec<f64>) {
    match p {
        CellParams::Lstm(p) => lstm_ref(x, h, c, p),
        CellParams::Gru(p) => (gru_ref(x, h, p), Vec::new()),
    }
}

/// Per-scalar additive attention, returning `(weights, context)`.
pub fn attention_ref(s: &[f64], rows: &[Vec<f64>], p: &AttentionParams) -> (Vec<f64>, Vec<f64>) {
    let d_a = p.v.len();
    let d_h = s.len();
    let wd = p.w_dec.data();
    let we = p.w_enc.data();
    let mut scores = Vec::with_capacity(rows.len());
    for row in rows {
        let mut e = 0.0;
        for a in 0..d_a {
            let mut pre = 0.0;
            for i in 0..d_h {
                pre += s[i] * wd[i * d_a + a] + row[i] * we[i * d_a + a];
            }
            e += p.v.data()[a] * pre.tanh();
        }
        scores.push(e);
    }
    let w = softmax(&scores);
    let mut ctx = vec![0.0; d_h];
    for (wj, row) in w.iter().zip(rows) {
        for i in 0..d_h {
            ctx[i] += wj * row[i];
        }
    }
    (w, ctx)
}

/// Scalar re-evaluation of the whole model.
pub struct RefModel<'a> {
    pub m: &'a Seq2Seq,
}

pub struct RefEncoded {
    pub states: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl<'a> RefModel<'a> {
    pub fn cfg(&self) -> &ModelConfig {
        &self.m.config
    }

    pub fn encode(&self, features: &Tensor) -> RefEncoded {
        let cfg = self.cfg();
        let mut h = vec![0.0; cfg.d_h];
        let mut c = match self.m.params.encoder {
            CellParams::Lstm(_) => vec![0.0; cfg.d_h],
            CellParams::Gru(_) => Vec::new(),
        };
        let mut states = Vec::new();
        for t in 0..cfg.t_enc {
            let (h2, c2) = cell_ref(features.row(t), &h, &c, &self.m.params.encoder);
            h = h2;
            c = c2;
            states.push(h.clone());
        }
        RefEncoded { states, h, c }
    }

    /// `(logits, h, c)` after feeding `prev`.
    pub fn step(&self, prev: usize, h: &[f64], c: &[f64], enc: &RefEncoded) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = &self.m.params;
        let emb = p.embedding.row(prev).to_vec();
        let ctx = p.attention.as_ref().map(|a| attention_ref(h, &enc.states, a).1);
        let (h2, c2) = cell_ref(&emb, h, c, &p.decoder);
        let mut fused = h2.clone();
        if let Some(ctx) = ctx {
            fused.extend(ctx);
        }
        let proj = vecmat(&fused, &p.out_w);
        let logits = proj.iter().zip(p.out_b.data()).map(|(a, b)| a + b).collect();
        (logits, h2, c2)
    }

    pub fn teacher_forced(&self, features: &Tensor, targets: &[usize]) -> Vec<Vec<f64>> {
        let enc = self.encode(features);
        let (mut h, mut c) = (enc.h.clone(), enc.c.clone());
        let mut prev = 1;
        let mut rows = Vec::new();
        for &t in targets {
            let (logits, h2, c2) = self.step(prev, &h, &c, &enc);
            rows.push(logits);
            h = h2;
            c = c2;
            prev = t;
        }
        rows
    }

    /// Every complete caption (ending in `<end>` within `t_dec_max` steps)
    /// with its summed log-probability.
    pub fn enumerate_complete(&self, features: &Tensor) -> Vec<(Vec<usize>, f64)> {
        let enc = self.encode(features);
        let mut out = Vec::new();
        let mut stack = vec![(Vec::<usize>::new(), 0.0, enc.h.clone(), enc.c.clone())];
        while let Some((tokens, lp, h, c)) = stack.pop() {
            if tokens.len() == self.cfg().t_dec_max {
                continue;
            }
            let prev = tokens.last().copied().unwrap_or(1);
            let (logits, h2, c2) = self.step(prev, &h, &c, &enc);
            let logp = log_softmax(&logits);
            for tok in 2..logits.len() {
                if tok == 2 {
                    out.push((tokens.clone(), lp + logp[tok]));
                } else {
                    let mut next = tokens.clone();
                    next.push(tok);
                    stack.push((next, lp + logp[tok], h2.clone(), c2.clone()));
                }
            }
        }
        out
    }

    /// Sum of stepwise log-softmax values along `tokens`, plus `<end>` if
    /// `complete`.
    pub fn rescore(&self, features: &Tensor, tokens: &[usize], complete: bool) -> f64 {
        let mut seq = tokens.to_vec();
        if complete {
            seq.push(2);
        }
        self.teacher_forced(features, &seq)
            .iter()
            .zip(&seq)
            .map(|(row, &t)| log_softmax(row)[t])
            .sum()
    }
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
