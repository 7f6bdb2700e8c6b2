//! Additive attention over encoder states.
//!
//! Score for encoder row `j` given decoder state `s`:
//! `e_j = v · tanh(s·W_dec + H_j·W_enc)`, weights `softmax(e)`, context
//! `Σ_j weights_j · H_j`. The key projection `H·W_enc` does not depend on the
//! decoder state and is computed once per sequence by [`project_keys`].

use rand::Rng;

use crate::params::param_struct;
use crate::{Error, Result, Tape, Tensor, Var};

param_struct! {
    /// `w_dec: [d_h, d_a]`, `w_enc: [d_h, d_a]`, `v: [d_a]`.
    pub struct AttentionParams { w_dec, w_enc, v }
}

impl AttentionParams {
    /// Uniform(−k, k) with `k = 1/√d_a`.
    pub fn init(d_h: usize, d_a: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (d_a as f64).sqrt();
        let mut draw = |shape: Vec<usize>| {
            Tensor::from_fn(shape, |_| rng.random_range(-k..k)).expect("positive shape")
        };
        Self {
            w_dec: draw(vec![d_h, d_a]),
            w_enc: draw(vec![d_h, d_a]),
            v: draw(vec![d_a]),
        }
    }

    pub fn zeros(d_h: usize, d_a: usize) -> Self {
        Self {
            w_dec: Tensor::zeros([d_h, d_a]),
            w_enc: Tensor::zeros([d_h, d_a]),
            v: Tensor::zeros([d_a]),
        }
    }

    /// `(d_h, d_a)`, after checking the three tensors agree.
    pub fn dims(&self) -> Result<(usize, usize)> {
        match (self.w_dec.shape(), self.w_enc.shape(), self.v.shape()) {
            (&[d_h, d_a], &[d_h2, d_a2], &[d_a3]) if d_h == d_h2 && d_a == d_a2 && d_a == d_a3 => {
                Ok((d_h, d_a))
            }
            (a, b, c) => Err(Error::dim(format!(
                "attention params disagree: w_dec {a:?}, w_enc {b:?}, v {c:?}"
            ))),
        }
    }
}

/// `H·W_enc`, shape `[T, d_a]`.
pub fn project_keys(tape: &mut Tape, encoder_states: Var, p: &AttentionParams<Var>) -> Result<Var> {
    if tape.shape(encoder_states).len() != 2 {
        return Err(Error::dim(format!(
            "attention: encoder states must be [T, d_h], got {:?}",
            tape.shape(encoder_states)
        )));
    }
    tape.matmul(encoder_states, p.w_enc)
}

/// Attention weights `[T]` from the decoder state and pre-projected keys.
pub fn weights_from_keys(
    tape: &mut Tape,
    query: Var,
    keys: Var,
    p: &AttentionParams<Var>,
) -> Result<Var> {
    let steps = tape.shape(keys)[0];
    let q = tape.matmul(query, p.w_dec)?;
    // Row-broadcast the query projection by stacking it T times.
    let tiled = tape.stack_rows(&vec![q; steps])?;
    let pre = tape.add(tiled, keys)?;
    let act = tape.tanh(pre)?;
    let scores = tape.matmul(act, p.v)?;
    tape.softmax(scores)
}

/// Attention weights `[T]` for decoder state `query: [d_h]` over
/// `encoder_states: [T, d_h]`.
pub fn attention_weights(
    tape: &mut Tape,
    query: Var,
    encoder_states: Var,
    p: &AttentionParams<Var>,
) -> Result<Var> {
    let keys = project_keys(tape, encoder_states, p)?;
    weights_from_keys(tape, query, keys, p)
}

/// Weighted sum of encoder rows, `[d_h]`.
pub fn context_vector(tape: &mut Tape, weights: Var, encoder_states: Var) -> Result<Var> {
    let w = tape.value(weights);
    let total: f64 = w.data().iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!(
            "context_vector: weights sum to {total}, expected 1"
        )));
    }
    match (tape.shape(weights), tape.shape(encoder_states)) {
        (&[t], &[t2, _]) if t == t2 => tape.matmul(weights, encoder_states),
        (a, b) => Err(Error::dim(format!(
            "context_vector: weights {a:?} do not match encoder states {b:?}"
        ))),
    }
}
