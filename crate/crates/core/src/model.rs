//! Encoder-decoder captioning model.
//!
//! The encoder runs a recurrent cell over the `[T_enc, d_feat]` feature
//! sequence. The decoder cell starts from the encoder's final state and is
//! fed token embeddings: `<start>` first, then either the ground-truth
//! previous token (teacher forcing) or its own previous choice (search).
//!
//! With attention on, each decoder step computes a context vector from the
//! *previous* decoder hidden state and concatenates it with the new cell
//! output before the output projection, so the cell input size does not
//! depend on whether attention is used.

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;

use crate::attention::{self, AttentionParams};
use crate::cells::{self, CellKind, CellParams, CellState};
use crate::tensor::kernels;
use crate::text::{END, PAD, START};
use crate::{rng, Error, Result, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub attention: bool,
    pub d_feat: usize,
    pub t_enc: usize,
    pub d_h: usize,
    pub d_emb: usize,
    pub vocab_size: usize,
    pub t_dec_max: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            attention: true,
            d_feat: 4096,
            t_enc: 28,
            d_h: 512,
            d_emb: 256,
            vocab_size: 1500,
            t_dec_max: 10,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_feat", self.d_feat),
            ("t_enc", self.t_enc),
            ("d_h", self.d_h),
            ("d_emb", self.d_emb),
            ("t_dec_max", self.t_dec_max),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::usage(format!("model config: {name} must be positive")));
            }
        }
        if self.vocab_size < 4 {
            return Err(Error::usage(format!(
                "model config: vocab_size must be at least 4, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Width of the vector fed to the output projection.
    pub fn projection_width(&self) -> usize {
        if self.attention {
            2 * self.d_h
        } else {
            self.d_h
        }
    }

    /// Report row label, e.g. `GRU+ATTENTION`.
    pub fn label(&self) -> String {
        let cell = self.cell.to_string().to_uppercase();
        if self.attention {
            format!("{cell}+ATTENTION")
        } else {
            cell
        }
    }

    /// `key = value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "cell = {}", self.cell).unwrap();
        writeln!(s, "attention = {}", if self.attention { "on" } else { "off" }).unwrap();
        writeln!(s, "d_feat = {}", self.d_feat).unwrap();
        writeln!(s, "t_enc = {}", self.t_enc).unwrap();
        writeln!(s, "d_h = {}", self.d_h).unwrap();
        writeln!(s, "d_emb = {}", self.d_emb).unwrap();
        writeln!(s, "vocab_size = {}", self.vocab_size).unwrap();
        writeln!(s, "t_dec_max = {}", self.t_dec_max).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        s
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::usage(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "cell" => self.cell = value.parse()?,
            "attention" => self.attention = parse_switch(value)?,
            "d_feat" => self.d_feat = num(key, value)?,
            "t_enc" => self.t_enc = num(key, value)?,
            "d_h" => self.d_h = num(key, value)?,
            "d_emb" => self.d_emb = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "t_dec_max" => self.t_dec_max = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::usage(format!("unknown model config key {key:?}"))),
        }
        Ok(())
    }
}

/// Parses `on`/`off` (also `true`/`false`).
pub fn parse_switch(value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::usage(format!("expected on or off, got {value:?}"))),
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} attention={} d_feat={} t_enc={} d_h={} d_emb={} vocab={} t_dec={} seed={}",
            self.cell,
            if self.attention { "on" } else { "off" },
            self.d_feat,
            self.t_enc,
            self.d_h,
            self.d_emb,
            self.vocab_size,
            self.t_dec_max,
            self.seed
        )
    }
}

/// All trainable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: CellParams<T>,
    pub decoder: CellParams<T>,
    pub attention: Option<AttentionParams<T>>,
    /// `[vocab_size, d_emb]`
    pub embedding: T,
    /// `[projection_width, vocab_size]`
    pub out_w: T,
    /// `[vocab_size]`
    pub out_b: T,
}

impl ModelParams {
    /// Seeded uniform initialisation from the config's `init` stream.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(cfg.seed, rng::INIT);
        let encoder = CellParams::init(cfg.cell, cfg.d_feat, cfg.d_h, &mut rng);
        let decoder = CellParams::init(cfg.cell, cfg.d_emb, cfg.d_h, &mut rng);
        let attention = cfg
            .attention
            .then(|| AttentionParams::init(cfg.d_h, cfg.d_h, &mut rng));
        let mut uniform = |shape: [usize; 2], k: f64| {
            use rand::Rng;
            Tensor::from_fn(shape, |_| rng.random_range(-k..k))
        };
        let embedding = uniform([cfg.vocab_size, cfg.d_emb], 1.0 / (cfg.d_emb as f64).sqrt())?;
        let width = cfg.projection_width();
        let out_w = uniform([width, cfg.vocab_size], 1.0 / (width as f64).sqrt())?;
        Ok(Self {
            encoder,
            decoder,
            attention,
            embedding,
            out_w,
            out_b: Tensor::zeros([cfg.vocab_size]),
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            encoder: CellParams::zeros(cfg.cell, cfg.d_feat, cfg.d_h),
            decoder: CellParams::zeros(cfg.cell, cfg.d_emb, cfg.d_h),
            attention: cfg.attention.then(|| AttentionParams::zeros(cfg.d_h, cfg.d_h)),
            embedding: Tensor::zeros([cfg.vocab_size, cfg.d_emb]),
            out_w: Tensor::zeros([cfg.projection_width(), cfg.vocab_size]),
            out_b: Tensor::zeros([cfg.vocab_size]),
        })
    }

    /// Checks every tensor's shape against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::dim(format!("{what}: dims {got:?}, config wants {want:?}")))
            }
        };
        if self.encoder.kind() != cfg.cell || self.decoder.kind() != cfg.cell {
            return Err(Error::dim(format!("cell kinds do not match config ({})", cfg.cell)));
        }
        expect("encoder", self.encoder.dims()?, (cfg.d_feat, cfg.d_h))?;
        expect("decoder", self.decoder.dims()?, (cfg.d_emb, cfg.d_h))?;
        match (&self.attention, cfg.attention) {
            (Some(a), true) => expect("attention", a.dims()?, (cfg.d_h, cfg.d_h))?,
            (None, false) => {}
            _ => return Err(Error::dim("attention params do not match config")),
        }
        let shapes = [
            ("embedding", &self.embedding, vec![cfg.vocab_size, cfg.d_emb]),
            ("output.w", &self.out_w, vec![cfg.projection_width(), cfg.vocab_size]),
            ("output.b", &self.out_b, vec![cfg.vocab_size]),
        ];
        for (name, t, want) in shapes {
            if t.shape() != want.as_slice() {
                return Err(Error::dim(format!(
                    "{name}: shape {:?}, config wants {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Square root of the sum of squares over every tensor.
    pub fn global_norm(&self) -> f64 {
        let mut total = 0.0;
        self.visit(&mut |_, t| total += t.sum_sq());
        total.sqrt()
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(&mut |n, t| f(&format!("encoder.{n}"), t)),
            decoder: self.decoder.map(&mut |n, t| f(&format!("decoder.{n}"), t)),
            attention: self
                .attention
                .as_ref()
                .map(|a| a.map(&mut |n, t| f(&format!("attention.{n}"), t))),
            embedding: f("embedding", &self.embedding),
            out_w: f("output.w", &self.out_w),
            out_b: f("output.b", &self.out_b),
        }
    }

    /// Visits every tensor in a fixed order with its dotted name.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&str, &'a T)) {
        self.encoder.visit(&mut |n, t| f(&format!("encoder.{n}"), t));
        self.decoder.visit(&mut |n, t| f(&format!("decoder.{n}"), t));
        if let Some(a) = &self.attention {
            a.visit(&mut |n, t| f(&format!("attention.{n}"), t));
        }
        f("embedding", &self.embedding);
        f("output.w", &self.out_w);
        f("output.b", &self.out_b);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&str, &'a mut T)) {
        self.encoder.visit_mut(&mut |n, t| f(&format!("encoder.{n}"), t));
        self.decoder.visit_mut(&mut |n, t| f(&format!("decoder.{n}"), t));
        if let Some(a) = &mut self.attention {
            a.visit_mut(&mut |n, t| f(&format!("attention.{n}"), t));
        }
        f("embedding", &mut self.embedding);
        f("output.w", &mut self.out_w);
        f("output.b", &mut self.out_b);
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n.to_string()));
        names
    }
}

/// Encoder output on a tape.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    /// `[T_enc, d_h]`
    pub states: Var,
    pub final_state: CellState<Var>,
    /// Attention key projection `[T_enc, d_a]`, when attention is on.
    pub keys: Option<Var>,
}

pub fn encode_graph(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    features: Var,
) -> Result<EncodedVars> {
    let want = [cfg.t_enc, cfg.d_feat];
    if tape.shape(features) != want {
        return Err(Error::dim(format!(
            "encode: features {:?}, config wants {want:?}",
            tape.shape(features)
        )));
    }
    let init = CellState::zeros(cfg.cell, cfg.d_h).to_tape(tape);
    let unrolled = cells::unroll(tape, &p.encoder, features, &init)?;
    let keys = match &p.attention {
        Some(a) => Some(attention::project_keys(tape, unrolled.states, a)?),
        None => None,
    };
    Ok(EncodedVars {
        states: unrolled.states,
        final_state: unrolled.last().clone(),
        keys,
    })
}

/// One decoder step from `prev_token`; returns unnormalized logits `[V]`.
pub fn decode_step_graph(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    prev_token: usize,
    state: &CellState<Var>,
    enc: &EncodedVars,
) -> Result<(Var, CellState<Var>)> {
    if prev_token >= cfg.vocab_size {
        return Err(Error::usage(format!(
            "decode_step: token {prev_token} out of range for vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let emb = tape.embedding(p.embedding, prev_token)?;
    let context = match (&p.attention, enc.keys) {
        (Some(a), Some(keys)) => {
            let w = attention::weights_from_keys(tape, state.h, keys, a)?;
            Some(attention::context_vector(tape, w, enc.states)?)
        }
        (None, _) => None,
        (Some(_), None) => return Err(Error::usage("decode_step: encoder keys missing")),
    };
    let (next, _) = cells::cell_step(tape, emb, state, &p.decoder)?;
    let fused = match context {
        Some(ctx) => tape.concat(&[next.h, ctx])?,
        None => next.h,
    };
    let proj = tape.matmul(fused, p.out_w)?;
    let logits = tape.add(proj, p.out_b)?;
    Ok((logits, next))
}

/// Decoder logits `[T, V]` when fed `<start>, targets[0], …, targets[T−2]`.
pub fn teacher_forced_graph(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    features: Var,
    targets: &[usize],
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::usage("teacher forcing needs at least one target"));
    }
    if targets.len() > cfg.t_dec_max {
        return Err(Error::usage(format!(
            "teacher forcing: {} targets exceed t_dec_max {}",
            targets.len(),
            cfg.t_dec_max
        )));
    }
    let enc = encode_graph(tape, cfg, p, features)?;
    let mut state = enc.final_state.clone();
    let mut rows = Vec::with_capacity(targets.len());
    let mut prev = START;
    for &target in targets {
        let (logits, next) = decode_step_graph(tape, cfg, p, prev, &state, &enc)?;
        rows.push(logits);
        state = next;
        prev = target;
    }
    tape.stack_rows(&rows)
}

/// Encoder output as plain values, reusable across decoder steps.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub states: Tensor,
    pub final_state: CellState<Tensor>,
    keys: Option<Tensor>,
}

impl Encoded {
    fn to_tape(&self, tape: &mut Tape) -> EncodedVars {
        EncodedVars {
            states: tape.constant(self.states.clone()),
            final_state: self.final_state.to_tape(tape),
            keys: self.keys.as_ref().map(|k| tape.constant(k.clone())),
        }
    }
}

/// A decoded (partial or complete) caption.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Content tokens; never contains `<pad>`, `<start>` or `<end>`.
    pub tokens: Vec<usize>,
    /// Sum of per-step log-probabilities, including `<end>` when complete.
    pub log_prob: f64,
    /// Whether `<end>` was emitted.
    pub complete: bool,
}

impl Hypothesis {
    /// Number of decoder steps taken.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.complete)
    }

    /// Ranking score: summed log-probability, divided by steps when
    /// `length_norm` is set.
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm && self.steps() > 0 {
            self.log_prob / self.steps() as f64
        } else {
            self.log_prob
        }
    }
}

/// Higher score first, then lexicographically smaller token sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Whether search may emit `token`. `<pad>` and `<start>` are never emitted.
pub fn emittable(token: usize) -> bool {
    token != PAD && token != START
}

/// A configured model ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Seq2Seq {
    /// Freshly initialised model.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    /// Places every parameter on `tape`, differentiable or not.
    pub fn vars(&self, tape: &mut Tape, trainable: bool) -> ModelParams<Var> {
        self.params.map(&mut |_, t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    pub fn encode(&self, features: &Tensor) -> Result<Encoded> {
        let mut tape = Tape::new();
        let p = self.vars(&mut tape, false);
        let f = tape.constant(features.clone());
        let enc = encode_graph(&mut tape, &self.config, &p, f)?;
        Ok(Encoded {
            states: tape.value(enc.states).clone(),
            final_state: enc.final_state.values(&tape),
            keys: enc.keys.map(|k| tape.value(k).clone()),
        })
    }

    /// Logits `[V]` and next decoder state.
    pub fn decode_step(
        &self,
        prev_token: usize,
        state: &CellState<Tensor>,
        enc: &Encoded,
    ) -> Result<(Tensor, CellState<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.vars(&mut tape, false);
        let enc_vars = enc.to_tape(&mut tape);
        let s = state.to_tape(&mut tape);
        let (logits, next) = decode_step_graph(&mut tape, &self.config, &p, prev_token, &s, &enc_vars)?;
        Ok((tape.value(logits).clone(), next.values(&tape)))
    }

    /// Teacher-forced logits `[T, V]`.
    pub fn teacher_forced_logits(&self, features: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.vars(&mut tape, false);
        let f = tape.constant(features.clone());
        let logits = teacher_forced_graph(&mut tape, &self.config, &p, f, targets)?;
        Ok(tape.value(logits).clone())
    }

    /// Argmax decoding from `<start>` until `<end>` or `t_dec_max` steps.
    /// The result excludes `<start>` and `<end>`.
    pub fn greedy_decode(&self, features: &Tensor) -> Result<Vec<usize>> {
        let enc = self.encode(features)?;
        let mut state = enc.final_state.clone();
        let mut prev = START;
        let mut out = Vec::new();
        for _ in 0..self.config.t_dec_max {
            let (logits, next) = self.decode_step(prev, &state, &enc)?;
            let token = best_emittable(logits.data());
            if token == END {
                break;
            }
            out.push(token);
            prev = token;
            state = next;
        }
        Ok(out)
    }

    /// Beam search keeping the `width` best expansions per step.
    ///
    /// Expansions ending in `<end>` move to a completed pool and still count
    /// against the width at the step they are produced. Returns the best
    /// completed hypothesis, or the best live one if none completed within
    /// `t_dec_max` steps.
    pub fn beam_decode(&self, features: &Tensor, width: usize, length_norm: bool) -> Result<Hypothesis> {
        if width == 0 {
            return Err(Error::usage("beam width must be at least 1"));
        }
        let enc = self.encode(features)?;
        let mut live = vec![(
            Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                complete: false,
            },
            enc.final_state.clone(),
        )];
        let mut completed: Vec<Hypothesis> = Vec::new();

        for _ in 0..self.config.t_dec_max {
            let mut expansions = Vec::new();
            let mut next_states = Vec::with_capacity(live.len());
            for (parent, (hyp, state)) in live.iter().enumerate() {
                let prev = hyp.tokens.last().copied().unwrap_or(START);
                let (logits, next) = self.decode_step(prev, state, &enc)?;
                next_states.push(next);
                let log_probs = kernels::log_softmax_rows(logits.data(), logits.len());
                for (token, lp) in log_probs.into_iter().enumerate() {
                    if !emittable(token) {
                        continue;
                    }
                    let complete = token == END;
                    let mut tokens = hyp.tokens.clone();
                    if !complete {
                        tokens.push(token);
                    }
                    let cand = Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + lp,
                        complete,
                    };
                    expansions.push((cand, parent));
                }
            }
            expansions.sort_by(|(a, _), (b, _)| {
                rank((a.score(length_norm), &a.tokens), (b.score(length_norm), &b.tokens))
                    .then(a.complete.cmp(&b.complete))
            });
            expansions.truncate(width);

            live = Vec::with_capacity(width);
            for (hyp, parent) in expansions {
                if hyp.complete {
                    completed.push(hyp);
                } else {
                    live.push((hyp, next_states[parent].clone()));
                }
            }
            if live.is_empty() {
                break;
            }
        }

        let pool: Vec<Hypothesis> = if completed.is_empty() {
            live.into_iter().map(|(h, _)| h).collect()
        } else {
            completed
        };
        Ok(pool
            .into_iter()
            .min_by(|a, b| rank((a.score(length_norm), &a.tokens), (b.score(length_norm), &b.tokens)))
            .expect("beam search keeps at least one hypothesis"))
    }
}

/// Argmax over emittable tokens, lowest id on ties.
pub fn best_emittable(logits: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (id, &v) in logits.iter().enumerate() {
        if emittable(id) && best.is_none_or(|b| v > logits[b]) {
            best = Some(id);
        }
    }
    best.expect("vocabulary has emittable tokens")
}
