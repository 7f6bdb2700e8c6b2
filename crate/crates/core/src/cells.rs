//! LSTM and GRU cells.
//!
//! Row-vector convention throughout: a step computes `x·U + h·W + b` with
//! `x: [d_in]`, `U: [d_in, d_h]`, `W: [d_h, d_h]`, `b: [d_h]`.
//!
//! LSTM:
//!
//! ```text
//! i  = σ(x·U_i + h·W_i + b_i)        f = σ(x·U_f + h·W_f + b_f)
//! o  = σ(x·U_o + h·W_o + b_o)        g = tanh(x·U_g + h·W_g + b_g)
//! c' = f ⊙ c + i ⊙ g                 h' = tanh(c') ⊙ o
//! ```
//!
//! GRU:
//!
//! ```text
//! z  = σ(x·W_zx + h·W_zh + b_z)      r = σ(x·W_rx + h·W_rh + b_r)
//! ĥ  = tanh(x·W_hx + (r ⊙ h)·W_hh + b_h)
//! h' = z ⊙ h + (1 − z) ⊙ ĥ
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::params::param_struct;
use crate::{Error, Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::usage(format!(
                "unknown cell kind {other:?} (expected lstm or gru)"
            ))),
        }
    }
}

param_struct! {
    /// LSTM weights: input projections `u_*: [d_in, d_h]`, recurrent
    /// projections `w_*: [d_h, d_h]` and biases `b_*: [d_h]` for the input,
    /// forget and output gates and the candidate cell update.
    pub struct LstmParams {
        u_i, u_f, u_o, u_g,
        w_i, w_f, w_o, w_g,
        b_i, b_f, b_o, b_g,
    }
}

param_struct! {
    /// GRU weights: input projections `w_*x: [d_in, d_h]`, recurrent
    /// projections `w_*h: [d_h, d_h]` and biases `[d_h]` for the update gate,
    /// reset gate and candidate state.
    pub struct GruParams {
        w_zx, w_rx, w_hx,
        w_zh, w_rh, w_hh,
        b_z, b_r, b_h,
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound))
        .expect("initialiser shapes are positive")
}

impl LstmParams {
    /// Uniform(−k, k) with `k = 1/√d_h` for every entry.
    pub fn init(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (d_h as f64).sqrt();
        let mut input = || uniform(rng, &[d_in, d_h], k);
        let (u_i, u_f, u_o, u_g) = (input(), input(), input(), input());
        let mut hidden = || uniform(rng, &[d_h, d_h], k);
        let (w_i, w_f, w_o, w_g) = (hidden(), hidden(), hidden(), hidden());
        let mut bias = || uniform(rng, &[d_h], k);
        let (b_i, b_f, b_o, b_g) = (bias(), bias(), bias(), bias());
        Self {
            u_i, u_f, u_o, u_g,
            w_i, w_f, w_o, w_g,
            b_i, b_f, b_o, b_g,
        }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        let (x, h, b) = (
            Tensor::zeros([d_in, d_h]),
            Tensor::zeros([d_h, d_h]),
            Tensor::zeros([d_h]),
        );
        Self {
            u_i: x.clone(), u_f: x.clone(), u_o: x.clone(), u_g: x,
            w_i: h.clone(), w_f: h.clone(), w_o: h.clone(), w_g: h,
            b_i: b.clone(), b_f: b.clone(), b_o: b.clone(), b_g: b,
        }
    }

    /// `(d_in, d_h)`, after checking every tensor agrees with them.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let &[d_in, d_h] = self.u_i.shape() else {
            return Err(Error::dim(format!("lstm u_i must be a matrix, got {:?}", self.u_i.shape())));
        };
        let mut bad = None;
        self.visit(&mut |name, t| {
            let want: &[usize] = match name.as_bytes()[0] {
                b'u' => &[d_in, d_h],
                b'w' => &[d_h, d_h],
                _ => &[d_h],
            };
            if bad.is_none() && t.shape() != want {
                bad = Some(format!("lstm {name}: expected {want:?}, got {:?}", t.shape()));
            }
        });
        bad.map_or(Ok((d_in, d_h)), |m| Err(Error::dim(m)))
    }
}

impl GruParams {
    /// Uniform(−k, k) with `k = 1/√d_h` for every entry.
    pub fn init(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (d_h as f64).sqrt();
        let mut input = || uniform(rng, &[d_in, d_h], k);
        let (w_zx, w_rx, w_hx) = (input(), input(), input());
        let mut hidden = || uniform(rng, &[d_h, d_h], k);
        let (w_zh, w_rh, w_hh) = (hidden(), hidden(), hidden());
        let mut bias = || uniform(rng, &[d_h], k);
        let (b_z, b_r, b_h) = (bias(), bias(), bias());
        Self { w_zx, w_rx, w_hx, w_zh, w_rh, w_hh, b_z, b_r, b_h }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        let (x, h, b) = (
            Tensor::zeros([d_in, d_h]),
            Tensor::zeros([d_h, d_h]),
            Tensor::zeros([d_h]),
        );
        Self {
            w_zx: x.clone(), w_rx: x.clone(), w_hx: x,
            w_zh: h.clone(), w_rh: h.clone(), w_hh: h,
            b_z: b.clone(), b_r: b.clone(), b_h: b,
        }
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        let &[d_in, d_h] = self.w_zx.shape() else {
            return Err(Error::dim(format!("gru w_zx must be a matrix, got {:?}", self.w_zx.shape())));
        };
        let mut bad = None;
        self.visit(&mut |name, t| {
            let want: &[usize] = if name.starts_with('b') {
                &[d_h]
            } else if name.ends_with('x') {
                &[d_in, d_h]
            } else {
                &[d_h, d_h]
            };
            if bad.is_none() && t.shape() != want {
                bad = Some(format!("gru {name}: expected {want:?}, got {:?}", t.shape()));
            }
        });
        bad.map_or(Ok((d_in, d_h)), |m| Err(Error::dim(m)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams<T = Tensor> {
    Lstm(LstmParams<T>),
    Gru(GruParams<T>),
}

impl CellParams {
    pub fn init(kind: CellKind, d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::init(d_in, d_h, rng)),
            CellKind::Gru => CellParams::Gru(GruParams::init(d_in, d_h, rng)),
        }
    }

    pub fn zeros(kind: CellKind, d_in: usize, d_h: usize) -> Self {
        match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(d_in, d_h)),
            CellKind::Gru => CellParams::Gru(GruParams::zeros(d_in, d_h)),
        }
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        match self {
            CellParams::Lstm(p) => p.dims(),
            CellParams::Gru(p) => p.dims(),
        }
    }
}

impl<T> CellParams<T> {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&str, &T) -> U) -> CellParams<U> {
        match self {
            CellParams::Lstm(p) => CellParams::Lstm(p.map(f)),
            CellParams::Gru(p) => CellParams::Gru(p.map(f)),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&str, &'a T)) {
        match self {
            CellParams::Lstm(p) => p.visit(f),
            CellParams::Gru(p) => p.visit(f),
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&str, &'a mut T)) {
        match self {
            CellParams::Lstm(p) => p.visit_mut(f),
            CellParams::Gru(p) => p.visit_mut(f),
        }
    }
}

/// Recurrent state: hidden vector, plus the cell vector for LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T = Var> {
    pub h: T,
    pub c: Option<T>,
}

impl CellState<Tensor> {
    pub fn zeros(kind: CellKind, d_h: usize) -> Self {
        Self {
            h: Tensor::zeros([d_h]),
            c: (kind == CellKind::Lstm).then(|| Tensor::zeros([d_h])),
        }
    }

    /// Places the state on a tape as constants.
    pub fn to_tape(&self, tape: &mut Tape) -> CellState<Var> {
        CellState {
            h: tape.constant(self.h.clone()),
            c: self.c.as_ref().map(|c| tape.constant(c.clone())),
        }
    }
}

impl CellState<Var> {
    pub fn values(&self, tape: &Tape) -> CellState<Tensor> {
        CellState {
            h: tape.value(self.h).clone(),
            c: self.c.map(|c| tape.value(c).clone()),
        }
    }
}

/// Gate activations captured during one step.
#[derive(Clone, Debug, PartialEq)]
pub enum GateTrace {
    Lstm {
        input: Tensor,
        forget: Tensor,
        output: Tensor,
        candidate: Tensor,
    },
    Gru {
        update: Tensor,
        reset: Tensor,
        candidate: Tensor,
    },
}

impl GateTrace {
    /// Gates produced by a sigmoid; entries lie in (0, 1).
    pub fn sigmoid_gates(&self) -> Vec<&Tensor> {
        match self {
            GateTrace::Lstm { input, forget, output, .. } => vec![input, forget, output],
            GateTrace::Gru { update, reset, .. } => vec![update, reset],
        }
    }

    /// Activations produced by a tanh; entries lie in (−1, 1).
    pub fn tanh_gates(&self) -> Vec<&Tensor> {
        match self {
            GateTrace::Lstm { candidate, .. } | GateTrace::Gru { candidate, .. } => vec![candidate],
        }
    }
}

/// `x·in_w + h·hid_w + bias`
fn affine(tape: &mut Tape, x: Var, in_w: Var, h: Var, hid_w: Var, bias: Var) -> Result<Var> {
    let xu = tape.matmul(x, in_w)?;
    let hw = tape.matmul(h, hid_w)?;
    let sum = tape.add(xu, hw)?;
    tape.add(sum, bias)
}

fn check_input(tape: &Tape, x: Var) -> Result<()> {
    if tape.shape(x).len() != 1 {
        return Err(Error::dim(format!(
            "cell input must be a vector, got {:?}",
            tape.shape(x)
        )));
    }
    Ok(())
}

pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    prev: &CellState<Var>,
    p: &LstmParams<Var>,
) -> Result<(CellState<Var>, GateTrace)> {
    check_input(tape, x)?;
    let c_prev = prev
        .c
        .ok_or_else(|| Error::usage("lstm step needs a cell state"))?;
    let h = prev.h;
    let pre_i = affine(tape, x, p.u_i, h, p.w_i, p.b_i)?;
    let i = tape.sigmoid(pre_i)?;
    let pre_f = affine(tape, x, p.u_f, h, p.w_f, p.b_f)?;
    let f = tape.sigmoid(pre_f)?;
    let pre_o = affine(tape, x, p.u_o, h, p.w_o, p.b_o)?;
    let o = tape.sigmoid(pre_o)?;
    let pre_g = affine(tape, x, p.u_g, h, p.w_g, p.b_g)?;
    let g = tape.tanh(pre_g)?;

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c)?;
    let h_new = tape.mul(c_act, o)?;

    let trace = GateTrace::Lstm {
        input: tape.value(i).clone(),
        forget: tape.value(f).clone(),
        output: tape.value(o).clone(),
        candidate: tape.value(g).clone(),
    };
    Ok((CellState { h: h_new, c: Some(c) }, trace))
}

pub fn gru_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    p: &GruParams<Var>,
) -> Result<(Var, GateTrace)> {
    check_input(tape, x)?;
    let pre_z = affine(tape, x, p.w_zx, h_prev, p.w_zh, p.b_z)?;
    let z = tape.sigmoid(pre_z)?;
    let pre_r = affine(tape, x, p.w_rx, h_prev, p.w_rh, p.b_r)?;
    let r = tape.sigmoid(pre_r)?;
    let gated = tape.mul(r, h_prev)?;
    let pre_h = affine(tape, x, p.w_hx, gated, p.w_hh, p.b_h)?;
    let cand = tape.tanh(pre_h)?;

    let ones = tape.constant(Tensor::ones(tape.shape(z).to_vec()));
    let one_minus_z = tape.sub(ones, z)?;
    let keep = tape.mul(z, h_prev)?;
    let write = tape.mul(one_minus_z, cand)?;
    let h = tape.add(keep, write)?;

    let trace = GateTrace::Gru {
        update: tape.value(z).clone(),
        reset: tape.value(r).clone(),
        candidate: tape.value(cand).clone(),
    };
    Ok((h, trace))
}

/// One step of either cell kind.
pub fn cell_step(
    tape: &mut Tape,
    x: Var,
    prev: &CellState<Var>,
    p: &CellParams<Var>,
) -> Result<(CellState<Var>, GateTrace)> {
    match p {
        CellParams::Lstm(p) => lstm_step(tape, x, prev, p),
        CellParams::Gru(p) => {
            let (h, trace) = gru_step(tape, x, prev.h, p)?;
            Ok((CellState { h, c: None }, trace))
        }
    }
}

/// Result of running a cell over a sequence.
#[derive(Debug)]
pub struct Unrolled {
    /// Hidden states stacked as `[T, d_h]`.
    pub states: Var,
    /// Full state after each step.
    pub steps: Vec<CellState<Var>>,
    pub traces: Vec<GateTrace>,
}

impl Unrolled {
    pub fn last(&self) -> &CellState<Var> {
        self.steps.last().expect("unroll produces at least one step")
    }
}

/// Folds the cell over the rows of `inputs: [T, d_in]` starting from `init`.
pub fn unroll(
    tape: &mut Tape,
    p: &CellParams<Var>,
    inputs: Var,
    init: &CellState<Var>,
) -> Result<Unrolled> {
    let &[steps, _] = tape.shape(inputs) else {
        return Err(Error::dim(format!(
            "unroll: inputs must be [T, d_in], got {:?}",
            tape.shape(inputs)
        )));
    };
    let mut state = init.clone();
    let mut out = Unrolled {
        states: inputs,
        steps: Vec::with_capacity(steps),
        traces: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let x = tape.slice_row(inputs, t)?;
        let (next, trace) = cell_step(tape, x, &state, p)?;
        out.steps.push(next.clone());
        out.traces.push(trace);
        state = next;
    }
    let hs: Vec<Var> = out.steps.iter().map(|s| s.h).collect();
    out.states = tape.stack_rows(&hs)?;
    Ok(out)
}
