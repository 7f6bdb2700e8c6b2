//! Recurrent encoder-decoder video captioning.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode tape with a fixed set
//!   of differentiable primitives, plus a finite-difference gradient checker.
//! - [`cells`]: LSTM and GRU single-step cells and sequence unrolling.
//! - [`attention`]: additive attention over encoder states.
//! - [`model`]: the encoder-decoder, teacher forcing, greedy and beam search.
//! - [`text`]: Devanagari-aware tokenizer, vocabulary and caption encoding.
//! - [`features`]: frame sampling, the `.vcf` feature file format, manifests
//!   and a synthetic dataset generator.
//! - [`training`]: masked cross-entropy, Adam, dataset splitting, the epoch
//!   loop and checkpoints.
//! - [`metrics`]: BLEU, ROUGE-L, exact-match METEOR and CIDEr.

pub mod attention;
pub mod cells;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
mod params;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
