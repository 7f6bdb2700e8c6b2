//! Caption text handling: tokenization, vocabulary, and id encoding.
//!
//! Tokenization normalizes to NFC, splits on whitespace, and detaches the
//! danda `।`, double danda `॥` and ASCII `. , ! ? ; :` as standalone tokens.
//! The vocabulary reserves ids 0..4 for `<pad>`, `<start>`, `<end>`, `<unk>`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

fn is_detached(c: char) -> bool {
    matches!(c, '।' | '॥' | '.' | ',' | '!' | '?' | ';' | ':')
}

pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let mut tokens = Vec::new();
    for word in normalized.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if is_detached(c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// One reference caption for a video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub video_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Token ids under some vocabulary; empty until [`CaptionRecord::assign_ids`].
    pub ids: Vec<usize>,
}

impl CaptionRecord {
    pub fn new(video_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            video_id: video_id.into(),
            tokens: tokenize(&text),
            text,
            ids: Vec::new(),
        }
    }

    pub fn assign_ids(&mut self, vocab: &Vocab) {
        self.ids = vocab.encode(&self.tokens);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from tokens in id order; the first four must be
    /// the reserved specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(Error::usage(format!(
                "vocabulary must start with {SPECIALS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::usage(format!("invalid vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::usage(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// `token<TAB>id` lines, sorted by id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            writeln!(out, "{tok}\t{id}").unwrap();
        }
        out
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let data_err = |line: usize, detail: String| Error::Data {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| data_err(lineno, "expected token<TAB>id".into()))?;
            let id: usize = id
                .parse()
                .map_err(|_| data_err(lineno, format!("bad id {id:?}")))?;
            if id != tokens.len() {
                return Err(data_err(
                    lineno,
                    format!("id {id} out of order (expected {})", tokens.len()),
                ));
            }
            tokens.push(tok.to_string());
        }
        Self::from_tokens(tokens).map_err(|e| data_err(0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    /// SHA-256 of the TSV serialization, lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
    }
}

/// Keeps the `max_size − 4` most frequent tokens after the specials, ties
/// broken by code-point order.
pub fn build_vocab<'a, I>(captions: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size < 5 {
        return Err(Error::usage(format!(
            "vocabulary size must be at least 5, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for caption in captions {
        for tok in caption {
            if !SPECIALS.contains(&tok.as_str()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // `str` ordering is byte order, which for UTF-8 is code-point order.
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(max_size - 4).map(|(t, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens)
}

/// Vocabulary over the tokens of caption records.
pub fn build_vocab_from_records(records: &[CaptionRecord], max_size: usize) -> Result<Vocab> {
    build_vocab(records.iter().map(|r| r.tokens.as_slice()), max_size)
}

/// Teacher-forcing layout of one caption over `t_dec_max` decoder steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedCaption {
    /// `<start>` followed by the caption, padded.
    pub input: Vec<usize>,
    /// The caption followed by `<end>`, padded.
    pub target: Vec<usize>,
    /// True on non-pad target positions.
    pub mask: Vec<bool>,
}

pub fn encode_caption(tokens: &[String], vocab: &Vocab, t_dec_max: usize) -> EncodedCaption {
    let content: Vec<usize> = tokens
        .iter()
        .take(t_dec_max.saturating_sub(1))
        .map(|t| vocab.id(t))
        .collect();
    let mut input = vec![PAD; t_dec_max];
    let mut target = vec![PAD; t_dec_max];
    let mut mask = vec![false; t_dec_max];
    if t_dec_max > 0 {
        input[0] = START;
        input[1..=content.len()].copy_from_slice(&content);
        target[..content.len()].copy_from_slice(&content);
        target[content.len()] = END;
        mask[..=content.len()].fill(true);
    }
    EncodedCaption { input, target, mask }
}

/// Space-joined tokens with all special ids dropped.
pub fn decode_tokens(ids: &[usize], vocab: &Vocab) -> Result<String> {
    Ok(decode_to_tokens(ids, vocab)?.join(" "))
}

pub fn decode_to_tokens(ids: &[usize], vocab: &Vocab) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let tok = vocab
            .token(id)
            .ok_or_else(|| Error::usage(format!("token id {id} not in vocabulary of {}", vocab.len())))?;
        if id >= SPECIALS.len() {
            out.push(tok.to_string());
        }
    }
    Ok(out)
}
