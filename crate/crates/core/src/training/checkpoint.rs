//! Binary checkpoint files.
//!
//! Layout, all integers u32 little-endian:
//!
//! ```text
//! "VCKP" version config_len config_bytes
//! { name_len name_bytes rank dim… f64_le_payload }*
//! ```
//!
//! The config block is `key = value` text: the model config plus
//! `vocab_hash`, `epoch` and, when optimizer state is saved, `adam_step`
//! and the Adam hyperparameters. Parameter records come first in visit
//! order, followed by `adam.m.*` and `adam.v.*` records.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Adam, AdamHyper};
use crate::model::{ModelConfig, ModelParams, Seq2Seq};
use crate::{Error, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: Option<Adam>,
    /// SHA-256 of the vocabulary the model was trained with.
    pub vocab_hash: String,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Seq2Seq> {
        Seq2Seq::from_parts(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check(&self.config)?;
        let mut config = self.config.to_kv();
        writeln!(config, "vocab_hash = {}", self.vocab_hash).unwrap();
        writeln!(config, "epoch = {}", self.epoch).unwrap();
        if let Some(a) = &self.adam {
            writeln!(config, "adam_step = {}", a.step).unwrap();
            // `{:?}` on f64 prints the shortest string that parses back exactly.
            writeln!(config, "adam_lr = {:?}", a.hyper.lr).unwrap();
            writeln!(config, "adam_beta1 = {:?}", a.hyper.beta1).unwrap();
            writeln!(config, "adam_beta2 = {:?}", a.hyper.beta2).unwrap();
            writeln!(config, "adam_eps = {:?}", a.hyper.eps).unwrap();
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, config.len())?;
        out.extend_from_slice(config.as_bytes());

        let mut records: Vec<(String, &Tensor)> = Vec::new();
        self.params.visit(&mut |n, t| records.push((n.to_string(), t)));
        if let Some(a) = &self.adam {
            a.m.visit(&mut |n, t| records.push((format!("adam.m.{n}"), t)));
            a.v.visit(&mut |n, t| records.push((format!("adam.v.{n}"), t)));
        }
        for (name, t) in records {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.fail(0, format!("bad magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(4, format!("version {version}, this build reads {CHECKPOINT_VERSION}")));
        }
        let config_len = r.u32("config length")? as usize;
        let config_at = r.pos;
        let config_text = std::str::from_utf8(r.take(config_len, "config block")?)
            .map_err(|e| r.fail(config_at, format!("config block is not UTF-8: {e}")))?;

        let mut config = ModelConfig::default();
        let mut extra: HashMap<&str, &str> = HashMap::new();
        for line in config_text.lines().filter(|l| !l.trim().is_empty()) {
            let Some((k, v)) = line.split_once('=') else {
                return Err(r.fail(config_at, format!("config line {line:?} has no '='")));
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "vocab_hash" | "epoch" | "adam_step" | "adam_lr" | "adam_beta1" | "adam_beta2"
                | "adam_eps" => {
                    extra.insert(k, v);
                }
                _ => config
                    .set(k, v)
                    .map_err(|e| r.fail(config_at, format!("config: {e}")))?,
            }
        }
        config
            .validate()
            .map_err(|e| r.fail(config_at, format!("config: {e}")))?;
        let parse = |key: &str| -> Result<Option<f64>> {
            extra
                .get(key)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| format_error(path, config_at, format!("{key}: bad number {v:?}")))
                })
                .transpose()
        };
        let vocab_hash = extra.get("vocab_hash").unwrap_or(&"").to_string();
        let epoch = parse("epoch")?.unwrap_or(0.0) as usize;
        let adam_step = extra
            .get("adam_step")
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| format_error(path, config_at, format!("adam_step: bad number {v:?}")))
            })
            .transpose()?;

        let mut records: HashMap<String, (usize, Tensor)> = HashMap::new();
        while r.pos < bytes.len() {
            let at = r.pos;
            let name_len = r.u32("record name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "record name")?)
                .map_err(|_| r.fail(at, "record name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n: usize = shape.iter().product();
            let payload_at = r.pos;
            let payload = r.take(n.saturating_mul(8), &format!("payload of {name}"))?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| r.fail(payload_at, format!("{name}: {e}")))?;
            if records.insert(name.clone(), (at, t)).is_some() {
                return Err(r.fail(at, format!("duplicate record {name}")));
            }
        }

        let end = bytes.len();
        let mut take_into = |prefix: &str, target: &mut ModelParams| -> Result<()> {
            let mut missing = None;
            let mut mismatch = None;
            target.visit_mut(&mut |n, slot| {
                let key = format!("{prefix}{n}");
                match records.remove(&key) {
                    None => missing = missing.take().or(Some(key)),
                    Some((at, t)) if t.shape() != slot.shape() => {
                        mismatch = mismatch.take().or(Some((at, key, t.shape().to_vec(), slot.shape().to_vec())))
                    }
                    Some((_, t)) => *slot = t,
                }
            });
            if let Some((at, key, got, want)) = mismatch {
                return Err(format_error(path, at, format!("{key}: shape {got:?}, config wants {want:?}")));
            }
            if let Some(key) = missing {
                return Err(format_error(path, end, format!("missing record {key}")));
            }
            Ok(())
        };

        let mut params = ModelParams::zeros(&config)?;
        take_into("", &mut params)?;
        let adam = match adam_step {
            Some(step) => {
                let mut m = ModelParams::zeros(&config)?;
                let mut v = ModelParams::zeros(&config)?;
                take_into("adam.m.", &mut m)?;
                take_into("adam.v.", &mut v)?;
                let d = AdamHyper::default();
                Some(Adam {
                    hyper: AdamHyper {
                        lr: parse("adam_lr")?.unwrap_or(d.lr),
                        beta1: parse("adam_beta1")?.unwrap_or(d.beta1),
                        beta2: parse("adam_beta2")?.unwrap_or(d.beta2),
                        eps: parse("adam_eps")?.unwrap_or(d.eps),
                    },
                    step,
                    m,
                    v,
                })
            }
            None => None,
        };
        if let Some((name, (at, _))) = records.iter().min_by_key(|(_, (at, _))| *at) {
            return Err(format_error(path, *at, format!("unexpected record {name}")));
        }
        Ok(Self {
            config,
            params,
            adam,
            vocab_hash,
            epoch,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::usage(format!("{n} does not fit in a u32 field")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn format_error(path: &Path, offset: usize, detail: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, detail: String) -> Error {
        format_error(self.path, offset, detail)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(self.fail(
                self.pos,
                format!("truncated {what}: need {n} bytes, {remaining} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
