//! Resolved run settings: defaults, then the config file, then flags.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vidcap::model::{parse_switch, ModelConfig};
use vidcap::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Search {
    Greedy,
    Beam,
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub model: ModelConfig,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub split_ratio: f64,
    pub patience: Option<usize>,
    pub clip_norm: f64,

    pub search: Search,
    pub beam_width: usize,
    pub length_norm: bool,

    pub n_videos: usize,
    pub archetypes: usize,
    pub noise: f64,

    pub manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub models: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub per_video: Option<PathBuf>,

    explicit: BTreeSet<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            model: ModelConfig::default(),
            epochs: 100,
            batch_size: 320,
            lr: 1e-3,
            split_ratio: 0.85,
            patience: None,
            clip_norm: 5.0,
            search: Search::Beam,
            beam_width: 5,
            length_norm: true,
            n_videos: 16,
            archetypes: 4,
            noise: 0.1,
            manifest: None,
            vocab: None,
            models: Vec::new(),
            out: None,
            per_video: None,
            explicit: BTreeSet::new(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("{key}: cannot parse {v:?}")))
}

impl Settings {
    /// Applies one setting. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "seed" => {
                self.seed = num(&key, value)?;
                self.model.seed = self.seed;
            }
            "threads" => {
                let n: usize = num(&key, value)?;
                if n == 0 {
                    return Err(Error::Usage("threads must be at least 1".into()));
                }
                self.threads = Some(n);
            }
            "cell" | "attention" | "d_feat" | "t_enc" | "d_h" | "d_emb" | "vocab_size" | "t_dec_max" => {
                self.model.set(&key, value)?
            }
            "epochs" => self.epochs = num(&key, value)?,
            "batch_size" => self.batch_size = num(&key, value)?,
            "lr" | "learning_rate" => self.lr = num(&key, value)?,
            "split_ratio" => self.split_ratio = num(&key, value)?,
            "patience" => self.patience = Some(num(&key, value)?),
            "clip_norm" => self.clip_norm = num(&key, value)?,
            "search" => {
                self.search = match value {
                    "greedy" => Search::Greedy,
                    "beam" => Search::Beam,
                    _ => return Err(Error::Usage(format!("search: expected greedy or beam, got {value:?}"))),
                }
            }
            "beam_width" => self.beam_width = num(&key, value)?,
            "length_norm" => self.length_norm = parse_switch(value)?,
            "n_videos" => self.n_videos = num(&key, value)?,
            "archetypes" => self.archetypes = num(&key, value)?,
            "noise" => self.noise = num(&key, value)?,
            "manifest" => self.manifest = Some(value.into()),
            "vocab" => self.vocab = Some(value.into()),
            "model" => self.models.push(value.into()),
            "out" => self.out = Some(value.into()),
            "per_video" => self.per_video = Some(value.into()),
            _ => return Err(Error::Usage(format!("unknown setting {key:?}"))),
        }
        self.explicit.insert(key);
        Ok(())
    }

    /// Whether `key` was set by the config file or a flag.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let data_err = |detail: String| Error::Data {
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| data_err("expected key = value".into()))?;
            self.set(key, value).map_err(|e| match e {
                Error::Usage(msg) => data_err(msg),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Lets flag-given models replace file-given ones instead of appending.
    pub fn clear_models(&mut self) {
        self.models.clear();
    }

    /// Every setting as `key = value` lines in a fixed order.
    pub fn resolved(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "threads = {}", self.threads.map_or("auto".to_string(), |n| n.to_string())).unwrap();
        for line in self.model.to_kv().lines().filter(|l| !l.starts_with("seed ")) {
            writeln!(s, "{line}").unwrap();
        }
        writeln!(s, "epochs = {}", self.epochs).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "lr = {}", self.lr).unwrap();
        writeln!(s, "split_ratio = {}", self.split_ratio).unwrap();
        writeln!(s, "patience = {}", self.patience.map_or("none".to_string(), |p| p.to_string())).unwrap();
        writeln!(s, "clip_norm = {}", self.clip_norm).unwrap();
        let search = match self.search {
            Search::Greedy => "greedy",
            Search::Beam => "beam",
        };
        writeln!(s, "search = {search}").unwrap();
        writeln!(s, "beam_width = {}", self.beam_width).unwrap();
        writeln!(s, "length_norm = {}", if self.length_norm { "on" } else { "off" }).unwrap();
        writeln!(s, "n_videos = {}", self.n_videos).unwrap();
        writeln!(s, "archetypes = {}", self.archetypes).unwrap();
        writeln!(s, "noise = {}", self.noise).unwrap();
        writeln!(s, "manifest = {}", opt(&self.manifest)).unwrap();
        writeln!(s, "vocab = {}", opt(&self.vocab)).unwrap();
        for m in &self.models {
            writeln!(s, "model = {}", m.display()).unwrap();
        }
        writeln!(s, "out = {}", opt(&self.out)).unwrap();
        writeln!(s, "per_video = {}", opt(&self.per_video)).unwrap();
        s
    }
}
