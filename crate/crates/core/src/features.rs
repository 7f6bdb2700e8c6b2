//! Per-frame feature matrices, the `.vcf` file format, manifests, and a
//! synthetic dataset generator.
//!
//! A `.vcf` file is a 16-byte header followed by row-major `f32` values:
//!
//! | bytes  | content                      |
//! |--------|------------------------------|
//! | 0..4   | magic `VCF1`                 |
//! | 4..8   | `n_frames`, u32 little-endian |
//! | 8..12  | `dim`, u32 little-endian      |
//! | 12..16 | reserved, zero               |
//!
//! Values are upcast to `f64` on load.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::text::{CaptionRecord, Vocab};
use crate::{rng, Error, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"VCF1";
pub const HEADER_LEN: usize = 16;

/// `floor(i · n_total / n_wanted)` for `i` in `0..n_wanted`.
pub fn sample_frame_indices(n_total: usize, n_wanted: usize) -> Result<Vec<usize>> {
    if n_total == 0 || n_wanted == 0 {
        return Err(Error::usage(format!(
            "frame sampling needs positive counts, got n_total={n_total} n_wanted={n_wanted}"
        )));
    }
    Ok((0..n_wanted)
        .map(|i| (i as u128 * n_total as u128 / n_wanted as u128) as usize)
        .collect())
}

/// A `[n_frames, dim]` matrix of finite per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Tensor,
}

impl FeatureMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::dim(format!(
                "feature matrix must be rank 2, got shape {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn from_f32(n_frames: usize, dim: usize, data: &[f32]) -> Result<Self> {
        Self::new(Tensor::new([n_frames, dim], data.iter().map(|&v| v as f64).collect())?)
    }

    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// Picks `n_wanted` evenly spaced rows.
    pub fn resample(&self, n_wanted: usize) -> Result<Self> {
        if n_wanted == self.n_frames() {
            return Ok(self.clone());
        }
        let idx = sample_frame_indices(self.n_frames(), n_wanted)?;
        let mut data = Vec::with_capacity(n_wanted * self.dim());
        for i in idx {
            data.extend_from_slice(self.values.row(i));
        }
        Self::new(Tensor::new([n_wanted, self.dim()], data)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, d) = (self.n_frames(), self.dim());
        let (Ok(n32), Ok(d32)) = (u32::try_from(n), u32::try_from(d)) else {
            return Err(Error::usage(format!("feature matrix ({n}, {d}) too large for .vcf")));
        };
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&n32.to_le_bytes());
        out.extend_from_slice(&d32.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for (i, &v) in self.values.data().iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::numeric(
                    "write_features",
                    format!("value {v} at index {i} does not fit in f32"),
                ));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, detail: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(
                bytes.len(),
                format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (n, d, reserved) = (word(4), word(8), word(12));
        if n == 0 {
            return Err(fail(4, "n_frames is zero".into()));
        }
        if d == 0 {
            return Err(fail(8, "dim is zero".into()));
        }
        if reserved != 0 {
            return Err(fail(12, format!("reserved field is {reserved}, expected 0")));
        }
        let expected = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .and_then(|x| x.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(fail(
                HEADER_LEN,
                format!(
                    "header declares ({n}, {d}) needing {} bytes, file has {}",
                    expected.map_or_else(|| "too many".to_string(), |e| e.to_string()),
                    bytes.len()
                ),
            ));
        }
        let mut data = Vec::with_capacity(n * d);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(fail(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
            }
            data.push(v as f64);
        }
        Self::new(Tensor::new([n, d], data)?)
    }
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let bytes = m.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes, path)
}

/// Columnwise mean, `[dim]`.
pub fn mean_pool(m: &FeatureMatrix) -> Tensor {
    let (n, d) = (m.n_frames(), m.dim());
    let mut acc = vec![0.0; d];
    for i in 0..n {
        for (a, v) in acc.iter_mut().zip(m.values.row(i)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Tensor::new([d], acc).expect("mean of finite values is finite")
}

/// A video with its features and reference captions.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoExample {
    pub video_id: String,
    pub features: FeatureMatrix,
    pub references: Vec<CaptionRecord>,
}

/// Reads a `video_id<TAB>feature_path<TAB>caption` manifest.
///
/// Rows sharing a `video_id` become one example with several references,
/// in order of first appearance. Feature paths are relative to the
/// manifest's directory. With a vocabulary, caption ids are filled in.
pub fn load_manifest(path: &Path, vocab: Option<&Vocab>) -> Result<Vec<VideoExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let data_err = |line: usize, detail: String| Error::Data {
        path: path.to_path_buf(),
        line,
        detail,
    };

    struct Group {
        video_id: String,
        feature_path: PathBuf,
        first_line: usize,
        references: Vec<CaptionRecord>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(data_err(line, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let (video_id, feature_path, caption) = (cols[0].trim(), cols[1].trim(), cols[2]);
        if video_id.is_empty() || feature_path.is_empty() {
            return Err(data_err(line, "empty video_id or feature_path".into()));
        }
        let mut record = CaptionRecord::new(video_id, caption);
        if record.tokens.is_empty() {
            return Err(data_err(line, "caption has no tokens".into()));
        }
        if let Some(v) = vocab {
            record.assign_ids(v);
        }
        let feature_path = base.join(feature_path);
        match by_id.get(video_id) {
            Some(&g) => {
                if groups[g].feature_path != feature_path {
                    return Err(data_err(
                        line,
                        format!(
                            "video {video_id} maps to {} here but {} on line {}",
                            feature_path.display(),
                            groups[g].feature_path.display(),
                            groups[g].first_line
                        ),
                    ));
                }
                groups[g].references.push(record);
            }
            None => {
                by_id.insert(video_id.to_string(), groups.len());
                groups.push(Group {
                    video_id: video_id.to_string(),
                    feature_path,
                    first_line: line,
                    references: vec![record],
                });
            }
        }
    }

    groups
        .into_par_iter()
        .map(|g| {
            let features = match read_features(&g.feature_path) {
                Err(Error::Io { source, .. }) => {
                    return Err(data_err(
                        g.first_line,
                        format!("cannot read {}: {source}", g.feature_path.display()),
                    ))
                }
                other => other?,
            };
            Ok(VideoExample {
                video_id: g.video_id,
                features,
                references: g.references,
            })
        })
        .collect()
}

/// Caption templates, one per archetype.
pub const TEMPLATES: [&str; 8] = [
    "एक मानिस गितार बजाउँदैछ।",
    "एउटी महिला खाना पकाउँदैछिन्।",
    "एक कुकुर घाँसमा दौडिरहेको छ।",
    "केटाकेटीहरू फुटबल खेलिरहेका छन्।",
    "एक बिरालो दूध पिउँदैछ।",
    "एक मानिस घोडा चढिरहेको छ।",
    "एउटी केटी नाचिरहेकी छिन्।",
    "दुई जना मानिस कुरा गर्दैछन्।",
];

/// Shape of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub t_enc: usize,
    pub d_feat: usize,
    /// Number of archetypes, at most [`TEMPLATES`]`.len()`.
    pub archetypes: usize,
    /// Standard deviation of the Gaussian noise added to every value.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(n_videos: usize, t_enc: usize, d_feat: usize) -> Self {
        Self {
            n_videos,
            t_enc,
            d_feat,
            archetypes: 4,
            noise: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.t_enc == 0 || self.d_feat == 0 {
            return Err(Error::usage("synthetic dataset needs positive n_videos, t_enc and d_feat"));
        }
        if self.archetypes == 0 || self.archetypes > TEMPLATES.len() {
            return Err(Error::usage(format!(
                "archetypes must be in 1..={}, got {}",
                TEMPLATES.len(),
                self.archetypes
            )));
        }
        if self.d_feat < self.archetypes {
            return Err(Error::usage(format!(
                "d_feat {} cannot hold {} archetype blocks",
                self.d_feat, self.archetypes
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::usage(format!("noise must be finite and non-negative, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Columns `[start, end)` carrying archetype `a`'s signal.
pub fn archetype_block(a: usize, archetypes: usize, d_feat: usize) -> (usize, usize) {
    let width = d_feat / archetypes;
    (a * width, (a + 1) * width)
}

/// Noise-free features of archetype `a`: ones on its block, zeros elsewhere.
pub fn archetype_centroid(a: usize, archetypes: usize, t_enc: usize, d_feat: usize) -> Tensor {
    let (lo, hi) = archetype_block(a, archetypes, d_feat);
    Tensor::from_fn([t_enc, d_feat], |i| {
        let c = i % d_feat;
        if (lo..hi).contains(&c) {
            1.0
        } else {
            0.0
        }
    })
    .expect("finite")
}

/// One generated video before it is written out.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub archetype: usize,
    pub caption: &'static str,
    pub features: FeatureMatrix,
}

/// Generates videos in memory. Video `i` has archetype `i % archetypes`.
pub fn synth_videos(seed: u64, spec: &SynthSpec) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    let mut rng = rng::stream(seed, rng::SYNTH);
    let mut videos = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let archetype = i % spec.archetypes;
        let centroid = archetype_centroid(archetype, spec.archetypes, spec.t_enc, spec.d_feat);
        let data: Vec<f32> = centroid
            .data()
            .iter()
            .map(|&c| {
                let z: f64 = rng.sample(StandardNormal);
                (c + spec.noise * z) as f32
            })
            .collect();
        videos.push(SynthVideo {
            video_id: format!("vid{i:04}"),
            archetype,
            caption: TEMPLATES[archetype],
            features: FeatureMatrix::from_f32(spec.t_enc, spec.d_feat, &data)?,
        });
    }
    Ok(videos)
}

/// Writes `manifest.tsv`, `archetypes.tsv` and `features/<id>.vcf` under
/// `out_dir`. Returns the manifest path.
pub fn synth_dataset(seed: u64, spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    let videos = synth_videos(seed, spec)?;
    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = String::from("# video_id\tfeature_path\tcaption\n");
    let mut record = String::from("video_id\tarchetype\n");
    for v in &videos {
        let rel = format!("features/{}.vcf", v.video_id);
        write_features(&out_dir.join(&rel), &v.features)?;
        writeln!(manifest, "{}\t{rel}\t{}", v.video_id, v.caption).unwrap();
        writeln!(record, "{}\t{}", v.video_id, v.archetype).unwrap();
    }
    let manifest_path = out_dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let record_path = out_dir.join("archetypes.tsv");
    std::fs::write(&record_path, record).map_err(|e| Error::io(&record_path, e))?;
    Ok(manifest_path)
}
