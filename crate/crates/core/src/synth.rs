//! Synthetic speech-translation task.
//!
//! Source tokens are drawn without adjacent repeats; each emits 2 to 4
//! frames of a fixed random embedding plus Gaussian noise. The target is a
//! fixed token map applied to the source, followed by a position reordering.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXAMPLE_SALT: u64 = 0x5eed_da7a;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReorderMode {
    Monotone,
    /// Swap positions (0,1), (2,3), ...; an odd trailing token stays.
    SwapPairs,
    /// Rotate each complete block of `k` positions left by one.
    RotateSpan(usize),
}

impl ReorderMode {
    /// Source position feeding each target position, for `len` tokens.
    pub fn permutation(&self, len: usize) -> Vec<usize> {
        let k = match *self {
            ReorderMode::Monotone => return (0..len).collect(),
            ReorderMode::SwapPairs => 2,
            ReorderMode::RotateSpan(k) => k,
        };
        let mut perm: Vec<usize> = (0..len).collect();
        if k >= 2 {
            for block in perm.chunks_exact_mut(k) {
                block.rotate_left(1);
            }
        }
        perm
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "monotone" => Some(Self::Monotone),
            "swap_pairs" => Some(Self::SwapPairs),
            _ => {
                let k = s.strip_prefix("rotate_span(")?.strip_suffix(')')?;
                k.parse().ok().filter(|&k| k >= 2).map(Self::RotateSpan)
            }
        }
    }
}

impl fmt::Display for ReorderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Monotone => f.write_str("monotone"),
            Self::SwapPairs => f.write_str("swap_pairs"),
            Self::RotateSpan(k) => write!(f, "rotate_span({k})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub frames_per_token: (usize, usize),
    pub feature_dim: usize,
    pub noise_std: f64,
    pub reorder: ReorderMode,
    pub tokens_per_utterance: (usize, usize),
    /// Fixes embeddings and the token map.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            src_vocab: 30,
            tgt_vocab: 30,
            frames_per_token: (2, 4),
            feature_dim: 16,
            noise_std: 0.3,
            reorder: ReorderMode::Monotone,
            tokens_per_utterance: (4, 10),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (fmin, fmax) = self.frames_per_token;
        let (lmin, lmax) = self.tokens_per_utterance;
        let checks = [
            ("src_vocab", self.src_vocab >= 4, "must be >= 4"),
            ("tgt_vocab", self.tgt_vocab >= 4, "must be >= 4"),
            ("frames_per_token", fmin >= 2 && fmin <= fmax, "need 2 <= min <= max"),
            ("feature_dim", self.feature_dim >= 1, "must be >= 1"),
            ("noise_std", self.noise_std >= 0.0 && self.noise_std.is_finite(), "must be >= 0"),
            ("tokens_per_utterance", lmin >= 1 && lmin <= lmax, "need 1 <= min <= max"),
        ];
        for (key, ok, msg) in checks {
            if !ok {
                return Err(Error::config(key, msg));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthExample {
    pub frames: Tensor<f32>,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Fixed parts of the task: per-token embeddings and the token map.
#[derive(Clone, Debug)]
pub struct SynthTask {
    pub cfg: SynthConfig,
    embeddings: Vec<Vec<f64>>,
    token_map: Vec<usize>,
}

impl SynthTask {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let embeddings = (0..cfg.src_vocab)
            .map(|_| {
                (0..cfg.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let mut targets: Vec<usize> = (1..=cfg.tgt_vocab).collect();
        targets.shuffle(&mut rng);
        let token_map = (0..cfg.src_vocab).map(|i| targets[i % cfg.tgt_vocab]).collect();
        Ok(Self {
            cfg,
            embeddings,
            token_map,
        })
    }

    /// Embedding of source token `s` (1-based).
    pub fn embedding(&self, s: usize) -> &[f64] {
        &self.embeddings[s - 1]
    }

    /// Target token for source token `s`.
    pub fn map(&self, s: usize) -> usize {
        self.token_map[s - 1]
    }

    /// Reordered, mapped target for `src`.
    pub fn target(&self, src: &[usize]) -> Vec<usize> {
        self.cfg
            .reorder
            .permutation(src.len())
            .into_iter()
            .map(|i| self.map(src[i]))
            .collect()
    }

    pub fn gen_example(&self, rng: &mut ChaCha8Rng) -> SynthExample {
        let cfg = &self.cfg;
        let (src, tgt) = loop {
            let len = rng.random_range(cfg.tokens_per_utterance.0..=cfg.tokens_per_utterance.1);
            let mut src: Vec<usize> = Vec::with_capacity(len);
            while src.len() < len {
                let s = rng.random_range(1..=cfg.src_vocab);
                if src.last() != Some(&s) {
                    src.push(s);
                }
            }
            let tgt = self.target(&src);
            if tgt.windows(2).all(|w| w[0] != w[1]) {
                break (src, tgt);
            }
        };
        let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise");
        let mut data = Vec::new();
        for &s in &src {
            let reps = rng.random_range(cfg.frames_per_token.0..=cfg.frames_per_token.1);
            for _ in 0..reps {
                data.extend(self.embedding(s).iter().map(|&e| (e + noise.sample(rng)) as f32));
            }
        }
        let frames = data.len() / cfg.feature_dim;
        SynthExample {
            frames: Tensor::new(vec![frames, cfg.feature_dim], data).expect("non-empty"),
            src,
            tgt,
        }
    }

    /// `n` examples from utterance stream `stream`; different streams give
    /// disjoint draws of the same task.
    pub fn gen_split(&self, n: usize, stream: u64) -> Vec<SynthExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ EXAMPLE_SALT);
        rng.set_stream(stream);
        (0..n).map(|_| self.gen_example(&mut rng)).collect()
    }

    /// Checks the invariants of one example against this task.
    pub fn check(&self, ex: &SynthExample) -> Result<()> {
        let cfg = &self.cfg;
        let (frames, dim) = ex.frames.rows_cols();
        let fail = |msg: String| Err(Error::contract(msg));
        if dim != cfg.feature_dim {
            return fail(format!("feature dim {dim}"));
        }
        let (lmin, lmax) = cfg.tokens_per_utterance;
        if ex.src.len() < lmin || ex.src.len() > lmax {
            return fail(format!("{} source tokens", ex.src.len()));
        }
        if ex.src.iter().any(|&s| s == 0 || s > cfg.src_vocab) {
            return fail("source token out of range".into());
        }
        let (fmin, fmax) = cfg.frames_per_token;
        if frames < fmin * ex.src.len() || frames > fmax * ex.src.len() {
            return fail(format!("{frames} frames for {} tokens", ex.src.len()));
        }
        if ex.tgt != self.target(&ex.src) {
            return fail("target is not the reordered token map".into());
        }
        Ok(())
    }
}

/// Examples generated with stream 0.
pub fn gen_dataset(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthExample>> {
    if n == 0 {
        return Err(Error::contract("dataset size must be >= 1"));
    }
    Ok(SynthTask::new(cfg.clone())?.gen_split(n, 0))
}

/// Paths of the three files that make up a stored dataset.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub index: PathBuf,
}

impl DatasetPaths {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            manifest: dir.join(format!("{name}.tsv")),
            features: dir.join(format!("{name}.f32")),
            index: dir.join(format!("{name}.idx")),
        }
    }
}

fn join_tokens(t: &[usize]) -> String {
    t.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn example_id(i: usize) -> String {
    format!("utt{i:05}")
}

/// Writes manifest (`id T src tgt`), raw little-endian `f32` features and
/// index (`id offset T`, offset in bytes).
pub fn write_dataset(paths: &DatasetPaths, examples: &[SynthExample]) -> Result<()> {
    let mut manifest = String::new();
    let mut index = String::new();
    let mut features = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let id = example_id(i);
        let frames = ex.frames.shape()[0];
        manifest.push_str(&format!(
            "{id}\t{frames}\t{}\t{}\n",
            join_tokens(&ex.src),
            join_tokens(&ex.tgt)
        ));
        index.push_str(&format!("{id}\t{}\t{frames}\n", features.len()));
        for &x in ex.frames.data() {
            features.extend_from_slice(&x.to_le_bytes());
        }
    }
    for (path, bytes) in [
        (&paths.manifest, manifest.as_bytes()),
        (&paths.index, index.as_bytes()),
        (&paths.features, features.as_slice()),
    ] {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, line: usize, msg: impl fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: format!("line {}: {msg}", line + 1),
    }
}

fn parse_tokens(path: &Path, line: usize, s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| format_err(path, line, format!("bad token {t:?}"))))
        .collect()
}

/// Reads a dataset written by [`write_dataset`]; `feature_dim` must match.
pub fn read_dataset(paths: &DatasetPaths, feature_dim: usize) -> Result<Vec<(String, SynthExample)>> {
    let manifest = read_text(&paths.manifest)?;
    let index = read_text(&paths.index)?;
    let bytes = fs::read(&paths.features).map_err(|e| Error::io(&paths.features, e))?;
    let mut offsets = std::collections::HashMap::new();
    for (n, line) in index.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, off, t] = cols.as_slice() else {
            return Err(format_err(&paths.index, n, "expected 3 columns"));
        };
        let off: usize = off.parse().map_err(|_| format_err(&paths.index, n, "bad offset"))?;
        let t: usize = t.parse().map_err(|_| format_err(&paths.index, n, "bad frame count"))?;
        offsets.insert(id.to_string(), (off, t));
    }
    let mut out = Vec::new();
    for (n, line) in manifest.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, t, src, tgt] = cols.as_slice() else {
            return Err(format_err(&paths.manifest, n, "expected 4 columns"));
        };
        let t: usize = t.parse().map_err(|_| format_err(&paths.manifest, n, "bad frame count"))?;
        let &(off, t_idx) = offsets
            .get(*id)
            .ok_or_else(|| format_err(&paths.manifest, n, format!("{id} not in index")))?;
        if t_idx != t {
            return Err(format_err(&paths.manifest, n, "frame count disagrees with index"));
        }
        let len = t * feature_dim * 4;
        let raw = bytes
            .get(off..off + len)
            .ok_or_else(|| format_err(&paths.index, n, "features past end of file"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let frames = Tensor::new(vec![t, feature_dim], data)
            .map_err(|e| format_err(&paths.manifest, n, e))?;
        out.push((
            id.to_string(),
            SynthExample {
                frames,
                src: parse_tokens(&paths.manifest, n, src)?,
                tgt: parse_tokens(&paths.manifest, n, tgt)?,
            },
        ));
    }
    Ok(out)
}
