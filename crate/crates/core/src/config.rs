//! Flat `key = value` experiment configuration.
//!
//! One file names every knob of an experiment: synthetic data, model
//! layout, objective, optimizer, augmentation, decoding and the ablation
//! grid. Lines starting with `#` and blank lines are ignored; text after
//! `#` on a value line is a comment. Unknown and repeated keys are errors.
//! [`ExperimentConfig::render`] writes the canonical form, which parses
//! back to an equal value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::augment::AugmentConfig;
use crate::decode::{ChunkConfig, BEAM};
use crate::error::{Error, Result};
use crate::model::{Arch, ModelConfig};
use crate::synth::{ReorderMode, SynthConfig};
use crate::train::{Stage, TrainConfig};

/// Search used by `decode`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Search {
    Greedy,
    Beam,
    Streaming,
}

impl Search {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "greedy" => Some(Self::Greedy),
            "beam" => Some(Self::Beam),
            "streaming" => Some(Self::Streaming),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Beam => "beam",
            Self::Streaming => "streaming",
        }
    }
}

/// One architecture row of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblateArch {
    pub arch: Arch,
    pub cr: bool,
}

impl AblateArch {
    pub fn parse(s: &str) -> Option<Self> {
        let (name, cr) = match s.strip_suffix("+cr") {
            Some(name) => (name, true),
            None => (s, false),
        };
        Arch::parse(name).map(|arch| Self { arch, cr })
    }
}

impl std::fmt::Display for AblateArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.arch.as_str())?;
        if self.cr {
            f.write_str("+cr")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub search: Search,
    pub beam: usize,
    pub blank_penalty: f64,
    /// Decode the translation task; otherwise recognition.
    pub translate: bool,
    pub chunk: ChunkConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            search: Search::Greedy,
            beam: BEAM,
            blank_penalty: 0.0,
            translate: true,
            chunk: ChunkConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblateConfig {
    pub archs: Vec<AblateArch>,
    pub prune_ranges: Vec<usize>,
    pub warmups: Vec<usize>,
    pub bps: Vec<f64>,
    /// ASR pretraining steps before each cell's joint run.
    pub pretrain_steps: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        let arch = |arch, cr| AblateArch { arch, cr };
        Self {
            archs: vec![
                arch(Arch::Shared, false),
                arch(Arch::Hier1, false),
                arch(Arch::Hier2, false),
                arch(Arch::Hier2, true),
            ],
            prune_ranges: vec![5],
            warmups: vec![200],
            bps: vec![0.0, 2.0],
            pretrain_steps: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train_examples: usize,
    pub test_examples: usize,
    pub arch: Arch,
    pub model: ModelConfig,
    /// Seeds model initialization and training; the data has its own seed.
    pub seed: u64,
    /// 32 or 64.
    pub precision: u32,
    /// Its `augment` is always set; `augment` below switches it.
    pub train: TrainConfig,
    pub augment: bool,
    pub decode: DecodeConfig,
    pub ablate: AblateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let arch = Arch::Hier2;
        let model = ModelConfig::for_arch(arch, synth.feature_dim, synth.src_vocab, synth.tgt_vocab);
        Self {
            synth,
            train_examples: 2000,
            test_examples: 200,
            arch,
            model,
            seed: 0,
            precision: 32,
            train: TrainConfig::default(),
            augment: true,
            decode: DecodeConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::config(key, format!("expected `min,max`, got `{value}`")))?;
    Ok((
        parse(key, a.trim(), "an integer")?,
        parse(key, b.trim(), "an integer")?,
    ))
}

/// Comma-separated list; empty items are rejected.
pub fn parse_list<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(|v| parse(key, v.trim(), what))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(key, "list is empty"));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses configuration text over the defaults. The `arch` key, if
    /// present, is applied first so that explicit block counts override it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), "expected `key = value`")
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(Error::config(key, "given more than once"));
            }
            pairs.push((key, value));
        }
        let mut cfg = Self::default();
        pairs.sort_by_key(|(k, _)| k != "arch");
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key. Setting `arch` resets the block layout to that
    /// architecture's preset.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = "a non-negative integer";
        let num = "a number";
        let (s, m, t, d, a) = (
            &mut self.synth,
            &mut self.model,
            &mut self.train,
            &mut self.decode,
            &mut self.ablate,
        );
        let aug = t.augment.get_or_insert_with(AugmentConfig::default);
        match key {
            "src_vocab" => s.src_vocab = parse(key, value, int)?,
            "tgt_vocab" => s.tgt_vocab = parse(key, value, int)?,
            "frames_per_token" => s.frames_per_token = parse_pair(key, value)?,
            "feature_dim" => s.feature_dim = parse(key, value, int)?,
            "noise_std" => s.noise_std = parse(key, value, num)?,
            "reorder" => {
                s.reorder = ReorderMode::parse(value).ok_or_else(|| {
                    Error::config(key, "expected monotone, swap_pairs or rotate_span(k) with k >= 2")
                })?
            }
            "tokens_per_utterance" => s.tokens_per_utterance = parse_pair(key, value)?,
            "data_seed" => s.seed = parse(key, value, int)?,
            "train_examples" => self.train_examples = parse(key, value, int)?,
            "test_examples" => self.test_examples = parse(key, value, int)?,
            "arch" => {
                self.arch = Arch::parse(value)
                    .ok_or_else(|| Error::config(key, "expected shared, hier1 or hier2"))?;
                let preset = ModelConfig::for_arch(self.arch, 0, 0, 0);
                m.asr_blocks = preset.asr_blocks;
                m.st_blocks = preset.st_blocks;
                m.st_half_width = preset.st_half_width;
            }
            "d_model" => m.d_model = parse(key, value, int)?,
            "asr_blocks" => m.asr_blocks = parse(key, value, int)?,
            "st_blocks" => m.st_blocks = parse(key, value, int)?,
            "st_half_width" => m.st_half_width = parse_bool(key, value)?,
            "predictor_context" => m.predictor_context = parse(key, value, int)?,
            "joint_dim" => m.joint_dim = parse(key, value, int)?,
            "causal" => m.causal = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value, int)?,
            "precision" => self.precision = parse(key, value, "32 or 64")?,
            "stage" => {
                t.stage = Stage::parse(value)
                    .ok_or_else(|| Error::config(key, "expected asr_pretrain or joint_finetune"))?
            }
            "steps" => t.steps = parse(key, value, int)?,
            "lr" => t.lr = parse(key, value, num)?,
            "lr_warmup_steps" => t.lr_warmup_steps = parse(key, value, int)?,
            "cosine_decay" => t.cosine_decay = parse_bool(key, value)?,
            "warmup_steps" => t.warmup_steps = parse(key, value, int)?,
            "prune_range" => t.prune_range = parse(key, value, int)?,
            "batch_size" => t.batch_size = parse(key, value, int)?,
            "clip_norm" => t.clip_norm = parse(key, value, num)?,
            "cr_enabled" => t.cr_enabled = parse_bool(key, value)?,
            "alpha_asr" => t.weights.nt_asr = parse(key, value, num)?,
            "alpha_st" => t.weights.nt_st = parse(key, value, num)?,
            "alpha_cr_asr" => t.weights.cr_asr = parse(key, value, num)?,
            "alpha_cr_st" => t.weights.cr_st = parse(key, value, num)?,
            "alpha_ctc_asr" => t.weights.ctc_asr = parse(key, value, num)?,
            "alpha_ctc_st" => t.weights.ctc_st = parse(key, value, num)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "freq_mask_regions" => aug.freq_mask_regions = parse(key, value, int)?,
            "freq_mask_max_width" => aug.freq_mask_max_width = parse(key, value, int)?,
            "time_mask_regions" => aug.time_mask_regions = parse(key, value, int)?,
            "time_mask_max_fraction" => aug.time_mask_max_fraction = parse(key, value, num)?,
            "cr_scale" => aug.cr_scale = parse(key, value, num)?,
            "search" => {
                d.search = Search::parse(value)
                    .ok_or_else(|| Error::config(key, "expected greedy, beam or streaming"))?
            }
            "task" => {
                d.translate = match value {
                    "st" => true,
                    "asr" => false,
                    _ => return Err(Error::config(key, "expected asr or st")),
                }
            }
            "beam" => d.beam = parse(key, value, int)?,
            "blank_penalty" => d.blank_penalty = parse(key, value, num)?,
            "max_sym_per_frame" => d.chunk.max_sym_per_frame = parse(key, value, int)?,
            "chunk_size" => d.chunk.chunk_size = parse(key, value, int)?,
            "left_context" => d.chunk.left_context = parse(key, value, int)?,
            "ablate_archs" => {
                a.archs = value
                    .split(',')
                    .map(|v| {
                        AblateArch::parse(v.trim()).ok_or_else(|| {
                            Error::config(key, format!("unknown architecture `{}`", v.trim()))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "ablate_prune_ranges" => a.prune_ranges = parse_list(key, value, int)?,
            "ablate_warmups" => a.warmups = parse_list(key, value, int)?,
            "ablate_bps" => a.bps = parse_list(key, value, num)?,
            "ablate_pretrain_steps" => a.pretrain_steps = parse(key, value, int)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Model layout with vocabularies and feature dimension taken from the
    /// data configuration.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.synth.feature_dim,
            src_vocab: self.synth.src_vocab,
            tgt_vocab: self.synth.tgt_vocab,
            ..self.model.clone()
        }
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            augment: self.train.augment.clone().filter(|_| self.augment),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model_config().validate()?;
        let t = &self.train;
        t.validate()?;
        if t.steps == 0 {
            return Err(Error::config("steps", "must be >= 1"));
        }
        if let Some(aug) = &t.augment {
            aug.validate(self.synth.feature_dim)?;
        }
        self.decode.chunk.validate()?;
        let d = &self.decode;
        if d.beam == 0 {
            return Err(Error::config("beam", "must be >= 1"));
        }
        if !d.blank_penalty.is_finite() {
            return Err(Error::config("blank_penalty", "must be finite"));
        }
        if self.train_examples == 0 {
            return Err(Error::config("train_examples", "must be >= 1"));
        }
        if self.test_examples == 0 {
            return Err(Error::config("test_examples", "must be >= 1"));
        }
        if !matches!(self.precision, 32 | 64) {
            return Err(Error::config("precision", "must be 32 or 64"));
        }
        let a = &self.ablate;
        if a.archs.is_empty() {
            return Err(Error::config("ablate_archs", "list is empty"));
        }
        if a.prune_ranges.iter().any(|&s| s < 2) {
            return Err(Error::config("ablate_prune_ranges", "every range must be >= 2"));
        }
        if a.bps.iter().any(|bp| !bp.is_finite()) {
            return Err(Error::config("ablate_bps", "must be finite"));
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, m, t, d, a) = (&self.synth, &self.model, &self.train, &self.decode, &self.ablate);
        let w = &t.weights;
        let pair = |(x, y): (usize, usize)| format!("{x},{y}");
        let mut out = vec![
            ("src_vocab", s.src_vocab.to_string()),
            ("tgt_vocab", s.tgt_vocab.to_string()),
            ("frames_per_token", pair(s.frames_per_token)),
            ("feature_dim", s.feature_dim.to_string()),
            ("noise_std", s.noise_std.to_string()),
            ("reorder", s.reorder.to_string()),
            ("tokens_per_utterance", pair(s.tokens_per_utterance)),
            ("data_seed", s.seed.to_string()),
            ("train_examples", self.train_examples.to_string()),
            ("test_examples", self.test_examples.to_string()),
            ("arch", self.arch.as_str().to_string()),
            ("d_model", m.d_model.to_string()),
            ("asr_blocks", m.asr_blocks.to_string()),
            ("st_blocks", m.st_blocks.to_string()),
            ("st_half_width", m.st_half_width.to_string()),
            ("predictor_context", m.predictor_context.to_string()),
            ("joint_dim", m.joint_dim.to_string()),
            ("causal", m.causal.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("stage", t.stage.as_str().to_string()),
            ("steps", t.steps.to_string()),
            ("lr", t.lr.to_string()),
            ("lr_warmup_steps", t.lr_warmup_steps.to_string()),
            ("cosine_decay", t.cosine_decay.to_string()),
            ("warmup_steps", t.warmup_steps.to_string()),
            ("prune_range", t.prune_range.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("cr_enabled", t.cr_enabled.to_string()),
            ("alpha_asr", w.nt_asr.to_string()),
            ("alpha_st", w.nt_st.to_string()),
            ("alpha_cr_asr", w.cr_asr.to_string()),
            ("alpha_cr_st", w.cr_st.to_string()),
            ("alpha_ctc_asr", w.ctc_asr.to_string()),
            ("alpha_ctc_st", w.ctc_st.to_string()),
            ("augment", self.augment.to_string()),
        ];
        if let Some(aug) = &t.augment {
            out.extend([
                ("freq_mask_regions", aug.freq_mask_regions.to_string()),
                ("freq_mask_max_width", aug.freq_mask_max_width.to_string()),
                ("time_mask_regions", aug.time_mask_regions.to_string()),
                ("time_mask_max_fraction", aug.time_mask_max_fraction.to_string()),
                ("cr_scale", aug.cr_scale.to_string()),
            ]);
        }
        out.extend([
            ("search", d.search.as_str().to_string()),
            ("task", if d.translate { "st" } else { "asr" }.to_string()),
            ("beam", d.beam.to_string()),
            ("blank_penalty", d.blank_penalty.to_string()),
            ("max_sym_per_frame", d.chunk.max_sym_per_frame.to_string()),
            ("chunk_size", d.chunk.chunk_size.to_string()),
            ("left_context", d.chunk.left_context.to_string()),
            ("ablate_archs", join(&a.archs)),
            ("ablate_prune_ranges", join(&a.prune_ranges)),
            ("ablate_warmups", join(&a.warmups)),
            ("ablate_bps", join(&a.bps)),
            ("ablate_pretrain_steps", a.pretrain_steps.to_string()),
        ]);
        out
    }

    /// Canonical text form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}
