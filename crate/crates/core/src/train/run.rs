use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, Adam};
use super::objective::{Augmentation, Components, Example, LossWeights, Objective, Schedule};
use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::HierarchicalModel;
use crate::par;
use crate::synth::SynthExample;
use crate::tensor::{Graph, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Recognition terms only; no prior checkpoint needed.
    AsrPretrain,
    /// Both tasks, usually from an ASR checkpoint.
    JointFinetune,
}

impl Stage {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "asr_pretrain" => Some(Self::AsrPretrain),
            "joint_finetune" => Some(Self::JointFinetune),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::AsrPretrain => "asr_pretrain",
            Self::JointFinetune => "joint_finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub lr: f64,
    /// Steps over which the simple loss is blended out.
    pub warmup_steps: usize,
    pub prune_range: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cr_enabled: bool,
    /// Masking for training inputs; `None` trains on clean features.
    pub augment: Option<AugmentConfig>,
    pub weights: LossWeights,
    pub clip_norm: f64,
    /// Steps of linear learning-rate ramp from zero.
    pub lr_warmup_steps: usize,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::AsrPretrain,
            steps: 2000,
            lr: 3e-3,
            warmup_steps: 200,
            prune_range: 5,
            batch_size: 8,
            seed: 0,
            cr_enabled: false,
            augment: Some(AugmentConfig::default()),
            weights: LossWeights::default(),
            clip_norm: 5.0,
            lr_warmup_steps: 50,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prune_range < 2 {
            return Err(Error::config("prune_range", "must be >= 2"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        self.weights.validate()
    }

    /// Weights actually used in this stage.
    pub fn stage_weights(&self) -> LossWeights {
        match self.stage {
            Stage::AsrPretrain => self.weights.asr_only(),
            Stage::JointFinetune => self.weights.clone(),
        }
    }

    /// Learning rate used at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let ramp = if self.lr_warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.lr_warmup_steps as f64).min(1.0)
        };
        let decay = if self.cosine_decay {
            0.5 * (1.0 + (std::f64::consts::PI * step as f64 / self.steps as f64).cos())
        } else {
            1.0
        };
        self.lr * ramp * decay
    }

    pub fn augmentation(&self) -> Augmentation {
        match (&self.augment, self.cr_enabled) {
            (aug, true) => Augmentation::Consistency(aug.clone().unwrap_or_else(AugmentConfig::identity)),
            (Some(aug), false) => Augmentation::Single(aug.clone()),
            (None, false) => Augmentation::None,
        }
    }
}

/// Per-step metrics in the order they were written.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<(usize, String, f64)>,
}

impl TrainLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Values of `name`, one per step.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|(_, n, _)| n == name)
            .map(|&(_, _, v)| v)
            .collect()
    }
}

fn mean_components(all: &[Components]) -> Vec<(&'static str, f64)> {
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    for parts in all {
        for &(name, v) in parts {
            match out.iter_mut().find(|(n, _)| *n == name) {
                Some(slot) => slot.1 += v,
                None => out.push((name, v)),
            }
        }
    }
    let n = all.len() as f64;
    for slot in &mut out {
        slot.1 /= n;
    }
    out
}

fn diverged(step: usize, err: Error) -> Error {
    match err {
        Error::Numeric(what) => Error::Divergence {
            step,
            what: format!("non-finite value in {what}"),
        },
        other => other,
    }
}

/// Trains `model` in place on `data`. Each step samples `batch_size`
/// utterances, computes their gradients on independent tapes (in parallel
/// when enabled), averages them in sample order, clips the global norm and
/// takes one Adam step. One `step name value` line per logged quantity is
/// written to `log_out` and flushed every step.
pub fn train_run<S: Real>(
    cfg: &TrainConfig,
    data: &[SynthExample],
    model: &mut HierarchicalModel<S>,
    mut log_out: Option<&mut dyn Write>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training data is empty"));
    }
    let features: Vec<Tensor<S>> = data.iter().map(|ex| ex.frames.cast()).collect();
    let weights = cfg.stage_weights();
    let aug = cfg.augmentation();
    let mut opt = Adam::new(cfg.lr, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..data.len()), rng.random()))
            .collect();
        let objective = Objective {
            model: &*model,
            weights: &weights,
            sched: Schedule {
                step,
                warmup: cfg.warmup_steps,
                prune_range: cfg.prune_range,
            },
        };
        let results = par::map(&batch, |&(i, aug_seed)| {
            let graph = Graph::new();
            let p = objective.model.params.bind(&graph);
            let ex = Example {
                features: &features[i],
                src: &data[i].src,
                tgt: &data[i].tgt,
            };
            let (loss, parts) = objective.example(&p, ex, &aug, aug_seed)?;
            loss.backward()?;
            Ok((p.grads(), parts))
        });
        let mut grads: Option<Vec<Vec<f64>>> = None;
        let mut parts = Vec::with_capacity(batch.len());
        for r in results {
            let (g, c) = r.map_err(|e| diverged(step, e))?;
            match grads.as_mut() {
                None => grads = Some(g.iter().map(Tensor::to_f64_vec).collect()),
                Some(acc) => {
                    for (a, t) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.iter_mut().zip(t.data()) {
                            *x += y.f64();
                        }
                    }
                }
            }
            parts.push(c);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Tensor<S>> = grads
            .expect("batch is non-empty")
            .into_iter()
            .zip(model.params.tensors())
            .map(|(g, p)| {
                let data = g.into_iter().map(|x| S::lit(x * scale)).collect();
                Tensor::new(p.shape().to_vec(), data).expect("same shape")
            })
            .collect();
        let means = mean_components(&parts);
        let norm = clip_grad_norm(&mut grads, cfg.clip_norm);
        if !norm.is_finite() || means.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                what: "loss or gradient is not finite".into(),
            });
        }
        opt.lr = cfg.lr_at(step);
        let updated = opt.update(model.params.tensors(), &grads);
        for (i, t) in updated.into_iter().enumerate() {
            model.params.set(i, t);
        }
        let mut lines = String::new();
        for (name, v) in means.into_iter().chain([("grad_norm", norm), ("lr", opt.lr)]) {
            lines.push_str(&format!("{step}\t{name}\t{v}\n"));
            log.records.push((step, name.to_string(), v));
        }
        if let Some(out) = log_out.as_deref_mut() {
            out.write_all(lines.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<metrics log>", e))?;
        }
    }
    Ok(log)
}
