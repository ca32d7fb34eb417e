use crate::augment::{spec_augment, two_views, AugmentConfig};
use crate::error::{Error, Result};
use crate::losses::{compute_prune_bounds, cr_kl, ctc_nll, pruned_transducer_nll, transducer_nll};
use crate::model::{Bound, HierarchicalModel, Task, TaskHeads};
use crate::tensor::{AttentionMask, Real, Tensor, Var};

/// Weights of the multitask objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub nt_asr: f64,
    pub nt_st: f64,
    pub cr_asr: f64,
    pub cr_st: f64,
    pub ctc_asr: f64,
    pub ctc_st: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            nt_asr: 1.0,
            nt_st: 1.0,
            cr_asr: 0.05,
            cr_st: 0.05,
            ctc_asr: 0.1,
            ctc_st: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_asr", self.nt_asr),
            ("alpha_st", self.nt_st),
            ("alpha_cr_asr", self.cr_asr),
            ("alpha_cr_st", self.cr_st),
            ("alpha_ctc_asr", self.ctc_asr),
            ("alpha_ctc_st", self.ctc_st),
        ];
        for (key, w) in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(key, "weight must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Same weights with every ST term zeroed.
    pub fn asr_only(&self) -> Self {
        Self {
            nt_st: 0.0,
            cr_st: 0.0,
            ctc_st: 0.0,
            ..self.clone()
        }
    }
}

/// `lambda = 0.5 * max(0, 1 - step / warmup)`; zero when `warmup == 0`.
pub fn blend_weight(step: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        return 0.0;
    }
    0.5 * (1.0 - step as f64 / warmup as f64).max(0.0)
}

/// `lambda * simple + (1 - lambda) * pruned`; exactly `pruned` once the
/// warmup is over.
pub fn warmup_blend<'g, S: Real>(
    step: usize,
    warmup: usize,
    simple: &Var<'g, S>,
    pruned: &Var<'g, S>,
) -> Result<Var<'g, S>> {
    let lambda = blend_weight(step, warmup);
    if lambda == 0.0 {
        return Ok(*pruned);
    }
    simple.scale(lambda)?.add(&pruned.scale(1.0 - lambda)?)
}

/// Where the transducer term is in its schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub step: usize,
    pub warmup: usize,
    pub prune_range: usize,
}

/// Named scalar parts of one loss evaluation, for logging.
pub type Components = Vec<(&'static str, f64)>;

/// Blended simple/pruned transducer loss of one task.
pub fn task_nt_loss<'g, S: Real>(
    heads: &TaskHeads,
    p: &Bound<'g, S>,
    f: &Var<'g, S>,
    tokens: &[usize],
    sched: Schedule,
) -> Result<(Var<'g, S>, f64, f64)> {
    let g = heads.predictor.forward(p, tokens)?;
    let simple_logits = heads.simple.lattice(p, f, &g)?;
    let (simple, stats) = transducer_nll(&simple_logits, tokens)?;
    let bounds = compute_prune_bounds(&stats, sched.prune_range)?;
    let (pruned, _) = pruned_transducer_nll(&bounds, tokens, |t, u| {
        heads.joiner.pair_logits(p, f, &g, t, u)
    })?;
    let loss = warmup_blend(sched.step, sched.warmup, &simple, &pruned)?;
    Ok((loss, simple.item().f64(), pruned.item().f64()))
}

fn weighted<'g, S: Real>(acc: Option<Var<'g, S>>, w: f64, term: &Var<'g, S>) -> Result<Option<Var<'g, S>>> {
    let t = term.scale(w)?;
    Ok(Some(match acc {
        Some(a) => a.add(&t)?,
        None => t,
    }))
}

fn finish<'g, S: Real>(acc: Option<Var<'g, S>>) -> Result<Var<'g, S>> {
    acc.ok_or_else(|| Error::contract("every loss weight is zero"))
}

/// One utterance with its two transcripts.
#[derive(Clone, Copy)]
pub struct Example<'a, S> {
    pub features: &'a Tensor<S>,
    pub src: &'a [usize],
    pub tgt: &'a [usize],
}

/// A model together with the loss weights and schedule position.
#[derive(Clone, Copy)]
pub struct Objective<'a, S> {
    pub model: &'a HierarchicalModel<S>,
    pub weights: &'a LossWeights,
    pub sched: Schedule,
}

impl<'a, S: Real> Objective<'a, S> {
    /// `alpha_asr * L_nt(src | f_s) + alpha_st * L_nt(tgt | f_t)` on already
    /// encoded outputs. Terms with weight zero are skipped.
    pub fn nt_from_encodings<'g>(
        &self,
        p: &Bound<'g, S>,
        (f_s, f_t): (&Var<'g, S>, &Var<'g, S>),
        ex: Example<'_, S>,
        parts: &mut Components,
    ) -> Result<Option<Var<'g, S>>> {
        let (model, weights, sched) = (self.model, self.weights, self.sched);
        let mut acc = None;
        if weights.nt_asr > 0.0 {
            let (l, simple, pruned) = task_nt_loss(&model.asr, p, f_s, ex.src, sched)?;
            parts.push(("asr_simple", simple));
            parts.push(("asr_pruned", pruned));
            acc = weighted(acc, weights.nt_asr, &l)?;
        }
        if weights.nt_st > 0.0 {
            if ex.tgt.is_empty() {
                return Err(Error::contract("translation target missing"));
            }
            let (l, simple, pruned) = task_nt_loss(&model.st, p, f_t, ex.tgt, sched)?;
            parts.push(("st_simple", simple));
            parts.push(("st_pruned", pruned));
            acc = weighted(acc, weights.nt_st, &l)?;
        }
        Ok(acc)
    }

    /// Multitask transducer loss for one utterance.
    pub fn multitask_nt<'g>(&self, p: &Bound<'g, S>, ex: Example<'_, S>) -> Result<(Var<'g, S>, Components)> {
        let x = p.graph().constant(ex.features.clone());
        let (f_s, f_t) = self.model.encode(p, &x, AttentionMask::Full)?;
        let mut parts = Vec::new();
        let loss = finish(self.nt_from_encodings(p, (&f_s, &f_t), ex, &mut parts)?)?;
        parts.push(("total", loss.item().f64()));
        Ok((loss, parts))
    }

    /// Transducer loss on view (a), CTC averaged over both views and the
    /// symmetric consistency loss between the views' CTC posteriors, per
    /// task.
    pub fn combined<'g>(
        &self,
        p: &Bound<'g, S>,
        ex: Example<'_, S>,
        views: (&Tensor<S>, &Tensor<S>),
    ) -> Result<(Var<'g, S>, Components)> {
        let weights = self.weights;
        let xa = p.graph().constant(views.0.clone());
        let xb = p.graph().constant(views.1.clone());
        let (fs_a, ft_a) = self.model.encode(p, &xa, AttentionMask::Full)?;
        let (fs_b, ft_b) = self.model.encode(p, &xb, AttentionMask::Full)?;
        let mut parts = Vec::new();
        let mut acc = self.nt_from_encodings(p, (&fs_a, &ft_a), ex, &mut parts)?;
        let tasks = [
            (Task::Asr, ex.src, fs_a, fs_b, weights.ctc_asr, weights.cr_asr),
            (Task::St, ex.tgt, ft_a, ft_b, weights.ctc_st, weights.cr_st),
        ];
        for (task, tokens, fa, fb, w_ctc, w_cr) in tasks {
            if w_ctc == 0.0 && w_cr == 0.0 {
                continue;
            }
            let heads = self.model.heads(task);
            let la = heads.ctc_logprobs(p, &fa)?;
            let lb = heads.ctc_logprobs(p, &fb)?;
            let (ctc_name, cr_name) = match task {
                Task::Asr => ("asr_ctc", "asr_cr"),
                Task::St => ("st_ctc", "st_cr"),
            };
            if w_ctc > 0.0 {
                let ctc = ctc_nll(&la, tokens)?.add(&ctc_nll(&lb, tokens)?)?.scale(0.5)?;
                parts.push((ctc_name, ctc.item().f64()));
                acc = weighted(acc, w_ctc, &ctc)?;
            }
            if w_cr > 0.0 {
                let cr = cr_kl(&la, &lb)?;
                parts.push((cr_name, cr.item().f64()));
                acc = weighted(acc, w_cr, &cr)?;
            }
        }
        let loss = finish(acc)?;
        parts.push(("total", loss.item().f64()));
        Ok((loss, parts))
    }

    /// The training objective for one utterance under `aug`.
    pub fn example<'g>(
        &self,
        p: &Bound<'g, S>,
        ex: Example<'_, S>,
        aug: &Augmentation,
        aug_seed: u64,
    ) -> Result<(Var<'g, S>, Components)> {
        match aug {
            Augmentation::None => self.multitask_nt(p, ex),
            Augmentation::Single(cfg) => {
                let x = spec_augment(ex.features, cfg, aug_seed);
                self.multitask_nt(p, Example { features: &x, ..ex })
            }
            Augmentation::Consistency(cfg) => {
                let (a, b) = two_views(ex.features, cfg, aug_seed);
                self.combined(p, ex, (&a, &b))
            }
        }
    }
}

/// Multitask transducer loss for one utterance.
pub fn multitask_nt_loss<'g, S: Real>(
    model: &HierarchicalModel<S>,
    p: &Bound<'g, S>,
    ex: Example<'_, S>,
    weights: &LossWeights,
    sched: Schedule,
) -> Result<(Var<'g, S>, Components)> {
    Objective { model, weights, sched }.multitask_nt(p, ex)
}

/// Combined objective with consistency regularization on two views.
pub fn combined_loss<'g, S: Real>(
    model: &HierarchicalModel<S>,
    p: &Bound<'g, S>,
    ex: Example<'_, S>,
    views: (&Tensor<S>, &Tensor<S>),
    weights: &LossWeights,
    sched: Schedule,
) -> Result<(Var<'g, S>, Components)> {
    Objective { model, weights, sched }.combined(p, ex, views)
}

/// Augmentation applied to one training utterance.
#[derive(Clone, Debug, PartialEq)]
pub enum Augmentation {
    None,
    /// One masked view; transducer loss only.
    Single(AugmentConfig),
    /// Two consistency views; full combined objective.
    Consistency(AugmentConfig),
}
