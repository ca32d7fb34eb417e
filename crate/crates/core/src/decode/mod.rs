//! Greedy and beam transducer search with a blank penalty, and chunked
//! streaming inference.
//!
//! The penalty is subtracted from the blank logit before a symbol is
//! chosen. Reported hypothesis scores always use the unpenalized model
//! distribution.

mod streaming;

pub use streaming::{streaming_decode, ChunkConfig, StreamingResult};

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{logadd, BLANK};
use crate::model::{ParamStore, TaskHeads};
use crate::tensor::{kernels, Real, Tensor};

/// Default symbol cap per frame.
pub const MAX_SYM_PER_FRAME: usize = 20;
/// Default beam width.
pub const BEAM: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of unpenalized log-probabilities of the chosen symbols,
    /// blanks included.
    pub logp: f64,
}

impl Hypothesis {
    /// The last `k` tokens, which is all the predictor conditions on.
    pub fn context(&self, k: usize) -> &[usize] {
        &self.tokens[self.tokens.len().saturating_sub(k)..]
    }
}

/// `logits` with `bp` subtracted from the blank entry; every other entry is
/// copied unchanged.
pub fn apply_blank_penalty<S: Real>(logits: &[S], bp: f64) -> Vec<S> {
    let mut out = logits.to_vec();
    if let Some(b) = out.get_mut(BLANK) {
        *b -= S::lit(bp);
    }
    out
}

/// Index of the first maximum.
pub fn argmax<S: Real>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One task's predictor and joiner with their weights, evaluated without a
/// tape. Predictor projections are cached by context.
pub struct TaskDecoder<'a, S> {
    pub heads: &'a TaskHeads,
    pub params: &'a ParamStore<S>,
    cache: HashMap<Vec<usize>, Vec<S>>,
}

impl<'a, S: Real> TaskDecoder<'a, S> {
    pub fn new(heads: &'a TaskHeads, params: &'a ParamStore<S>) -> Self {
        Self {
            heads,
            params,
            cache: HashMap::new(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.heads.vocab
    }

    /// Frame projections of an encoder output `(T', d)`.
    pub fn frames(&self, f: &Tensor<S>) -> Vec<S> {
        self.heads.joiner.project_frames(self.params, f.data())
    }

    pub fn joint_dim(&self) -> usize {
        self.heads.joiner.joint_dim()
    }

    fn context(&mut self, history: &[usize]) -> Result<Vec<S>> {
        let key = &history[history.len().saturating_sub(self.heads.predictor.context())..];
        if let Some(v) = self.cache.get(key) {
            return Ok(v.clone());
        }
        let g = self.heads.predictor.step(self.params, key)?;
        let pg = self.heads.joiner.project_context(self.params, &g);
        self.cache.insert(key.to_vec(), pg.clone());
        Ok(pg)
    }

    /// Unpenalized joiner logits for one projected frame and a history.
    pub fn logits(&mut self, pf: &[S], history: &[usize]) -> Result<Vec<S>> {
        let pg = self.context(history)?;
        Ok(self.heads.joiner.logits(self.params, pf, &pg))
    }
}

/// Resumable greedy search state, fed one projected frame at a time.
#[derive(Clone, Debug, Default)]
pub struct GreedyState {
    pub hyp: Hypothesis,
}

impl Default for Hypothesis {
    fn default() -> Self {
        Self {
            tokens: Vec::new(),
            logp: 0.0,
        }
    }
}

impl GreedyState {
    /// Consumes one frame: emit the argmax of the penalized logits while
    /// it is not blank, at most `max_sym` times, then advance.
    pub fn step<S: Real>(
        &mut self,
        dec: &mut TaskDecoder<'_, S>,
        pf: &[S],
        bp: f64,
        max_sym: usize,
    ) -> Result<()> {
        let vocab = dec.vocab();
        let mut emitted = 0;
        loop {
            let logits = dec.logits(pf, &self.hyp.tokens)?;
            let lsm = kernels::log_softmax_rows(&logits, vocab);
            let k = argmax(&apply_blank_penalty(&logits, bp));
            if k == BLANK || emitted == max_sym {
                self.hyp.logp += lsm[BLANK].f64();
                return Ok(());
            }
            self.hyp.logp += lsm[k].f64();
            self.hyp.tokens.push(k);
            emitted += 1;
        }
    }
}

fn check_encoder<S: Real>(f: &Tensor<S>, dec: &TaskDecoder<'_, S>) -> Result<usize> {
    match f.shape() {
        [frames, d] if *d == dec.heads.joiner_input_dim() => Ok(*frames),
        other => Err(Error::dim(format!("encoder output {other:?}"))),
    }
}

/// Frame-synchronous greedy search over an encoder output `(T', d)`.
pub fn greedy_decode<S: Real>(
    f: &Tensor<S>,
    dec: &mut TaskDecoder<'_, S>,
    bp: f64,
    max_sym: usize,
) -> Result<Hypothesis> {
    let frames = check_encoder(f, dec)?;
    let pf = dec.frames(f);
    let jd = dec.joint_dim();
    let mut state = GreedyState::default();
    for t in 0..frames {
        state.step(dec, &pf[t * jd..(t + 1) * jd], bp, max_sym)?;
    }
    Ok(state.hyp)
}

#[derive(Clone, Debug)]
struct BeamHyp {
    tokens: Vec<usize>,
    logp: f64,
    /// Accumulated penalized log-probability; used for pruning only.
    score: f64,
    /// Took its blank for the current frame.
    done: bool,
}

/// Higher score first; ties go to the finished hypothesis, then the
/// shorter, then the lexicographically smaller token sequence.
fn rank(a: &BeamHyp, b: &BeamHyp) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.done.cmp(&a.done))
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Merges entries with the same state (token sequence and frame position)
/// by log-sum-exp of both scores.
fn merge(pool: Vec<BeamHyp>) -> Vec<BeamHyp> {
    let mut index: HashMap<(bool, Vec<usize>), usize> = HashMap::new();
    let mut out: Vec<BeamHyp> = Vec::with_capacity(pool.len());
    for h in pool {
        match index.get(&(h.done, h.tokens.clone())) {
            Some(&i) => {
                out[i].logp = logadd(out[i].logp, h.logp);
                out[i].score = logadd(out[i].score, h.score);
            }
            None => {
                index.insert((h.done, h.tokens.clone()), out.len());
                out.push(h);
            }
        }
    }
    out
}

/// Frame-synchronous beam search. Within a frame, every unfinished
/// hypothesis is expanded by blank (finishing it for this frame) and by
/// each label; the pool of finished and unfinished candidates is merged
/// and cut to `beam` by penalized score. After `max_sym` label rounds the
/// remaining hypotheses take a forced blank. Returns the surviving
/// hypothesis with the highest unpenalized log-probability. With `beam ==
/// 1` this is exactly [`greedy_decode`].
pub fn beam_search<S: Real>(
    f: &Tensor<S>,
    dec: &mut TaskDecoder<'_, S>,
    beam: usize,
    bp: f64,
    max_sym: usize,
) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::contract("beam must be >= 1"));
    }
    let frames = check_encoder(f, dec)?;
    let pf = dec.frames(f);
    let jd = dec.joint_dim();
    let vocab = dec.vocab();
    let mut hyps = vec![BeamHyp {
        tokens: Vec::new(),
        logp: 0.0,
        score: 0.0,
        done: false,
    }];
    for t in 0..frames {
        let row = &pf[t * jd..(t + 1) * jd];
        let mut done: Vec<BeamHyp> = Vec::new();
        let mut active: Vec<BeamHyp> = hyps.into_iter().map(|h| BeamHyp { done: false, ..h }).collect();
        for round in 0..=max_sym {
            let mut pool = std::mem::take(&mut done);
            for h in &active {
                let logits = dec.logits(row, &h.tokens)?;
                let lsm = kernels::log_softmax_rows(&logits, vocab);
                let pen = kernels::log_softmax_rows(&apply_blank_penalty(&logits, bp), vocab);
                pool.push(BeamHyp {
                    tokens: h.tokens.clone(),
                    logp: h.logp + lsm[BLANK].f64(),
                    score: h.score + pen[BLANK].f64(),
                    done: true,
                });
                if round == max_sym {
                    continue;
                }
                for k in 1..vocab {
                    let mut tokens = h.tokens.clone();
                    tokens.push(k);
                    pool.push(BeamHyp {
                        tokens,
                        logp: h.logp + lsm[k].f64(),
                        score: h.score + pen[k].f64(),
                        done: false,
                    });
                }
            }
            let mut pool = merge(pool);
            pool.sort_by(rank);
            pool.truncate(beam);
            (done, active) = pool.into_iter().partition(|h| h.done);
            if active.is_empty() {
                break;
            }
        }
        hyps = done;
    }
    let best = hyps
        .into_iter()
        .min_by(|a, b| {
            b.logp
                .partial_cmp(&a.logp)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
        .expect("beam keeps at least one hypothesis");
    Ok(Hypothesis {
        tokens: best.tokens,
        logp: best.logp,
    })
}

/// Decode output: one `id logp tokens` line per utterance.
pub fn write_decodes(path: &Path, rows: &[(String, Hypothesis)]) -> Result<()> {
    let mut out = String::new();
    for (id, h) in rows {
        let tokens: Vec<String> = h.tokens.iter().map(usize::to_string).collect();
        writeln!(out, "{id}\t{}\t{}", h.logp, tokens.join(" ")).expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_decodes`].
pub fn read_decodes(path: &Path) -> Result<Vec<(String, Hypothesis)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: format!("line {}: {msg}", n + 1),
    };
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, logp, tokens] = cols.as_slice() else {
                return Err(bad(n, "expected 3 columns"));
            };
            let logp = logp.parse().map_err(|_| bad(n, "bad logp"))?;
            let tokens = tokens
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(n, "bad token")))
                .collect::<Result<_>>()?;
            Ok((id.to_string(), Hypothesis { tokens, logp }))
        })
        .collect()
}
