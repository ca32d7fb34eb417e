use super::{check_target, logadd, BLANK, NEG_SENTINEL};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Fewest frames that can carry `target`: one per label plus one blank
/// between each pair of equal neighbours.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood over `(T', V)` frame log-probabilities
/// (log-softmax output), using the extended label sequence
/// `blank y1 blank y2 ... yU blank`.
pub fn ctc_nll<'g, S: Real>(logprobs: &Var<'g, S>, target: &[usize]) -> Result<Var<'g, S>> {
    let value = logprobs.value();
    let [frames, vocab] = *value.shape() else {
        return Err(Error::dim(format!(
            "CTC needs (T', V) log-probs, got {:?}",
            value.shape()
        )));
    };
    check_target(target, vocab)?;
    let need = ctc_min_frames(target);
    if frames < need {
        return Err(Error::NoPath(format!(
            "{frames} frames cannot carry {} labels ({need} needed)",
            target.len()
        )));
    }
    let lp: Vec<f64> = value.data().iter().map(|x| x.f64()).collect();
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&y| [y, BLANK]))
        .collect();
    let n = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let emit = |t: usize, s: usize| lp[t * vocab + ext[s]];

    let mut alpha = vec![NEG_SENTINEL; frames * n];
    alpha[0] = emit(0, 0);
    if n > 1 {
        alpha[1] = emit(0, 1);
    }
    for t in 1..frames {
        for s in 0..n {
            let prev = &alpha[(t - 1) * n..t * n];
            let mut a = prev[s];
            if s >= 1 {
                a = logadd(a, prev[s - 1]);
            }
            if skip_ok(s) {
                a = logadd(a, prev[s - 2]);
            }
            alpha[t * n + s] = a + emit(t, s);
        }
    }
    let last = (frames - 1) * n;
    let log_p = if n > 1 {
        logadd(alpha[last + n - 1], alpha[last + n - 2])
    } else {
        alpha[last]
    };

    let mut beta = vec![NEG_SENTINEL; frames * n];
    beta[last + n - 1] = emit(frames - 1, n - 1);
    if n > 1 {
        beta[last + n - 2] = emit(frames - 1, n - 2);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..n {
            let next = &beta[(t + 1) * n..(t + 2) * n];
            let mut b = next[s];
            if s + 1 < n {
                b = logadd(b, next[s + 1]);
            }
            if s + 2 < n && skip_ok(s + 2) {
                b = logadd(b, next[s + 2]);
            }
            beta[t * n + s] = b + emit(t, s);
        }
    }

    let mut grad = vec![S::zero(); frames * vocab];
    for t in 0..frames {
        for s in 0..n {
            let post = (alpha[t * n + s] + beta[t * n + s] - emit(t, s) - log_p).exp();
            grad[t * vocab + ext[s]] -= S::lit(post);
        }
    }
    logprobs.precomputed_scalar(S::lit(-log_p), grad)
}
