use super::{check_target, logadd, PruneBounds, BLANK, NEG_SENTINEL, UNREACHABLE};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Real, Tensor, Var};

/// Forward-backward results on a (possibly windowed) transducer lattice.
#[derive(Clone, Debug)]
pub struct TransducerStats {
    pub frames: usize,
    pub target_len: usize,
    pub nll: f64,
    /// dNLL/dlogits in the layout of the input logits.
    pub grad: Vec<f64>,
    /// Posterior mass of the label transition `(t,u) -> (t,u+1)`, `(T', U)`.
    pub label_occupancy: Vec<f64>,
    /// Posterior mass of the blank transition leaving `(t,u)`, `(T', U+1)`.
    pub blank_occupancy: Vec<f64>,
}

/// Which output positions each frame keeps: `u` in `[starts[t], starts[t]+width)`.
struct Window<'a> {
    starts: &'a [usize],
    width: usize,
}

impl Window<'_> {
    #[inline]
    fn contains(&self, t: usize, u: usize) -> bool {
        let s = self.starts[t];
        u >= s && u < s + self.width
    }
}

fn lattice_dp(
    logits: &[f64],
    vocab: usize,
    target: &[usize],
    win: &Window<'_>,
) -> Result<TransducerStats> {
    let frames = win.starts.len();
    let u_len = target.len();
    let positions = u_len + 1;
    let width = win.width;
    let lp = kernels::log_softmax_rows(logits, vocab);
    let at = |t: usize, u: usize| (t * width + (u - win.starts[t])) * vocab;
    let lp_blank = |t: usize, u: usize| lp[at(t, u) + BLANK];
    let lp_label = |t: usize, u: usize| lp[at(t, u) + target[u]];

    if !win.contains(0, 0) || !win.contains(frames - 1, u_len) {
        return Err(Error::NoPath(
            "window excludes the lattice start or end".into(),
        ));
    }

    let idx = |t: usize, u: usize| t * positions + u;
    let mut alpha = vec![NEG_SENTINEL; frames * positions];
    for t in 0..frames {
        let lo = win.starts[t];
        for u in lo..(lo + width).min(positions) {
            let a = if t == 0 && u == 0 {
                0.0
            } else {
                let mut a = NEG_SENTINEL;
                if t > 0 && win.contains(t - 1, u) {
                    a = logadd(a, alpha[idx(t - 1, u)] + lp_blank(t - 1, u));
                }
                if u > 0 && win.contains(t, u - 1) {
                    a = logadd(a, alpha[idx(t, u - 1)] + lp_label(t, u - 1));
                }
                a
            };
            alpha[idx(t, u)] = a;
        }
    }
    let log_p = alpha[idx(frames - 1, u_len)] + lp_blank(frames - 1, u_len);
    if log_p < UNREACHABLE {
        return Err(Error::NoPath(format!(
            "no admitted alignment of {u_len} tokens over {frames} frames"
        )));
    }

    let mut beta = vec![NEG_SENTINEL; frames * positions];
    for t in (0..frames).rev() {
        let lo = win.starts[t];
        for u in (lo..(lo + width).min(positions)).rev() {
            let b = if t == frames - 1 && u == u_len {
                lp_blank(t, u)
            } else {
                let mut b = NEG_SENTINEL;
                if t + 1 < frames && win.contains(t + 1, u) {
                    b = logadd(b, beta[idx(t + 1, u)] + lp_blank(t, u));
                }
                if u < u_len && win.contains(t, u + 1) {
                    b = logadd(b, beta[idx(t, u + 1)] + lp_label(t, u));
                }
                b
            };
            beta[idx(t, u)] = b;
        }
    }

    let mut grad = vec![0.0; logits.len()];
    let mut label_occupancy = vec![0.0; frames * u_len];
    let mut blank_occupancy = vec![0.0; frames * positions];
    for t in 0..frames {
        let lo = win.starts[t];
        for u in lo..(lo + width).min(positions) {
            let a = alpha[idx(t, u)];
            let blank = if t == frames - 1 && u == u_len {
                (a + lp_blank(t, u) - log_p).exp()
            } else if t + 1 < frames && win.contains(t + 1, u) {
                (a + lp_blank(t, u) + beta[idx(t + 1, u)] - log_p).exp()
            } else {
                0.0
            };
            let label = if u < u_len && win.contains(t, u + 1) {
                (a + lp_label(t, u) + beta[idx(t, u + 1)] - log_p).exp()
            } else {
                0.0
            };
            blank_occupancy[idx(t, u)] = blank;
            if u < u_len {
                label_occupancy[t * u_len + u] = label;
            }
            let gamma = blank + label;
            let base = at(t, u);
            for k in 0..vocab {
                grad[base + k] = lp[base + k].exp() * gamma;
            }
            grad[base + BLANK] -= blank;
            if u < u_len {
                grad[base + target[u]] -= label;
            }
        }
    }

    Ok(TransducerStats {
        frames,
        target_len: u_len,
        nll: -log_p,
        grad,
        label_occupancy,
        blank_occupancy,
    })
}

fn lattice_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, w, v] if v >= 2 => Ok((t, w, v)),
        _ => Err(Error::dim(format!(
            "lattice must be (T', U+1, V) with V >= 2, got {shape:?}"
        ))),
    }
}

/// Forward-backward over a full `(T', U+1, V)` lattice, or over a windowed
/// `(T', S, V)` lattice when `bounds` is given.
pub fn transducer_stats<S: Real>(
    logits: &Tensor<S>,
    target: &[usize],
    bounds: Option<&PruneBounds>,
) -> Result<TransducerStats> {
    let (frames, width, vocab) = lattice_dims(logits.shape())?;
    check_target(target, vocab)?;
    let full_starts;
    let win = match bounds {
        Some(b) => {
            b.check(frames, target.len())?;
            if b.width() != width {
                return Err(Error::dim(format!(
                    "bounds width {} but lattice width {width}",
                    b.width()
                )));
            }
            Window {
                starts: b.starts(),
                width,
            }
        }
        None => {
            if width != target.len() + 1 {
                return Err(Error::dim(format!(
                    "lattice has {width} positions for a {}-token target",
                    target.len()
                )));
            }
            full_starts = vec![0; frames];
            Window {
                starts: &full_starts,
                width,
            }
        }
    };
    let data: Vec<f64> = logits.data().iter().map(|x| x.f64()).collect();
    lattice_dp(&data, vocab, target, &win)
}

/// Closed-form gradient of the transducer NLL with respect to the logits:
/// `softmax(z[t,u])[k] * gamma(t,u) - occ(t,u,k)`.
pub fn transducer_occupancy_grad<S: Real>(logits: &Tensor<S>, target: &[usize]) -> Result<Tensor<S>> {
    let stats = transducer_stats(logits, target, None)?;
    Tensor::new(
        logits.shape().to_vec(),
        stats.grad.iter().map(|&g| S::lit(g)).collect(),
    )
}

fn record<'g, S: Real>(logits: &Var<'g, S>, stats: &TransducerStats) -> Result<Var<'g, S>> {
    logits.precomputed_scalar(
        S::lit(stats.nll),
        stats.grad.iter().map(|&g| S::lit(g)).collect(),
    )
}

/// Transducer loss `-log P(y|X)` on a full `(T', U+1, V)` lattice,
/// differentiable through the tape. Also returns the forward-backward
/// statistics (the simple loss feeds its occupancies to pruning).
pub fn transducer_nll<'g, S: Real>(
    logits: &Var<'g, S>,
    target: &[usize],
) -> Result<(Var<'g, S>, TransducerStats)> {
    let stats = transducer_stats(&logits.value(), target, None)?;
    Ok((record(logits, &stats)?, stats))
}

/// Transducer loss restricted to the pruning windows. `joiner` receives the
/// admitted `(t, u)` pairs, frame-major with `width` positions per frame,
/// and returns their logits as `(pairs, V)`; only those pairs are evaluated.
pub fn pruned_transducer_nll<'g, S: Real, F>(
    bounds: &PruneBounds,
    target: &[usize],
    joiner: F,
) -> Result<(Var<'g, S>, TransducerStats)>
where
    F: FnOnce(&[usize], &[usize]) -> Result<Var<'g, S>>,
{
    let frames = bounds.starts().len();
    bounds.check(frames, target.len())?;
    let width = bounds.width();
    let mut t_idx = Vec::with_capacity(frames * width);
    let mut u_idx = Vec::with_capacity(frames * width);
    for (t, &s) in bounds.starts().iter().enumerate() {
        for j in 0..width {
            t_idx.push(t);
            u_idx.push(s + j);
        }
    }
    let rows = joiner(&t_idx, &u_idx)?;
    let shape = rows.shape();
    let vocab = match shape[..] {
        [n, v] if n == t_idx.len() => v,
        _ => {
            return Err(Error::dim(format!(
                "joiner returned {shape:?} for {} pairs",
                t_idx.len()
            )))
        }
    };
    let lattice = rows.reshape(&[frames, width, vocab])?;
    let stats = transducer_stats(&lattice.value(), target, Some(bounds))?;
    Ok((record(&lattice, &stats)?, stats))
}
