//! Exhaustive-enumeration oracles. Deliberately naive: they share no code
//! with the dynamic programs they check.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn log_prob(row: &[f64], k: usize) -> f64 {
    let total: f64 = row.iter().map(|z| z.exp()).sum();
    (row[k].exp() / total).ln()
}

fn log_sum(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// All ways to choose `k` positions out of `n`, as sorted index lists.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Negative log-likelihood of `target` under a `(T', U+1, V)` lattice by
/// summing over every alignment explicitly. An alignment is a string of
/// `T'` blanks and `U` labels whose last symbol is the blank that leaves the
/// final frame; there are `C(T'+U-1, U)` of them.
pub fn brute_force_transducer_nll(logits: &Tensor<f64>, target: &[usize]) -> Result<f64> {
    let [frames, positions, vocab] = *logits.shape() else {
        return Err(Error::dim(format!("lattice shape {:?}", logits.shape())));
    };
    let u_len = target.len();
    if positions != u_len + 1 {
        return Err(Error::dim(format!(
            "lattice has {positions} positions for a {u_len}-token target"
        )));
    }
    if frames + u_len > 14 {
        return Err(Error::contract(format!(
            "enumeration limited to T'+U <= 14, got {}",
            frames + u_len
        )));
    }
    super::check_target(target, vocab)?;
    let z = logits.data();
    let row = |t: usize, u: usize| &z[(t * positions + u) * vocab..(t * positions + u + 1) * vocab];
    let mut paths = Vec::new();
    for labels in combinations(frames + u_len - 1, u_len) {
        let (mut t, mut u, mut lp) = (0usize, 0usize, 0.0f64);
        for pos in 0..frames + u_len {
            if labels.contains(&pos) {
                lp += log_prob(row(t, u), target[u]);
                u += 1;
            } else {
                lp += log_prob(row(t, u), 0);
                t += 1;
            }
        }
        debug_assert_eq!((t, u), (frames, u_len));
        paths.push(lp);
    }
    Ok(-log_sum(&paths))
}

/// CTC negative log-likelihood by enumerating all `V^T'` frame paths and
/// keeping those that collapse (merge repeats, drop blanks) to `target`.
pub fn brute_force_ctc_nll(logprobs: &Tensor<f64>, target: &[usize]) -> Result<f64> {
    let [frames, vocab] = *logprobs.shape() else {
        return Err(Error::dim(format!("frame log-probs shape {:?}", logprobs.shape())));
    };
    if (vocab as f64).powi(frames as i32) > 2e6 {
        return Err(Error::contract("enumeration limited to 2e6 paths"));
    }
    super::check_target(target, vocab)?;
    let lp = logprobs.data();
    let mut path = vec![0usize; frames];
    let mut hits = Vec::new();
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != 0 {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == target {
            hits.push(path.iter().enumerate().map(|(t, &s)| lp[t * vocab + s]).sum());
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == frames {
                return if hits.is_empty() {
                    Err(Error::NoPath("no frame path collapses to the target".into()))
                } else {
                    Ok(-log_sum(&hits))
                };
            }
            path[i] += 1;
            if path[i] < vocab {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
