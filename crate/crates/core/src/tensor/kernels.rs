//! Plain slice kernels shared by the tape ops and the tape-free inference
//! paths. Every row of an output depends only on the matching input row (or
//! the listed taps), with a fixed accumulation order, so row subsets computed
//! separately are bit-identical to the same rows of a batched call.

use super::Real;

/// Additive stand-in for minus infinity in log space.
pub const NEG_SENTINEL: f64 = -1e30;

/// `c[m,n] = a[m,k] * b[k,n]`.
pub fn matmul<S: Real>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c[m,k] = a[m,n] * b[k,n]^T`.
pub fn matmul_bt<S: Real>(a: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// `c[k,n] = a[m,k]^T * b[m,n]`.
pub fn matmul_at<S: Real>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

pub fn add_row_inplace<S: Real>(x: &mut [S], row: &[S]) {
    for chunk in x.chunks_mut(row.len()) {
        for (a, &b) in chunk.iter_mut().zip(row) {
            *a += b;
        }
    }
}

pub fn logsumexp<S: Real>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let sum: S = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax_rows<S: Real>(x: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let start = out.len();
        let mut sum = S::zero();
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e = *e / sum;
        }
    }
    out
}

pub fn log_softmax_rows<S: Real>(x: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let lse = logsumexp(row);
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

/// Normalizes each row to zero mean and unit variance; returns the output
/// and the per-row reciprocal standard deviations.
pub fn layernorm_rows<S: Real>(x: &[S], cols: usize, eps: S) -> (Vec<S>, Vec<S>) {
    let n = S::lit(cols as f64);
    let mut out = Vec::with_capacity(x.len());
    let mut rstds = Vec::with_capacity(x.len() / cols);
    for row in x.chunks(cols) {
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let rstd = S::one() / (var + eps).sqrt();
        rstds.push(rstd);
        out.extend(row.iter().map(|&v| (v - mean) * rstd));
    }
    (out, rstds)
}

/// Geometry of a 1-D convolution over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub frames: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub causal: bool,
    pub depthwise: bool,
}

impl ConvGeom {
    /// Number of frames of left padding.
    pub fn left_pad(&self) -> usize {
        if self.causal {
            self.kernel - 1
        } else {
            (self.kernel - 1) / 2
        }
    }

    /// Input frame feeding tap `j` of output frame `t`, if inside the sequence.
    #[inline]
    pub fn tap(&self, t: usize, j: usize) -> Option<usize> {
        let s = t + j;
        let pad = self.left_pad();
        if s < pad || s - pad >= self.frames {
            None
        } else {
            Some(s - pad)
        }
    }

    pub fn weight_len(&self) -> usize {
        if self.depthwise {
            self.kernel * self.channels_in
        } else {
            self.kernel * self.channels_in * self.channels_out
        }
    }
}

/// Computes output frames `[from, to)` of a convolution. `x` holds all
/// input frames `(frames, channels_in)`; weights are `(K, Cin, Cout)`, or
/// `(K, C)` when depthwise.
pub fn conv1d_frames<S: Real>(x: &[S], w: &[S], g: &ConvGeom, from: usize, to: usize) -> Vec<S> {
    let (cin, cout) = (g.channels_in, g.channels_out);
    let mut out = vec![S::zero(); (to - from) * cout];
    for t in from..to {
        let orow = &mut out[(t - from) * cout..(t - from + 1) * cout];
        for j in 0..g.kernel {
            let Some(s) = g.tap(t, j) else { continue };
            let xrow = &x[s * cin..(s + 1) * cin];
            if g.depthwise {
                let wrow = &w[j * cin..(j + 1) * cin];
                for ((o, &xv), &wv) in orow.iter_mut().zip(xrow).zip(wrow) {
                    *o += xv * wv;
                }
            } else {
                for (ci, &xv) in xrow.iter().enumerate() {
                    let wrow = &w[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    out
}

/// Single-head scaled dot-product attention. `allowed(i, j)` says whether
/// query `i` may attend to key `j`; disallowed scores get [`NEG_SENTINEL`]
/// added, which underflows to an exact zero weight. Returns the output
/// `(tq, dv)` and the attention probabilities `(tq, tk)`.
pub fn attention<S: Real>(
    q: &[S],
    k: &[S],
    v: &[S],
    dims: (usize, usize, usize, usize),
    allowed: &dyn Fn(usize, usize) -> bool,
) -> (Vec<S>, Vec<S>) {
    let (tq, tk, dk, dv) = dims;
    let scale = S::one() / S::lit(dk as f64).sqrt();
    let mut scores = matmul_bt(q, k, tq, dk, tk);
    let neg = S::lit(NEG_SENTINEL);
    for i in 0..tq {
        for j in 0..tk {
            let s = &mut scores[i * tk + j];
            *s *= scale;
            if !allowed(i, j) {
                *s += neg;
            }
        }
    }
    let probs = softmax_rows(&scores, tk);
    let out = matmul(&probs, v, tq, tk, dv);
    (out, probs)
}

/// Mean over consecutive groups of `factor` rows; the trailing group may be
/// shorter.
pub fn downsample_mean<S: Real>(x: &[S], rows: usize, cols: usize, factor: usize) -> Vec<S> {
    let out_rows = rows.div_ceil(factor);
    let mut out = vec![S::zero(); out_rows * cols];
    for r in 0..out_rows {
        let lo = r * factor;
        let hi = (lo + factor).min(rows);
        let inv = S::one() / S::lit((hi - lo) as f64);
        let orow = &mut out[r * cols..(r + 1) * cols];
        for s in lo..hi {
            for (o, &v) in orow.iter_mut().zip(&x[s * cols..(s + 1) * cols]) {
                *o += v;
            }
        }
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    out
}
