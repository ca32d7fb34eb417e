use super::TransducerStats;
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

/// Per-frame windows of output positions kept by the pruned loss: frame
/// `t` keeps `u` in `[starts[t], starts[t] + width)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneBounds {
    starts: Vec<usize>,
    width: usize,
}

impl PruneBounds {
    /// Bounds that keep the whole lattice.
    pub fn full(frames: usize, target_len: usize) -> Self {
        Self {
            starts: vec![0; frames],
            width: target_len + 1,
        }
    }

    pub fn new(starts: Vec<usize>, width: usize) -> Self {
        Self { starts, width }
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Validates against a `T'`-frame lattice for a `U`-token target.
    pub fn check(&self, frames: usize, target_len: usize) -> Result<()> {
        if self.starts.len() != frames {
            return Err(Error::dim(format!(
                "bounds cover {} frames, lattice has {frames}",
                self.starts.len()
            )));
        }
        if self.width == 0 || self.width > target_len + 1 {
            return Err(Error::contract(format!(
                "window width {} invalid for {target_len} tokens",
                self.width
            )));
        }
        let max_start = target_len + 1 - self.width;
        if self.starts.iter().any(|&s| s > max_start) {
            return Err(Error::contract(format!(
                "window start beyond {max_start}: {:?}",
                self.starts
            )));
        }
        if self.starts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::contract(format!(
                "window starts must be non-decreasing: {:?}",
                self.starts
            )));
        }
        Ok(())
    }

    /// Windows around a single entry path through the lattice.
    ///
    /// `entry[t * (U+1) + u]` is the posterior probability that frame `t`
    /// is entered at output position `u` (frame 0 is always entered at 0).
    /// The path `c` maximizing the summed entry posterior is found subject
    /// to `c[0] = 0`, steps of at most `k` positions per frame and
    /// `c[T'-1] >= U - k`, where `k = 1` whenever `T' >= U`. Frame `t` then
    /// keeps `range` positions starting `floor((range - 2) / 2)` below
    /// `c[t]`, clamped into the lattice. The path does not depend on
    /// `range`, so wider ranges keep supersets of narrower ones.
    pub fn from_entry_posterior(
        entry: &[f64],
        frames: usize,
        target_len: usize,
        range: usize,
    ) -> Result<Self> {
        if range < 2 {
            return Err(Error::contract(format!(
                "prune range must be at least 2, got {range}"
            )));
        }
        let positions = target_len + 1;
        if entry.len() != frames * positions || frames == 0 {
            return Err(Error::dim(format!(
                "entry posterior of {} values for a ({frames}, {positions}) lattice",
                entry.len()
            )));
        }
        let step = if frames == 1 {
            target_len.max(1)
        } else {
            target_len.saturating_sub(1).div_ceil(frames - 1).max(1)
        };
        let path = entry_path(entry, frames, positions, step);
        let width = range.min(positions);
        let max_start = positions - width;
        let below = (range - 2) / 2;
        let starts: Vec<usize> = path
            .iter()
            .map(|&c| c.saturating_sub(below).min(max_start))
            .collect();
        let reaches_end = starts[frames - 1] + width > target_len;
        let connected = starts
            .iter()
            .zip(&path[1..])
            .all(|(&s, &next)| next < s + width);
        if !reaches_end || !connected {
            return Err(Error::NoPath(format!(
                "{target_len} tokens cannot fit {frames} frames with range {range}"
            )));
        }
        Ok(Self { starts, width })
    }
}

/// Highest-scoring entry path; ties go to the smaller position.
fn entry_path(entry: &[f64], frames: usize, positions: usize, step: usize) -> Vec<usize> {
    let target_len = positions - 1;
    let mut score = vec![f64::NEG_INFINITY; frames * positions];
    let mut back = vec![0usize; frames * positions];
    score[0] = 0.0;
    for t in 1..frames {
        for u in 0..positions {
            let mut best = (f64::NEG_INFINITY, 0);
            for j in u.saturating_sub(step)..=u {
                let s = score[(t - 1) * positions + j];
                if s > best.0 {
                    best = (s, j);
                }
            }
            score[t * positions + u] = best.0 + entry[t * positions + u];
            back[t * positions + u] = best.1;
        }
    }
    let last = (frames - 1) * positions;
    let lo = target_len.saturating_sub(step);
    let mut end = lo;
    for u in lo..positions {
        if score[last + u] > score[last + end] {
            end = u;
        }
    }
    let mut path = vec![0; frames];
    path[frames - 1] = end;
    for t in (1..frames).rev() {
        path[t - 1] = back[t * positions + path[t]];
    }
    path
}

/// Window selection from the simple lattice's forward-backward statistics:
/// a frame is entered at `u` exactly when the previous frame's blank leaves
/// from `u`.
pub fn compute_prune_bounds(simple: &TransducerStats, range: usize) -> Result<PruneBounds> {
    let (frames, positions) = (simple.frames, simple.target_len + 1);
    let mut entry = vec![0.0; frames * positions];
    entry[0] = 1.0;
    if frames > 1 {
        entry[positions..].copy_from_slice(&simple.blank_occupancy[..(frames - 1) * positions]);
    }
    PruneBounds::from_entry_posterior(&entry, frames, simple.target_len, range)
}

/// Additive "simple" joiner: `z[t,u] = f[t]·W_f + g[u]·W_g + b`, shape
/// `(T', U+1, V)`. No nonlinearity, so each entry is a sum of one frame
/// term and one position term.
pub fn simple_joiner_logits<'g, S: Real>(
    f: &Var<'g, S>,
    g: &Var<'g, S>,
    w_f: &Var<'g, S>,
    w_g: &Var<'g, S>,
    bias: &Var<'g, S>,
) -> Result<Var<'g, S>> {
    let pf = f.matmul(w_f)?;
    let pg = g.matmul(w_g)?.add_row(bias)?;
    let (frames, vocab) = (pf.shape()[0], pf.shape()[1]);
    let positions = pg.shape()[0];
    if pg.shape()[1] != vocab {
        return Err(Error::dim("simple joiner projections disagree on vocab"));
    }
    let t_idx: Vec<usize> = (0..frames).flat_map(|t| std::iter::repeat_n(t, positions)).collect();
    let u_idx: Vec<usize> = (0..frames).flat_map(|_| 0..positions).collect();
    pf.embedding_lookup(&t_idx)?
        .add(&pg.embedding_lookup(&u_idx)?)?
        .reshape(&[frames, positions, vocab])
}
