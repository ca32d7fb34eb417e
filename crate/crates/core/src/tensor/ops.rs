use super::graph::Node;
use super::kernels::{self, ConvGeom};
use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

/// Which keys each query frame may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionMask {
    /// Every frame sees every frame.
    #[default]
    Full,
    /// Frame `i` sees frames of its own chunk and of earlier chunks that
    /// start no more than `left_context` frames before its chunk. `offset`
    /// is the absolute position of row 0, used when a window of a longer
    /// stream is processed.
    Chunked {
        chunk: usize,
        left_context: usize,
        offset: usize,
    },
}

impl AttentionMask {
    pub fn chunked(chunk: usize, left_context: usize) -> Self {
        AttentionMask::Chunked {
            chunk,
            left_context,
            offset: 0,
        }
    }

    pub fn with_offset(self, offset: usize) -> Self {
        match self {
            AttentionMask::Full => AttentionMask::Full,
            AttentionMask::Chunked {
                chunk,
                left_context,
                ..
            } => AttentionMask::Chunked {
                chunk,
                left_context,
                offset,
            },
        }
    }

    /// Same mask on a time axis `factor` times finer.
    pub fn upsampled(self, factor: usize) -> Self {
        match self {
            AttentionMask::Full => AttentionMask::Full,
            AttentionMask::Chunked {
                chunk,
                left_context,
                offset,
            } => AttentionMask::Chunked {
                chunk: chunk * factor,
                left_context: left_context * factor,
                offset: offset * factor,
            },
        }
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        match *self {
            AttentionMask::Full => true,
            AttentionMask::Chunked {
                chunk,
                left_context,
                offset,
            } => {
                let (i, j) = (i + offset, j + offset);
                let start = (i / chunk) * chunk;
                j < start + chunk && j + left_context >= start
            }
        }
    }
}

pub(crate) enum Op<S> {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    MulRow { a: usize, row: usize },
    Scale { a: usize, c: S },
    Sum { a: usize },
    Exp { a: usize },
    Relu { a: usize },
    Tanh { a: usize },
    Conv1d { x: usize, w: usize, geom: ConvGeom },
    LayerNorm { x: usize, rstd: Vec<S> },
    Softmax { x: usize },
    LogSoftmax { x: usize },
    LogSumExp { x: usize },
    Embedding { table: usize, idx: Vec<usize> },
    Downsample { x: usize, factor: usize },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        probs: Vec<S>,
        dims: (usize, usize, usize, usize),
    },
    Reshape { x: usize },
    /// Scalar output whose gradient with respect to `x` was computed during
    /// the forward pass (lattice losses).
    Precomputed { x: usize, grad: Vec<S> },
}

fn matrix_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::dim(format!("{what} needs a matrix, got {shape:?}"))),
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl<'g, S: Real> Var<'g, S> {
    fn emit(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<S>,
        op: Op<S>,
        inputs: &[usize],
    ) -> Result<Var<'g, S>> {
        self.graph
            .push(name, Tensor::from_parts(shape, data), op, inputs)
    }

    fn with_other<T>(&self, other: &Var<'g, S>, f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> T) -> T {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs"
        );
        let nodes = self.graph.nodes.borrow();
        f(&nodes[self.id].value, &nodes[other.id].value)
    }

    fn with_value<T>(&self, f: impl FnOnce(&Tensor<S>) -> T) -> T {
        let nodes = self.graph.nodes.borrow();
        f(&nodes[self.id].value)
    }

    /// Matrix product `(m,k) x (k,n)`.
    pub fn matmul(&self, rhs: &Var<'g, S>) -> Result<Var<'g, S>> {
        let (shape, data) = self.with_other(rhs, |a, b| -> Result<_> {
            let (m, k) = matrix_dims(a.shape(), "matmul lhs")?;
            let (k2, n) = matrix_dims(b.shape(), "matmul rhs")?;
            if k != k2 {
                return Err(Error::dim(format!(
                    "matmul {:?} x {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            Ok((vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n)))
        })?;
        self.emit(
            "matmul",
            shape,
            data,
            Op::MatMul {
                a: self.id,
                b: rhs.id,
            },
            &[self.id, rhs.id],
        )
    }

    fn elementwise(
        &self,
        rhs: &Var<'g, S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var<'g, S>> {
        let (shape, data) = self.with_other(rhs, |a, b| -> Result<_> {
            same_shape(a.shape(), b.shape(), name)?;
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((a.shape().to_vec(), data))
        })?;
        self.emit(name, shape, data, op, &[self.id, rhs.id])
    }

    pub fn add(&self, rhs: &Var<'g, S>) -> Result<Var<'g, S>> {
        let op = Op::Add {
            a: self.id,
            b: rhs.id,
        };
        self.elementwise(rhs, "add", |x, y| x + y, op)
    }

    pub fn sub(&self, rhs: &Var<'g, S>) -> Result<Var<'g, S>> {
        let op = Op::Sub {
            a: self.id,
            b: rhs.id,
        };
        self.elementwise(rhs, "sub", |x, y| x - y, op)
    }

    pub fn mul(&self, rhs: &Var<'g, S>) -> Result<Var<'g, S>> {
        let op = Op::Mul {
            a: self.id,
            b: rhs.id,
        };
        self.elementwise(rhs, "mul", |x, y| x * y, op)
    }

    fn row_broadcast(
        &self,
        row: &Var<'g, S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var<'g, S>> {
        let (shape, data) = self.with_other(row, |a, r| -> Result<_> {
            let (_, cols) = a.rows_cols();
            if r.numel() != cols {
                return Err(Error::dim(format!(
                    "{name}: row of {} values against {:?}",
                    r.numel(),
                    a.shape()
                )));
            }
            let data = a
                .data()
                .chunks(cols)
                .flat_map(|chunk| chunk.iter().zip(r.data()).map(|(&x, &y)| f(x, y)))
                .collect();
            Ok((a.shape().to_vec(), data))
        })?;
        self.emit(name, shape, data, op, &[self.id, row.id])
    }

    /// Adds a vector to every row (bias).
    pub fn add_row(&self, row: &Var<'g, S>) -> Result<Var<'g, S>> {
        let op = Op::AddRow {
            a: self.id,
            row: row.id,
        };
        self.row_broadcast(row, "add_row", |x, y| x + y, op)
    }

    /// Multiplies every row by a vector (gain).
    pub fn mul_row(&self, row: &Var<'g, S>) -> Result<Var<'g, S>> {
        let op = Op::MulRow {
            a: self.id,
            row: row.id,
        };
        self.row_broadcast(row, "mul_row", |x, y| x * y, op)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'g, S>> {
        let c = S::lit(c);
        let (shape, data) =
            self.with_value(|a| (a.shape().to_vec(), a.data().iter().map(|&x| x * c).collect()));
        self.emit("scale", shape, data, Op::Scale { a: self.id, c }, &[self.id])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Var<'g, S>> {
        let s = self.with_value(|a| a.data().iter().copied().sum::<S>());
        self.emit("sum", vec![1], vec![s], Op::Sum { a: self.id }, &[self.id])
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(S) -> S,
        op: Op<S>,
    ) -> Result<Var<'g, S>> {
        let (shape, data) =
            self.with_value(|a| (a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()));
        self.emit(name, shape, data, op, &[self.id])
    }

    pub fn exp(&self) -> Result<Var<'g, S>> {
        self.unary("exp", |x| x.exp(), Op::Exp { a: self.id })
    }

    pub fn relu(&self) -> Result<Var<'g, S>> {
        self.unary("relu", |x| x.max(S::zero()), Op::Relu { a: self.id })
    }

    pub fn tanh(&self) -> Result<Var<'g, S>> {
        self.unary("tanh", |x| x.tanh(), Op::Tanh { a: self.id })
    }

    /// 1-D convolution over the rows of `(T, Cin)`. Full weights are
    /// `(K, Cin, Cout)`; depthwise weights are `(K, C)`. A causal
    /// convolution pads only on the left, so output frame `t` reads input
    /// frames `t-K+1..=t`.
    pub fn conv1d(&self, w: &Var<'g, S>, causal: bool, depthwise: bool) -> Result<Var<'g, S>> {
        let (geom, data) = self.with_other(w, |x, w| -> Result<_> {
            let (frames, cin) = matrix_dims(x.shape(), "conv1d input")?;
            let (kernel, cout) = match (depthwise, w.shape()) {
                (true, [k, c]) if *c == cin => (*k, cin),
                (false, [k, c, o]) if *c == cin => (*k, *o),
                _ => {
                    return Err(Error::dim(format!(
                        "conv1d weights {:?} for input {:?} (depthwise={depthwise})",
                        w.shape(),
                        x.shape()
                    )))
                }
            };
            let geom = ConvGeom {
                frames,
                channels_in: cin,
                channels_out: cout,
                kernel,
                causal,
                depthwise,
            };
            Ok((geom, kernels::conv1d_frames(x.data(), w.data(), &geom, 0, frames)))
        })?;
        self.emit(
            "conv1d",
            vec![geom.frames, geom.channels_out],
            data,
            Op::Conv1d {
                x: self.id,
                w: w.id,
                geom,
            },
            &[self.id, w.id],
        )
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layernorm(&self, eps: f64) -> Result<Var<'g, S>> {
        let (shape, (data, rstd)) = self.with_value(|x| {
            let (_, cols) = x.rows_cols();
            (
                x.shape().to_vec(),
                kernels::layernorm_rows(x.data(), cols, S::lit(eps)),
            )
        });
        self.emit(
            "layernorm",
            shape,
            data,
            Op::LayerNorm { x: self.id, rstd },
            &[self.id],
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'g, S>> {
        let (shape, data) = self.with_value(|x| {
            let (_, cols) = x.rows_cols();
            (x.shape().to_vec(), kernels::softmax_rows(x.data(), cols))
        });
        self.emit("softmax", shape, data, Op::Softmax { x: self.id }, &[self.id])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Var<'g, S>> {
        let (shape, data) = self.with_value(|x| {
            let (_, cols) = x.rows_cols();
            (x.shape().to_vec(), kernels::log_softmax_rows(x.data(), cols))
        });
        self.emit(
            "log_softmax",
            shape,
            data,
            Op::LogSoftmax { x: self.id },
            &[self.id],
        )
    }

    /// Log-sum-exp over the last axis; one value per row, shape `[rows]`.
    pub fn logsumexp(&self) -> Result<Var<'g, S>> {
        let data: Vec<S> = self.with_value(|x| {
            let (_, cols) = x.rows_cols();
            x.data().chunks(cols).map(kernels::logsumexp).collect()
        });
        self.emit(
            "logsumexp",
            vec![data.len()],
            data,
            Op::LogSumExp { x: self.id },
            &[self.id],
        )
    }

    /// Gathers rows of a `(V, d)` table.
    pub fn embedding_lookup(&self, idx: &[usize]) -> Result<Var<'g, S>> {
        let (shape, data) = self.with_value(|t| -> Result<_> {
            let (vocab, d) = matrix_dims(t.shape(), "embedding table")?;
            if idx.is_empty() {
                return Err(Error::dim("embedding lookup with no indices"));
            }
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                if i >= vocab {
                    return Err(Error::dim(format!("row {i} of a {vocab}-row table")));
                }
                data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
            }
            Ok((vec![idx.len(), d], data))
        })?;
        self.emit(
            "embedding_lookup",
            shape,
            data,
            Op::Embedding {
                table: self.id,
                idx: idx.to_vec(),
            },
            &[self.id],
        )
    }

    /// Averages consecutive groups of `factor` frames; `T -> ceil(T/factor)`.
    pub fn strided_mean_downsample(&self, factor: usize) -> Result<Var<'g, S>> {
        if factor == 0 {
            return Err(Error::contract("downsample factor must be positive"));
        }
        let (shape, data) = self.with_value(|x| -> Result<_> {
            let (rows, cols) = matrix_dims(x.shape(), "downsample input")?;
            Ok((
                vec![rows.div_ceil(factor), cols],
                kernels::downsample_mean(x.data(), rows, cols, factor),
            ))
        })?;
        self.emit(
            "downsample",
            shape,
            data,
            Op::Downsample {
                x: self.id,
                factor,
            },
            &[self.id],
        )
    }

    /// Single-head attention with `self` as queries `(Tq, dk)`.
    pub fn masked_attention(
        &self,
        k: &Var<'g, S>,
        v: &Var<'g, S>,
        mask: AttentionMask,
    ) -> Result<Var<'g, S>> {
        let (dims, out, probs) = {
            let nodes = self.graph.nodes.borrow();
            let (q, kk, vv) = (&nodes[self.id].value, &nodes[k.id].value, &nodes[v.id].value);
            let (tq, dk) = matrix_dims(q.shape(), "attention queries")?;
            let (tk, dk2) = matrix_dims(kk.shape(), "attention keys")?;
            let (tv, dv) = matrix_dims(vv.shape(), "attention values")?;
            if dk != dk2 || tk != tv {
                return Err(Error::dim(format!(
                    "attention q {:?} k {:?} v {:?}",
                    q.shape(),
                    kk.shape(),
                    vv.shape()
                )));
            }
            let dims = (tq, tk, dk, dv);
            let (out, probs) =
                kernels::attention(q.data(), kk.data(), vv.data(), dims, &|i, j| mask.allows(i, j));
            (dims, out, probs)
        };
        self.emit(
            "masked_attention",
            vec![dims.0, dims.3],
            out,
            Op::Attention {
                q: self.id,
                k: k.id,
                v: v.id,
                probs,
                dims,
            },
            &[self.id, k.id, v.id],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, S>> {
        let t = self.with_value(|x| x.reshape(shape.to_vec()))?;
        let data = t.data().to_vec();
        self.emit("reshape", shape.to_vec(), data, Op::Reshape { x: self.id }, &[self.id])
    }

    /// Records a scalar computed outside the tape together with its
    /// gradient with respect to `self`.
    pub(crate) fn precomputed_scalar(&self, value: S, grad: Vec<S>) -> Result<Var<'g, S>> {
        debug_assert_eq!(grad.len(), self.with_value(|x| x.numel()));
        self.emit(
            "lattice loss",
            vec![1],
            vec![value],
            Op::Precomputed { x: self.id, grad },
            &[self.id],
        )
    }
}

fn col_sums<S: Real>(g: &[S], cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); cols];
    for chunk in g.chunks(cols) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

/// Pushes the gradient contributions of node `id` (whose output gradient is
/// `g`) to its inputs.
pub(crate) fn backward<S: Real>(
    nodes: &[Node<S>],
    id: usize,
    g: &[S],
    send: &mut dyn FnMut(usize, Vec<S>),
) {
    let val = |i: usize| nodes[i].value.data();
    let out = nodes[id].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let n = nodes[*b].value.shape()[1];
            if nodes[*a].requires_grad {
                send(*a, kernels::matmul_bt(g, val(*b), m, n, k));
            }
            if nodes[*b].requires_grad {
                send(*b, kernels::matmul_at(val(*a), g, m, k, n));
            }
        }
        Op::Add { a, b } => {
            send(*a, g.to_vec());
            send(*b, g.to_vec());
        }
        Op::Sub { a, b } => {
            send(*a, g.to_vec());
            send(*b, g.iter().map(|&x| -x).collect());
        }
        Op::Mul { a, b } => {
            send(*a, g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect());
            send(*b, g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect());
        }
        Op::AddRow { a, row } => {
            send(*a, g.to_vec());
            send(*row, col_sums(g, val(*row).len()));
        }
        Op::MulRow { a, row } => {
            let r = val(*row);
            let cols = r.len();
            let ga = g
                .chunks(cols)
                .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x * y))
                .collect();
            send(*a, ga);
            let prod: Vec<S> = g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect();
            send(*row, col_sums(&prod, cols));
        }
        Op::Scale { a, c } => send(*a, g.iter().map(|&x| x * *c).collect()),
        Op::Sum { a } => send(*a, vec![g[0]; val(*a).len()]),
        Op::Exp { a } => send(*a, g.iter().zip(out).map(|(&x, &y)| x * y).collect()),
        Op::Relu { a } => send(
            *a,
            g.iter()
                .zip(out)
                .map(|(&x, &y)| if y > S::zero() { x } else { S::zero() })
                .collect(),
        ),
        Op::Tanh { a } => send(
            *a,
            g.iter()
                .zip(out)
                .map(|(&x, &y)| x * (S::one() - y * y))
                .collect(),
        ),
        Op::Conv1d { x, w, geom } => {
            let (cin, cout) = (geom.channels_in, geom.channels_out);
            let xv = val(*x);
            let wv = val(*w);
            let mut gx = vec![S::zero(); xv.len()];
            let mut gw = vec![S::zero(); wv.len()];
            for t in 0..geom.frames {
                let grow = &g[t * cout..(t + 1) * cout];
                for j in 0..geom.kernel {
                    let Some(s) = geom.tap(t, j) else { continue };
                    if geom.depthwise {
                        for c in 0..cin {
                            gx[s * cin + c] += wv[j * cin + c] * grow[c];
                            gw[j * cin + c] += xv[s * cin + c] * grow[c];
                        }
                    } else {
                        for ci in 0..cin {
                            let base = (j * cin + ci) * cout;
                            let xval = xv[s * cin + ci];
                            let mut acc = S::zero();
                            for co in 0..cout {
                                acc += wv[base + co] * grow[co];
                                gw[base + co] += xval * grow[co];
                            }
                            gx[s * cin + ci] += acc;
                        }
                    }
                }
            }
            if nodes[*x].requires_grad {
                send(*x, gx);
            }
            if nodes[*w].requires_grad {
                send(*w, gw);
            }
        }
        Op::LayerNorm { x, rstd } => {
            let cols = nodes[*x].value.rows_cols().1;
            let n = S::lit(cols as f64);
            let mut gx = Vec::with_capacity(g.len());
            for ((grow, yrow), &r) in g.chunks(cols).zip(out.chunks(cols)).zip(rstd) {
                let mean_g = grow.iter().copied().sum::<S>() / n;
                let mean_gy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<S>() / n;
                gx.extend(
                    grow.iter()
                        .zip(yrow)
                        .map(|(&gv, &y)| r * (gv - mean_g - y * mean_gy)),
                );
            }
            send(*x, gx);
        }
        Op::Softmax { x } => {
            let cols = nodes[*x].value.rows_cols().1;
            let mut gx = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(cols).zip(out.chunks(cols)) {
                let dot = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<S>();
                gx.extend(grow.iter().zip(yrow).map(|(&gv, &y)| y * (gv - dot)));
            }
            send(*x, gx);
        }
        Op::LogSoftmax { x } => {
            let cols = nodes[*x].value.rows_cols().1;
            let mut gx = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(cols).zip(out.chunks(cols)) {
                let total = grow.iter().copied().sum::<S>();
                gx.extend(grow.iter().zip(yrow).map(|(&gv, &y)| gv - y.exp() * total));
            }
            send(*x, gx);
        }
        Op::LogSumExp { x } => {
            let cols = nodes[*x].value.rows_cols().1;
            let mut gx = Vec::with_capacity(val(*x).len());
            for ((xrow, &lse), &gv) in val(*x).chunks(cols).zip(out).zip(g) {
                gx.extend(xrow.iter().map(|&v| gv * (v - lse).exp()));
            }
            send(*x, gx);
        }
        Op::Embedding { table, idx } => {
            let d = nodes[*table].value.shape()[1];
            let mut gt = vec![S::zero(); val(*table).len()];
            for (r, &i) in idx.iter().enumerate() {
                for (a, &b) in gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                    *a += b;
                }
            }
            send(*table, gt);
        }
        Op::Downsample { x, factor } => {
            let (rows, cols) = nodes[*x].value.rows_cols();
            let mut gx = vec![S::zero(); rows * cols];
            for s in 0..rows {
                let r = s / factor;
                let lo = r * factor;
                let count = ((lo + factor).min(rows) - lo) as f64;
                let inv = S::lit(1.0 / count);
                for c in 0..cols {
                    gx[s * cols + c] = g[r * cols + c] * inv;
                }
            }
            send(*x, gx);
        }
        Op::Attention {
            q,
            k,
            v,
            probs,
            dims,
        } => {
            let (tq, tk, dk, dv) = *dims;
            let scale = S::one() / S::lit(dk as f64).sqrt();
            if nodes[*v].requires_grad {
                send(*v, kernels::matmul_at(probs, g, tq, tk, dv));
            }
            let dp = kernels::matmul_bt(g, val(*v), tq, dv, tk);
            let mut ds = Vec::with_capacity(tq * tk);
            for (prow, dprow) in probs.chunks(tk).zip(dp.chunks(tk)) {
                let dot = prow.iter().zip(dprow).map(|(&a, &b)| a * b).sum::<S>();
                ds.extend(
                    prow.iter()
                        .zip(dprow)
                        .map(|(&p, &d)| p * (d - dot) * scale),
                );
            }
            if nodes[*q].requires_grad {
                send(*q, kernels::matmul(&ds, val(*k), tq, tk, dk));
            }
            if nodes[*k].requires_grad {
                send(*k, kernels::matmul_at(&ds, val(*q), tq, tk, dk));
            }
        }
        Op::Reshape { x } => send(*x, g.to_vec()),
        Op::Precomputed { x, grad } => send(*x, grad.iter().map(|&v| v * g[0]).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::new();
        let x = g.leaf(t(&[4], &[1.0, -2.0, 3.0, 0.5]));
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let y = x.mul(&x).unwrap().sum().unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[4.0, 8.0]);
        g.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[0.0; 6]));
        let b = g.leaf(t(&[2, 3], &[0.0; 6]));
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let g = Graph::new();
        let x = g.leaf(t(&[1], &[1000.0]));
        assert!(matches!(x.exp(), Err(Error::Numeric("exp"))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let d = x.detach();
        x.mul(&d).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 2.0]);
        assert!(d.grad().is_none());
    }

    #[test]
    fn chunked_mask_pattern() {
        let m = AttentionMask::chunked(2, 2);
        // frame 3 lives in chunk [2,4) and sees [0,4)
        assert!((0..4).all(|j| m.allows(3, j)));
        assert!(!m.allows(3, 4));
        // frame 5 lives in chunk [4,6) and sees [2,6)
        assert!(!m.allows(5, 1));
        assert!(m.allows(5, 2));
        assert!(m.allows(4, 5));
        let zero_left = AttentionMask::chunked(2, 0);
        assert!(!zero_left.allows(2, 1));
    }
}
