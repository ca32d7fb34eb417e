use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{kernels, AttentionMask, Real, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub(crate) w: ParamId,
    pub(crate) b: Option<ParamId>,
    pub(crate) dims: (usize, usize),
}

impl Linear {
    pub(crate) fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Self {
        let w = store.add_uniform(rng, format!("{name}.w"), &[input, output], input);
        let b = bias.then(|| store.add_const(format!("{name}.b"), &[output], 0.0));
        Self {
            w,
            b,
            dims: (input, output),
        }
    }

    pub fn forward<'g, S: Real>(&self, p: &Bound<'g, S>, x: &Var<'g, S>) -> Result<Var<'g, S>> {
        let y = x.matmul(&p.var(self.w))?;
        match self.b {
            Some(b) => y.add_row(&p.var(b)),
            None => Ok(y),
        }
    }

    /// Tape-free version for one or more rows; bit-identical to `forward`.
    pub fn apply<S: Real>(&self, store: &ParamStore<S>, x: &[S]) -> Vec<S> {
        let (input, output) = self.dims;
        let mut y = kernels::matmul(x, store.get(self.w).data(), x.len() / input, input, output);
        if let Some(b) = self.b {
            kernels::add_row_inplace(&mut y, store.get(b).data());
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub(crate) fn new<S: Real>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_const(format!("{name}.gain"), &[dim], 1.0),
            bias: store.add_const(format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<'g, S: Real>(&self, p: &Bound<'g, S>, x: &Var<'g, S>) -> Result<Var<'g, S>> {
        x.layernorm(LN_EPS)?
            .mul_row(&p.var(self.gain))?
            .add_row(&p.var(self.bias))
    }
}

/// Width of one encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub model: usize,
    pub attention: usize,
    pub feed_forward: usize,
    pub conv_kernel: usize,
}

/// Pre-norm block: single-head self-attention, causal depthwise
/// convolution, and a feed-forward layer, each on a residual branch. Output
/// shape equals input shape.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    conv_w: ParamId,
    conv_b: ParamId,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    conv_kernel: usize,
    causal: bool,
}

impl EncoderBlock {
    pub(crate) fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: BlockDims,
        causal: bool,
    ) -> Self {
        let d = dims.model;
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
            query: Linear::new(store, rng, &format!("{name}.attn.q"), d, dims.attention, false),
            key: Linear::new(store, rng, &format!("{name}.attn.k"), d, dims.attention, false),
            value: Linear::new(store, rng, &format!("{name}.attn.v"), d, dims.attention, false),
            attn_out: Linear::new(store, rng, &format!("{name}.attn.o"), dims.attention, d, true),
            conv_w: store.add_uniform(
                rng,
                format!("{name}.conv.w"),
                &[dims.conv_kernel, d],
                dims.conv_kernel,
            ),
            conv_b: store.add_const(format!("{name}.conv.b"), &[d], 0.0),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
            ff_in: Linear::new(store, rng, &format!("{name}.ff.in"), d, dims.feed_forward, true),
            ff_out: Linear::new(store, rng, &format!("{name}.ff.out"), dims.feed_forward, d, true),
            conv_kernel: dims.conv_kernel,
            causal,
        }
    }

    pub fn forward<'g, S: Real>(
        &self,
        p: &Bound<'g, S>,
        x: &Var<'g, S>,
        mask: AttentionMask,
    ) -> Result<Var<'g, S>> {
        let h = self.ln_attn.forward(p, x)?;
        let q = self.query.forward(p, &h)?;
        let k = self.key.forward(p, &h)?;
        let v = self.value.forward(p, &h)?;
        let att = q.masked_attention(&k, &v, mask)?;
        let x = x.add(&self.attn_out.forward(p, &att)?)?;
        let c = x
            .conv1d(&p.var(self.conv_w), self.causal, true)?
            .add_row(&p.var(self.conv_b))?
            .relu()?;
        let x = x.add(&c)?;
        let h = self.ln_ff.forward(p, &x)?;
        let f = self.ff_out.forward(p, &self.ff_in.forward(p, &h)?.relu()?)?;
        x.add(&f)
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    pub fn conv_kernel(&self) -> usize {
        self.conv_kernel
    }
}
