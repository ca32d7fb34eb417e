//! Encoders, predictor and joiners of the hierarchical transducer.
//!
//! The ASR encoder maps features to `f_s` (one factor-2 downsampling after
//! its first block); the ST encoder maps `f_s` to `f_t`. With zero ST
//! blocks `f_t == f_s`, which is the shared-encoder baseline. Each task
//! (recognition on source tokens, translation on target tokens) owns a
//! stateless predictor, a full joiner, a simple additive joiner used for
//! pruning, and a CTC head.

mod checkpoint;
mod layers;
mod params;

pub use checkpoint::{checkpoint_load, checkpoint_save, LoadOptions};
pub use layers::{BlockDims, EncoderBlock, LayerNorm, Linear};
pub use params::{Bound, ParamId, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{simple_joiner_logits, BLANK};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::{AttentionMask, Real, Tensor, Var};

/// Frames are halved once, after the first ASR block.
pub const DOWNSAMPLE: usize = 2;

/// Encoder layouts compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    /// One encoder feeds both tasks.
    Shared,
    /// ASR encoder followed by a shallow full-width ST encoder.
    Hier1,
    /// ASR encoder followed by a deeper ST encoder of half-width blocks.
    Hier2,
}

impl Arch {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shared" => Some(Arch::Shared),
            "hier1" => Some(Arch::Hier1),
            "hier2" => Some(Arch::Hier2),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Shared => "shared",
            Arch::Hier1 => "hier1",
            Arch::Hier2 => "hier2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Source vocabulary size, blank excluded.
    pub src_vocab: usize,
    /// Target vocabulary size, blank excluded.
    pub tgt_vocab: usize,
    pub d_model: usize,
    pub asr_blocks: usize,
    pub st_blocks: usize,
    /// ST blocks use half the attention and feed-forward width.
    pub st_half_width: bool,
    pub predictor_context: usize,
    pub joint_dim: usize,
    pub causal: bool,
}

impl ModelConfig {
    /// Desk-scale layout for `arch`: d=64, three ASR blocks, and either two
    /// full-width or four half-width ST blocks. The shared layout puts all
    /// five blocks in the one encoder.
    pub fn for_arch(arch: Arch, feature_dim: usize, src_vocab: usize, tgt_vocab: usize) -> Self {
        let (asr_blocks, st_blocks, st_half_width) = match arch {
            Arch::Shared => (5, 0, false),
            Arch::Hier1 => (3, 2, false),
            Arch::Hier2 => (3, 4, true),
        };
        Self {
            feature_dim,
            src_vocab,
            tgt_vocab,
            d_model: 64,
            asr_blocks,
            st_blocks,
            st_half_width,
            predictor_context: 2,
            joint_dim: 64,
            causal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("feature_dim", self.feature_dim >= 1, "must be >= 1"),
            ("src_vocab", self.src_vocab >= 1, "must be >= 1"),
            ("tgt_vocab", self.tgt_vocab >= 1, "must be >= 1"),
            ("d_model", self.d_model >= 2 && self.d_model.is_multiple_of(2), "must be even and >= 2"),
            ("asr_blocks", self.asr_blocks >= 1, "must be >= 1"),
            ("predictor_context", self.predictor_context >= 1, "must be >= 1"),
            ("joint_dim", self.joint_dim >= 1, "must be >= 1"),
        ];
        for (key, ok, msg) in checks {
            if !ok {
                return Err(Error::config(key, msg));
            }
        }
        Ok(())
    }

    fn block_dims(&self, half: bool) -> BlockDims {
        let d = self.d_model;
        let (attention, feed_forward) = if half { (d / 2, 2 * d) } else { (d, 4 * d) };
        BlockDims {
            model: d,
            attention,
            feed_forward,
            conv_kernel: 3,
        }
    }
}

/// Which output sequence a head produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Source-language transcription from `f_s`.
    Asr,
    /// Target-language translation from `f_t`.
    St,
}

impl Task {
    pub fn prefix(&self) -> &'static str {
        match self {
            Task::Asr => "asr",
            Task::St => "st",
        }
    }
}

/// Stateless predictor: token embedding, one causal convolution of width K
/// over the embeddings, and an output projection. Row `u` of the output
/// sees only the last K entries of `[BOS, y_1, ..., y_u]`; BOS shares the
/// blank embedding.
#[derive(Clone, Debug)]
pub struct Predictor {
    embed: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    proj: Linear,
    context: usize,
    vocab: usize,
    dim: usize,
}

impl Predictor {
    fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        vocab: usize,
        dim: usize,
        context: usize,
    ) -> Self {
        Self {
            embed: store.add_uniform(rng, format!("{name}.embed"), &[vocab, dim], 1),
            conv_w: store.add_uniform(
                rng,
                format!("{name}.conv.w"),
                &[context, dim, dim],
                context * dim,
            ),
            conv_b: store.add_const(format!("{name}.conv.b"), &[dim], 0.0),
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, dim, true),
            context,
            vocab,
            dim,
        }
    }

    pub fn context(&self) -> usize {
        self.context
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        for &t in tokens {
            if t == BLANK {
                return Err(Error::contract("blank fed to the predictor"));
            }
            if t >= self.vocab {
                return Err(Error::Vocab {
                    token: t,
                    vocab: self.vocab,
                });
            }
        }
        Ok(())
    }

    /// Outputs for every prefix of `tokens`, shape `(U+1, d)`.
    pub fn forward<'g, S: Real>(&self, p: &Bound<'g, S>, tokens: &[usize]) -> Result<Var<'g, S>> {
        self.check_tokens(tokens)?;
        let seq: Vec<usize> = std::iter::once(BLANK).chain(tokens.iter().copied()).collect();
        let e = p.var(self.embed).embedding_lookup(&seq)?;
        let c = e
            .conv1d(&p.var(self.conv_w), true, false)?
            .add_row(&p.var(self.conv_b))?
            .relu()?;
        self.proj.forward(p, &c)
    }

    /// Output for the prefix `history` alone, without a tape. Bit-identical
    /// to the last row of [`Predictor::forward`].
    pub fn step<S: Real>(&self, store: &ParamStore<S>, history: &[usize]) -> Result<Vec<S>> {
        self.check_tokens(history)?;
        let full = history.len() + 1;
        let keep = full.min(self.context);
        let seq: Vec<usize> = std::iter::once(BLANK)
            .chain(history.iter().copied())
            .skip(full - keep)
            .collect();
        let table = store.get(self.embed).data();
        let d = self.dim;
        let mut rows = Vec::with_capacity(keep * d);
        for &s in &seq {
            rows.extend_from_slice(&table[s * d..(s + 1) * d]);
        }
        let geom = ConvGeom {
            frames: keep,
            channels_in: d,
            channels_out: d,
            kernel: self.context,
            causal: true,
            depthwise: false,
        };
        let mut h = kernels::conv1d_frames(&rows, store.get(self.conv_w).data(), &geom, keep - 1, keep);
        kernels::add_row_inplace(&mut h, store.get(self.conv_b).data());
        for v in &mut h {
            *v = v.max(S::zero());
        }
        Ok(self.proj.apply(store, &h))
    }
}

/// Full joiner: `out(tanh(W_f f + W_g g + b))`.
#[derive(Clone, Debug)]
pub struct Joiner {
    frame: Linear,
    context: Linear,
    out: Linear,
}

impl Joiner {
    fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        joint: usize,
        vocab: usize,
    ) -> Self {
        Self {
            frame: Linear::new(store, rng, &format!("{name}.frame"), dim, joint, true),
            context: Linear::new(store, rng, &format!("{name}.context"), dim, joint, false),
            out: Linear::new(store, rng, &format!("{name}.out"), joint, vocab, true),
        }
    }

    /// Logits for the listed `(t, u)` pairs, shape `(pairs, V)`.
    pub fn pair_logits<'g, S: Real>(
        &self,
        p: &Bound<'g, S>,
        f: &Var<'g, S>,
        g: &Var<'g, S>,
        t_idx: &[usize],
        u_idx: &[usize],
    ) -> Result<Var<'g, S>> {
        let pf = self.frame.forward(p, f)?;
        let pg = self.context.forward(p, g)?;
        let h = pf
            .embedding_lookup(t_idx)?
            .add(&pg.embedding_lookup(u_idx)?)?
            .tanh()?;
        self.out.forward(p, &h)
    }

    /// Full `(T', U+1, V)` lattice.
    pub fn lattice<'g, S: Real>(
        &self,
        p: &Bound<'g, S>,
        f: &Var<'g, S>,
        g: &Var<'g, S>,
    ) -> Result<Var<'g, S>> {
        let (frames, positions) = (f.shape()[0], g.shape()[0]);
        let t_idx: Vec<usize> = (0..frames)
            .flat_map(|t| std::iter::repeat_n(t, positions))
            .collect();
        let u_idx: Vec<usize> = (0..frames).flat_map(|_| 0..positions).collect();
        let z = self.pair_logits(p, f, g, &t_idx, &u_idx)?;
        let vocab = z.shape()[1];
        z.reshape(&[frames, positions, vocab])
    }

    /// Frame projections `W_f f + b` for all frames, without a tape.
    pub fn project_frames<S: Real>(&self, store: &ParamStore<S>, f: &[S]) -> Vec<S> {
        self.frame.apply(store, f)
    }

    /// Predictor projection `W_g g` for one predictor row.
    pub fn project_context<S: Real>(&self, store: &ParamStore<S>, g: &[S]) -> Vec<S> {
        self.context.apply(store, g)
    }

    /// Logits from one projected frame row and one projected predictor row.
    pub fn logits<S: Real>(&self, store: &ParamStore<S>, pf: &[S], pg: &[S]) -> Vec<S> {
        let h: Vec<S> = pf.iter().zip(pg).map(|(&a, &b)| (a + b).tanh()).collect();
        self.out.apply(store, &h)
    }

    pub fn joint_dim(&self) -> usize {
        self.frame.dims.1
    }

    /// Width of the encoder frames it accepts.
    pub fn input_dim(&self) -> usize {
        self.frame.dims.0
    }
}

/// Additive joiner used to choose pruning windows.
#[derive(Clone, Debug)]
pub struct SimpleJoiner {
    frame: ParamId,
    context: ParamId,
    bias: ParamId,
}

impl SimpleJoiner {
    fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        vocab: usize,
    ) -> Self {
        Self {
            frame: store.add_uniform(rng, format!("{name}.frame"), &[dim, vocab], dim),
            context: store.add_uniform(rng, format!("{name}.context"), &[dim, vocab], dim),
            bias: store.add_const(format!("{name}.bias"), &[vocab], 0.0),
        }
    }

    pub fn lattice<'g, S: Real>(
        &self,
        p: &Bound<'g, S>,
        f: &Var<'g, S>,
        g: &Var<'g, S>,
    ) -> Result<Var<'g, S>> {
        simple_joiner_logits(f, g, &p.var(self.frame), &p.var(self.context), &p.var(self.bias))
    }
}

/// Everything one task needs on top of its encoder output.
#[derive(Clone, Debug)]
pub struct TaskHeads {
    pub predictor: Predictor,
    pub joiner: Joiner,
    pub simple: SimpleJoiner,
    pub ctc: Linear,
    /// Vocabulary size including blank.
    pub vocab: usize,
}

impl TaskHeads {
    fn new<S: Real>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
        vocab: usize,
    ) -> Self {
        let d = cfg.d_model;
        Self {
            predictor: Predictor::new(store, rng, &format!("{name}.pred"), vocab, d, cfg.predictor_context),
            joiner: Joiner::new(store, rng, &format!("{name}.joiner"), d, cfg.joint_dim, vocab),
            simple: SimpleJoiner::new(store, rng, &format!("{name}.simple"), d, vocab),
            ctc: Linear::new(store, rng, &format!("{name}.ctc"), d, vocab, true),
            vocab,
        }
    }

    pub fn joiner_input_dim(&self) -> usize {
        self.joiner.input_dim()
    }

    /// CTC frame log-posteriors `(T', V)`.
    pub fn ctc_logprobs<'g, S: Real>(&self, p: &Bound<'g, S>, f: &Var<'g, S>) -> Result<Var<'g, S>> {
        self.ctc.forward(p, f)?.log_softmax()
    }
}

/// The ASR→ST transducer: `f_s = ENC_asr(X)`, `f_t = ENC_st(f_s)`.
#[derive(Clone, Debug)]
pub struct HierarchicalModel<S> {
    pub cfg: ModelConfig,
    pub params: ParamStore<S>,
    input: Linear,
    asr_blocks: Vec<EncoderBlock>,
    st_blocks: Vec<EncoderBlock>,
    pub asr: TaskHeads,
    pub st: TaskHeads,
}

impl<S: Real> HierarchicalModel<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let input = Linear::new(&mut store, &mut rng, "asr.input", cfg.feature_dim, d, true);
        let asr_blocks = (0..cfg.asr_blocks)
            .map(|i| {
                EncoderBlock::new(
                    &mut store,
                    &mut rng,
                    &format!("asr.block{i}"),
                    cfg.block_dims(false),
                    cfg.causal,
                )
            })
            .collect();
        let asr = TaskHeads::new(&mut store, &mut rng, "asr", &cfg, cfg.src_vocab + 1);
        let st_blocks = (0..cfg.st_blocks)
            .map(|i| {
                EncoderBlock::new(
                    &mut store,
                    &mut rng,
                    &format!("st.block{i}"),
                    cfg.block_dims(cfg.st_half_width),
                    cfg.causal,
                )
            })
            .collect();
        let st = TaskHeads::new(&mut store, &mut rng, "st", &cfg, cfg.tgt_vocab + 1);
        Ok(Self {
            cfg,
            params: store,
            input,
            asr_blocks,
            st_blocks,
            asr,
            st,
        })
    }

    pub fn heads(&self, task: Task) -> &TaskHeads {
        match task {
            Task::Asr => &self.asr,
            Task::St => &self.st,
        }
    }

    pub fn asr_blocks(&self) -> &[EncoderBlock] {
        &self.asr_blocks
    }

    pub fn st_blocks(&self) -> &[EncoderBlock] {
        &self.st_blocks
    }

    pub fn input_projection(&self) -> &Linear {
        &self.input
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Frames after the encoder for `frames` input frames.
    pub fn output_frames(frames: usize) -> usize {
        frames.div_ceil(DOWNSAMPLE)
    }

    /// `(T, F)` features to `(ceil(T/2), d)`. `mask` is expressed in
    /// output frames.
    pub fn enc_asr_forward<'g>(
        &self,
        p: &Bound<'g, S>,
        x: &Var<'g, S>,
        mask: AttentionMask,
    ) -> Result<Var<'g, S>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.cfg.feature_dim {
            return Err(Error::dim(format!(
                "features {shape:?}, expected (T, {})",
                self.cfg.feature_dim
            )));
        }
        if shape[0] < DOWNSAMPLE {
            return Err(Error::contract(format!(
                "need at least {DOWNSAMPLE} frames, got {}",
                shape[0]
            )));
        }
        let mut h = self.input.forward(p, x)?;
        h = self.asr_blocks[0].forward(p, &h, mask.upsampled(DOWNSAMPLE))?;
        h = h.strided_mean_downsample(DOWNSAMPLE)?;
        for block in &self.asr_blocks[1..] {
            h = block.forward(p, &h, mask)?;
        }
        Ok(h)
    }

    /// `f_s` to `f_t`; identity when there are no ST blocks.
    pub fn enc_st_forward<'g>(
        &self,
        p: &Bound<'g, S>,
        f_s: &Var<'g, S>,
        mask: AttentionMask,
    ) -> Result<Var<'g, S>> {
        let shape = f_s.shape();
        if shape.len() != 2 || shape[1] != self.cfg.d_model {
            return Err(Error::dim(format!(
                "ST encoder input {shape:?}, expected (T', {})",
                self.cfg.d_model
            )));
        }
        let mut h = *f_s;
        for block in &self.st_blocks {
            h = block.forward(p, &h, mask)?;
        }
        Ok(h)
    }

    /// Both encoder outputs for one utterance.
    pub fn encode<'g>(
        &self,
        p: &Bound<'g, S>,
        x: &Var<'g, S>,
        mask: AttentionMask,
    ) -> Result<(Var<'g, S>, Var<'g, S>)> {
        let f_s = self.enc_asr_forward(p, x, mask)?;
        let f_t = self.enc_st_forward(p, &f_s, mask)?;
        Ok((f_s, f_t))
    }

    /// Encoder output for `task` computed on a throwaway tape.
    pub fn encode_frozen(&self, x: &Tensor<S>, task: Task, mask: AttentionMask) -> Result<Tensor<S>> {
        let graph = crate::tensor::Graph::new();
        let p = self.params.bind_frozen(&graph);
        let xv = graph.constant(x.clone());
        let f_s = self.enc_asr_forward(&p, &xv, mask)?;
        Ok(match task {
            Task::Asr => f_s.value(),
            Task::St => self.enc_st_forward(&p, &f_s, mask)?.value(),
        })
    }
}
