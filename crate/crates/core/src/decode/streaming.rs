use std::time::Instant;

use super::{GreedyState, Hypothesis, TaskDecoder, MAX_SYM_PER_FRAME};
use crate::error::{Error, Result};
use crate::model::{EncoderBlock, HierarchicalModel, Task, DOWNSAMPLE};
use crate::tensor::{kernels, AttentionMask, Graph, Real, Tensor};

/// Chunking in encoder-output frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    /// Must be a multiple of `chunk_size`.
    pub left_context: usize,
    pub max_sym_per_frame: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: 64,
            left_context: 128,
            max_sym_per_frame: MAX_SYM_PER_FRAME,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::config("chunk_size", "must be >= 1"));
        }
        if !self.left_context.is_multiple_of(self.chunk_size) {
            return Err(Error::config("left_context", "must be a multiple of chunk_size"));
        }
        if self.max_sym_per_frame == 0 {
            return Err(Error::config("max_sym_per_frame", "must be >= 1"));
        }
        Ok(())
    }

    /// The attention mask that the streaming encoder reproduces offline.
    pub fn mask(&self) -> AttentionMask {
        AttentionMask::chunked(self.chunk_size, self.left_context)
    }
}

#[derive(Clone, Debug)]
pub struct StreamingResult {
    pub hyp: Hypothesis,
    /// Wall-clock seconds spent on each chunk (encoder and search).
    pub chunk_seconds: Vec<f64>,
    /// Number of tokens emitted once each chunk was consumed.
    pub emitted_after_chunk: Vec<usize>,
    /// Input frames processed.
    pub frames: usize,
}

impl StreamingResult {
    pub fn total_seconds(&self) -> f64 {
        self.chunk_seconds.iter().sum()
    }
}

/// One block with its mask on its own time axis.
struct Level<'m> {
    block: &'m EncoderBlock,
    mask: AttentionMask,
    chunk: usize,
    left: usize,
}

/// First input row a block must see to produce rows `from..` exactly:
/// the convolution reaches `kernel - 1` rows back, and each of those rows
/// attends back to `left` frames before its own chunk.
fn window_start(from: usize, chunk: usize, left: usize, kernel: usize) -> usize {
    let reach = from.saturating_sub(kernel.saturating_sub(1));
    ((reach / chunk) * chunk).saturating_sub(left)
}

fn run_block<S: Real>(
    model: &HierarchicalModel<S>,
    level: &Level<'_>,
    input: &[S],
    dim: usize,
    from: usize,
    to: usize,
) -> Result<Vec<S>> {
    let ws = window_start(from, level.chunk, level.left, level.block.conv_kernel());
    let graph = Graph::new();
    let p = model.params.bind_frozen(&graph);
    let x = graph.constant(Tensor::new(vec![to - ws, dim], input[ws * dim..to * dim].to_vec())?);
    let y = level.block.forward(&p, &x, level.mask.with_offset(ws))?.value();
    Ok(y.data()[(from - ws) * dim..].to_vec())
}

/// Chunk-by-chunk encoding and greedy search. Each chunk covers
/// `chunk_size` encoder frames (twice as many input frames); every block
/// recomputes only the window its new rows depend on, and the search
/// consumes frames as soon as their chunk is encoded. Output tokens equal
/// greedy search over the offline encoder run with [`ChunkConfig::mask`].
pub fn streaming_decode<S: Real>(
    x: &Tensor<S>,
    model: &HierarchicalModel<S>,
    task: Task,
    cfg: &ChunkConfig,
    bp: f64,
) -> Result<StreamingResult> {
    cfg.validate()?;
    let blocks: Vec<&EncoderBlock> = match task {
        Task::Asr => model.asr_blocks().iter().collect(),
        Task::St => model.asr_blocks().iter().chain(model.st_blocks()).collect(),
    };
    if blocks.iter().any(|b| !b.is_causal()) {
        return Err(Error::contract("streaming needs a model with causal convolution"));
    }
    let (frames, feat) = match x.shape() {
        [t, f] if *f == model.cfg.feature_dim && *t >= DOWNSAMPLE => (*t, *f),
        other => return Err(Error::dim(format!("features {other:?}"))),
    };
    let d = model.cfg.d_model;
    let out_frames = HierarchicalModel::<S>::output_frames(frames);
    let mask = cfg.mask();
    let levels: Vec<Level<'_>> = blocks
        .iter()
        .enumerate()
        .map(|(i, &block)| {
            let f = if i == 0 { DOWNSAMPLE } else { 1 };
            Level {
                block,
                mask: if i == 0 { mask.upsampled(DOWNSAMPLE) } else { mask },
                chunk: cfg.chunk_size * f,
                left: cfg.left_context * f,
            }
        })
        .collect();
    let mut inputs: Vec<S> = Vec::with_capacity(frames * d);
    // level_out[0] stays empty: the first block's rows go straight into
    // `downsampled`.
    let mut level_out: Vec<Vec<S>> = vec![Vec::new(); levels.len()];
    let mut downsampled: Vec<S> = Vec::new();
    let heads = model.heads(task);
    let mut dec = TaskDecoder::new(heads, &model.params);
    let jd = dec.joint_dim();
    let mut state = GreedyState::default();
    let mut result = StreamingResult {
        hyp: Hypothesis::default(),
        chunk_seconds: Vec::new(),
        emitted_after_chunk: Vec::new(),
        frames,
    };
    let mut cs = 0;
    while cs < out_frames {
        let clock = Instant::now();
        let ce = (cs + cfg.chunk_size).min(out_frames);
        let (is, ie) = (cs * DOWNSAMPLE, (ce * DOWNSAMPLE).min(frames));
        let rows = model.input_projection().apply(&model.params, &x.data()[is * feat..ie * feat]);
        inputs.extend_from_slice(&rows);

        let first = run_block(model, &levels[0], &inputs, d, is, ie)?;
        downsampled.extend(kernels::downsample_mean(&first, ie - is, d, DOWNSAMPLE));
        for i in 1..levels.len() {
            let input = if i == 1 { &downsampled } else { &level_out[i - 1] };
            let rows = run_block(model, &levels[i], input, d, cs, ce)?;
            level_out[i].extend_from_slice(&rows);
        }
        let f = if levels.len() == 1 { &downsampled } else { &level_out[levels.len() - 1] };
        let pf = heads.joiner.project_frames(&model.params, &f[cs * d..ce * d]);
        for t in 0..ce - cs {
            state.step(&mut dec, &pf[t * jd..(t + 1) * jd], bp, cfg.max_sym_per_frame)?;
        }
        result.chunk_seconds.push(clock.elapsed().as_secs_f64());
        result.emitted_after_chunk.push(state.hyp.tokens.len());
        cs = ce;
    }
    result.hyp = state.hyp;
    Ok(result)
}
