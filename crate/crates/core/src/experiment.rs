//! Experiment commands: data generation, training, decoding, scoring and
//! the ablation grid. Every command writes into its own output directory
//! and copies the effective configuration there as `config.txt`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{AblateArch, DecodeConfig, ExperimentConfig, Search};
use crate::decode::{beam_search, greedy_decode, read_decodes, streaming_decode, write_decodes, Hypothesis, TaskDecoder};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::model::{checkpoint_load, checkpoint_save, HierarchicalModel, LoadOptions, Task};
use crate::par;
use crate::synth::{read_dataset, write_dataset, DatasetPaths, SynthExample, SynthTask};
use crate::tensor::{AttentionMask, Real};
use crate::train::{train_run, Stage, TrainLog};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const REPORT_FILE: &str = "report.tsv";
pub const ABLATION_FILE: &str = "ablation.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn task_of(cfg: &DecodeConfig) -> Task {
    if cfg.translate {
        Task::St
    } else {
        Task::Asr
    }
}

/// Writes `train` and `test` datasets under `out_dir`.
pub fn cmd_synth(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let task = SynthTask::new(cfg.synth.clone())?;
    write_dataset(&DatasetPaths::new(out_dir, "train"), &task.gen_split(cfg.train_examples, 0))?;
    write_dataset(&DatasetPaths::new(out_dir, "test"), &task.gen_split(cfg.test_examples, 1))?;
    cfg.save(&out_dir.join(CONFIG_FILE))
}

fn load_split(cfg: &ExperimentConfig, data_dir: &Path, name: &str) -> Result<Vec<(String, SynthExample)>> {
    let rows = read_dataset(&DatasetPaths::new(data_dir, name), cfg.synth.feature_dim)?;
    if rows.is_empty() {
        return Err(Error::contract(format!("{name} split in {} is empty", data_dir.display())));
    }
    Ok(rows)
}

fn train_into<S: Real>(
    cfg: &ExperimentConfig,
    model: &mut HierarchicalModel<S>,
    data: &[SynthExample],
    metrics: &Path,
) -> Result<TrainLog> {
    let file = fs::File::create(metrics).map_err(|e| Error::io(metrics, e))?;
    let mut w = BufWriter::new(file);
    train_run(&cfg.train_config(), data, model, Some(&mut w))
}

fn save_model<S: Real>(cfg: &ExperimentConfig, model: &HierarchicalModel<S>, path: &Path) -> Result<usize> {
    let prefix = match cfg.train.stage {
        Stage::AsrPretrain => Some("asr."),
        Stage::JointFinetune => None,
    };
    checkpoint_save(&model.params, path, prefix)
}

fn load_model<S: Real>(cfg: &ExperimentConfig, path: &Path, allow_missing_st: bool) -> Result<HierarchicalModel<S>> {
    let mut model = HierarchicalModel::<S>::new(cfg.model_config(), cfg.seed)?;
    let opts = LoadOptions {
        allow_missing_prefix: allow_missing_st.then(|| "st.".to_string()),
    };
    checkpoint_load(&mut model.params, path, &opts)?;
    Ok(model)
}

fn train_impl<S: Real>(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path, init: Option<&Path>) -> Result<TrainLog> {
    let data: Vec<SynthExample> = load_split(cfg, data_dir, "train")?.into_iter().map(|r| r.1).collect();
    let mut model = match init {
        Some(path) => load_model::<S>(cfg, path, true)?,
        None => HierarchicalModel::new(cfg.model_config(), cfg.seed)?,
    };
    create_dir(out_dir)?;
    let log = train_into(cfg, &mut model, &data, &out_dir.join(METRICS_FILE))?;
    save_model(cfg, &model, &out_dir.join(CHECKPOINT_FILE))?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    Ok(log)
}

/// Trains the configured stage on `data_dir/train`, optionally starting
/// from `init`. ST arrays missing from `init` keep their fresh values. The
/// ASR pretraining stage saves only `asr.` arrays.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path, init: Option<&Path>) -> Result<TrainLog> {
    match cfg.precision {
        64 => train_impl::<f64>(cfg, data_dir, out_dir, init),
        _ => train_impl::<f32>(cfg, data_dir, out_dir, init),
    }
}

/// Hypotheses for a corpus with the time spent producing them.
#[derive(Clone, Debug)]
pub struct CorpusDecode {
    pub hyps: Vec<Hypothesis>,
    /// Encoder and search seconds summed over utterances.
    pub seconds: f64,
    pub frames: usize,
}

impl CorpusDecode {
    pub fn rtf(&self) -> Result<f64> {
        eval::rtf(self.seconds, self.frames)
    }

    pub fn tokens(&self) -> Vec<Vec<usize>> {
        self.hyps.iter().map(|h| h.tokens.clone()).collect()
    }
}

/// Decodes one utterance with the configured search.
pub fn decode_one<S: Real>(
    model: &HierarchicalModel<S>,
    ex: &SynthExample,
    task: Task,
    cfg: &DecodeConfig,
    bp: f64,
) -> Result<Hypothesis> {
    let x = ex.frames.cast::<S>();
    let max_sym = cfg.chunk.max_sym_per_frame;
    if cfg.search == Search::Streaming {
        return Ok(streaming_decode(&x, model, task, &cfg.chunk, bp)?.hyp);
    }
    let f = model.encode_frozen(&x, task, AttentionMask::Full)?;
    let mut dec = TaskDecoder::new(model.heads(task), &model.params);
    match cfg.search {
        Search::Beam => beam_search(&f, &mut dec, cfg.beam, bp, max_sym),
        _ => greedy_decode(&f, &mut dec, bp, max_sym),
    }
}

/// Decodes every example, in parallel when enabled.
pub fn decode_corpus<S: Real>(
    model: &HierarchicalModel<S>,
    examples: &[SynthExample],
    task: Task,
    cfg: &DecodeConfig,
    bp: f64,
) -> Result<CorpusDecode> {
    let results = par::map(examples, |ex| {
        let clock = Instant::now();
        let hyp = decode_one(model, ex, task, cfg, bp)?;
        Ok((hyp, clock.elapsed().as_secs_f64()))
    });
    let mut out = CorpusDecode {
        hyps: Vec::with_capacity(examples.len()),
        seconds: 0.0,
        frames: examples.iter().map(|ex| ex.frames.shape()[0]).sum(),
    };
    for r in results {
        let (hyp, s): (Hypothesis, f64) = r?;
        out.hyps.push(hyp);
        out.seconds += s;
    }
    Ok(out)
}

/// Decode file name for one blank penalty.
pub fn decode_file(bp: f64) -> String {
    format!("hyps_bp{bp}.txt")
}

fn rtf_path(hyps: &Path) -> PathBuf {
    hyps.with_extension("rtf")
}

fn decode_impl<S: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data_dir: &Path,
    out_dir: &Path,
    bps: &[f64],
) -> Result<Vec<PathBuf>> {
    let task = task_of(&cfg.decode);
    let model = load_model::<S>(cfg, checkpoint, task == Task::Asr)?;
    let rows = load_split(cfg, data_dir, "test")?;
    let (ids, examples): (Vec<String>, Vec<SynthExample>) = rows.into_iter().unzip();
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for &bp in bps {
        let out = decode_corpus(&model, &examples, task, &cfg.decode, bp)?;
        let path = out_dir.join(decode_file(bp));
        let named: Vec<(String, Hypothesis)> = ids.iter().cloned().zip(out.hyps.iter().cloned()).collect();
        write_decodes(&path, &named)?;
        let rp = rtf_path(&path);
        fs::write(&rp, format!("{}\n", out.rtf()?)).map_err(|e| Error::io(&rp, e))?;
        written.push(path);
    }
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    Ok(written)
}

/// Decodes `data_dir/test` once per blank penalty in `bps`, writing one
/// hypothesis file per value and its real-time factor beside it.
pub fn cmd_decode(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data_dir: &Path,
    out_dir: &Path,
    bps: &[f64],
) -> Result<Vec<PathBuf>> {
    if bps.is_empty() || bps.iter().any(|b| !b.is_finite()) {
        return Err(Error::config("bp", "need one or more finite values"));
    }
    match cfg.precision {
        64 => decode_impl::<f64>(cfg, checkpoint, data_dir, out_dir, bps),
        _ => decode_impl::<f32>(cfg, checkpoint, data_dir, out_dir, bps),
    }
}

/// Reads `id -> tokens` from either a dataset manifest (picking the
/// translation or transcript column) or a decode file.
pub fn read_references(path: &Path, translate: bool) -> Result<Vec<(String, Vec<usize>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first_cols = text.lines().next().map_or(0, |l| l.split('\t').count());
    if first_cols != 4 {
        return Ok(read_decodes(path)?.into_iter().map(|(id, h)| (id, h.tokens)).collect());
    }
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {}: {msg}", n + 1),
            };
            let [id, _, src, tgt] = cols.as_slice() else {
                return Err(bad("expected 4 columns"));
            };
            let tokens = if translate { tgt } else { src };
            let tokens = tokens
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad("bad token")))
                .collect::<Result<_>>()?;
            Ok((id.to_string(), tokens))
        })
        .collect()
}

/// Scores `hyps` against `refs` and writes `out_dir/report.tsv`. A real-time
/// factor stored beside the hypotheses is carried into the report.
pub fn cmd_eval(refs: &Path, hyps: &Path, out_dir: &Path, translate: bool) -> Result<EvalReport> {
    let references = read_references(refs, translate)?;
    let hypotheses: HashMap<String, Vec<usize>> = read_decodes(hyps)?
        .into_iter()
        .map(|(id, h)| (id, h.tokens))
        .collect();
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let rows = references
        .into_iter()
        .map(|(id, r)| {
            let h = hypotheses
                .get(&id)
                .cloned()
                .ok_or_else(|| Error::contract(format!("no hypothesis for {id}")))?;
            Ok((id, r, h))
        })
        .collect::<Result<Vec<_>>>()?;
    let rp = rtf_path(hyps);
    let rtf = match fs::read_to_string(&rp) {
        Ok(text) => Some(text.trim().parse::<f64>().map_err(|_| Error::Format {
            path: rp.clone(),
            msg: "expected one number".into(),
        })?),
        Err(_) => None,
    };
    let report = EvalReport::score(&rows, rtf)?;
    create_dir(out_dir)?;
    report.write(&out_dir.join(REPORT_FILE), true)?;
    Ok(report)
}

/// One trained configuration of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub arch: AblateArch,
    pub prune_range: usize,
    pub warmup: usize,
}

impl AblationCell {
    pub fn name(&self) -> String {
        format!("{}_S{}_w{}", self.arch, self.prune_range, self.warmup)
    }

    /// The experiment configuration this cell trains with.
    pub fn config(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        cfg.set("arch", self.arch.arch.as_str())?;
        cfg.train.prune_range = self.prune_range;
        cfg.train.warmup_steps = self.warmup;
        cfg.train.cr_enabled = self.arch.cr;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Metrics of one table row.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: String,
    pub bp: f64,
    pub asr_ter: f64,
    pub bleu: f64,
    pub length_ratio: f64,
    pub rtf: f64,
}

pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<AblationCell> {
    let a = &cfg.ablate;
    let mut cells = Vec::new();
    for &arch in &a.archs {
        for &prune_range in &a.prune_ranges {
            for &warmup in &a.warmups {
                cells.push(AblationCell {
                    arch,
                    prune_range,
                    warmup,
                });
            }
        }
    }
    cells
}

fn run_cell<S: Real>(
    base: &ExperimentConfig,
    cell: &AblationCell,
    train: &[SynthExample],
    test: &[SynthExample],
    dir: &Path,
) -> Result<Vec<AblationRow>> {
    let cfg = cell.config(base)?;
    create_dir(dir)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let mut model = HierarchicalModel::<S>::new(cfg.model_config(), cfg.seed)?;
    if base.ablate.pretrain_steps > 0 {
        let mut pre = cfg.clone();
        pre.train.stage = Stage::AsrPretrain;
        pre.train.steps = base.ablate.pretrain_steps;
        pre.train.cr_enabled = false;
        train_into(&pre, &mut model, train, &dir.join("metrics_pretrain.tsv"))?;
    }
    let mut joint = cfg.clone();
    joint.train.stage = Stage::JointFinetune;
    joint.seed = cfg.seed.wrapping_add(1);
    train_into(&joint, &mut model, train, &dir.join(METRICS_FILE))?;
    save_model(&joint, &model, &dir.join(CHECKPOINT_FILE))?;
    let mut dcfg = cfg.decode.clone();
    dcfg.search = Search::Streaming;
    let src: Vec<Vec<usize>> = test.iter().map(|ex| ex.src.clone()).collect();
    let tgt: Vec<Vec<usize>> = test.iter().map(|ex| ex.tgt.clone()).collect();
    base.ablate
        .bps
        .iter()
        .map(|&bp| {
            let asr = decode_corpus(&model, test, Task::Asr, &dcfg, bp)?;
            let st = decode_corpus(&model, test, Task::St, &dcfg, bp)?;
            let hyps = st.tokens();
            Ok(AblationRow {
                cell: cell.name(),
                bp,
                asr_ter: eval::wer(&src, &asr.tokens())?,
                bleu: eval::bleu(&tgt, &hyps)?,
                length_ratio: eval::length_ratio(&tgt, &hyps)?,
                rtf: st.rtf()?,
            })
        })
        .collect()
}

/// Column header of the ablation table.
pub const ABLATION_HEADER: &str = "config\tasr_ter\tbleu\tlength_ratio\trtf\tstatus";

/// Trains and scores every cell of the grid, at most `jobs` at a time.
/// Each cell writes under `out_dir/<cell>`; a failed cell gets one row with
/// its error in the status column and the run continues. Returns the
/// table text, also written to `out_dir/ablation.tsv`.
pub fn cmd_ablate(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path, jobs: usize) -> Result<String> {
    let train: Vec<SynthExample> = load_split(cfg, data_dir, "train")?.into_iter().map(|r| r.1).collect();
    let test: Vec<SynthExample> = load_split(cfg, data_dir, "test")?.into_iter().map(|r| r.1).collect();
    create_dir(out_dir)?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    let cells = ablation_cells(cfg);
    let results = par::with_jobs(jobs, || {
        par::map(&cells, |cell| {
            let dir = out_dir.join(cell.name());
            match cfg.precision {
                64 => run_cell::<f64>(cfg, cell, &train, &test, &dir),
                _ => run_cell::<f32>(cfg, cell, &train, &test, &dir),
            }
        })
    });
    let mut table = format!("{ABLATION_HEADER}\n");
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(rows) => {
                for r in rows {
                    writeln!(
                        table,
                        "{}_bp{}\t{:.4}\t{:.2}\t{:.4}\t{:.4}\tok",
                        r.cell, r.bp, r.asr_ter, r.bleu, r.length_ratio, r.rtf
                    )
                    .expect("write to string");
                }
            }
            Err(e) => {
                let msg = e.to_string().replace(['\t', '\n'], " ");
                writeln!(table, "{}\tNA\tNA\tNA\tNA\terror: {msg}", cell.name()).expect("write to string");
            }
        }
    }
    let path = out_dir.join(ABLATION_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(table.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}
