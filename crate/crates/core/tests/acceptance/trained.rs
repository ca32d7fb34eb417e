//! Criteria that need trained models. Models are trained once and shared
//! between criteria.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use transducer_st::config::{DecodeConfig, Search};
use transducer_st::error::Result;
use transducer_st::eval::{bleu, length_ratio, wer};
use transducer_st::experiment::decode_corpus;
use transducer_st::model::{Arch, HierarchicalModel, ModelConfig, Task};
use transducer_st::synth::{ReorderMode, SynthConfig, SynthExample, SynthTask};
use transducer_st::train::{train_run, Stage, TrainConfig};

use super::Outcome;

const TRAIN_EXAMPLES: usize = 2000;
const TEST_EXAMPLES: usize = 200;
const CONVERGENCE_STEPS: usize = 2000;
const PRETRAIN_STEPS: usize = 500;
const JOINT_STEPS: usize = 1500;
const SEEDS: [u64; 3] = [0, 1, 2];
const BPS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

struct Corpus {
    train: Vec<SynthExample>,
    test: Vec<SynthExample>,
}

fn corpus(reorder: ReorderMode) -> Result<Corpus> {
    let task = SynthTask::new(SynthConfig {
        reorder,
        ..SynthConfig::default()
    })?;
    Ok(Corpus {
        train: task.gen_split(TRAIN_EXAMPLES, 0),
        test: task.gen_split(TEST_EXAMPLES, 1),
    })
}

fn swap_pairs() -> &'static Corpus {
    static DATA: OnceLock<Corpus> = OnceLock::new();
    DATA.get_or_init(|| corpus(ReorderMode::SwapPairs).expect("valid synthetic config"))
}

fn model_for(arch: Arch, seed: u64) -> Result<HierarchicalModel<f32>> {
    let s = SynthConfig::default();
    HierarchicalModel::new(ModelConfig::for_arch(arch, s.feature_dim, s.src_vocab, s.tgt_vocab), seed)
}

fn token_error(model: &HierarchicalModel<f32>, test: &[SynthExample], search: Search) -> Result<f64> {
    let cfg = DecodeConfig {
        search,
        ..DecodeConfig::default()
    };
    let out = decode_corpus(model, test, Task::Asr, &cfg, 0.0)?;
    let refs: Vec<Vec<usize>> = test.iter().map(|ex| ex.src.clone()).collect();
    wer(&refs, &out.tokens())
}

fn translations(model: &HierarchicalModel<f32>, test: &[SynthExample], search: Search, bp: f64) -> Result<(Vec<Vec<usize>>, f64)> {
    let cfg = DecodeConfig {
        search,
        ..DecodeConfig::default()
    };
    let out = decode_corpus(model, test, Task::St, &cfg, bp)?;
    Ok((out.tokens(), out.rtf()?))
}

fn references(test: &[SynthExample]) -> Vec<Vec<usize>> {
    test.iter().map(|ex| ex.tgt.clone()).collect()
}

/// A pretrained-then-jointly-trained model on the reordering task.
struct Run {
    model: HierarchicalModel<f32>,
    asr_ter: f64,
    bleu: f64,
    seconds: f64,
}

fn train_joint(arch: Arch, cr: bool, seed: u64) -> Result<Run> {
    let data = swap_pairs();
    let clock = Instant::now();
    let mut model = model_for(arch, seed)?;
    let pretrain = TrainConfig {
        steps: PRETRAIN_STEPS,
        seed,
        ..TrainConfig::default()
    };
    train_run(&pretrain, &data.train, &mut model, None)?;
    let joint = TrainConfig {
        stage: Stage::JointFinetune,
        steps: JOINT_STEPS,
        seed: seed + 1,
        cr_enabled: cr,
        ..TrainConfig::default()
    };
    train_run(&joint, &data.train, &mut model, None)?;
    let seconds = clock.elapsed().as_secs_f64();
    let asr_ter = token_error(&model, &data.test, Search::Greedy)?;
    let (hyps, _) = translations(&model, &data.test, Search::Greedy, 0.0)?;
    let bleu = bleu(&references(&data.test), &hyps)?;
    Ok(Run {
        model,
        asr_ter,
        bleu,
        seconds,
    })
}

type RunCache = Mutex<HashMap<(&'static str, bool, u64), &'static Run>>;

/// Trains each configuration at most once per process.
fn joint_run(arch: Arch, cr: bool, seed: u64) -> Result<&'static Run> {
    static RUNS: OnceLock<RunCache> = OnceLock::new();
    let key = (arch.as_str(), cr, seed);
    let cache = RUNS.get_or_init(Default::default);
    if let Some(run) = cache.lock().unwrap().get(&key) {
        return Ok(run);
    }
    let run: &'static Run = Box::leak(Box::new(train_joint(arch, cr, seed)?));
    eprintln!(
        "  trained {}{} seed {seed} in {:.0}s: asr ter {:.4}, bleu {:.2}",
        arch.as_str(),
        if cr { "+cr" } else { "" },
        run.seconds,
        run.asr_ter,
        run.bleu
    );
    cache.lock().unwrap().insert(key, run);
    Ok(run)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn fmt_list(xs: &[f64], digits: usize) -> String {
    xs.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join("/")
}

// 7 ------------------------------------------------------------------------

pub fn convergence() -> Result<Outcome> {
    let clock = Instant::now();
    let data = corpus(ReorderMode::Monotone)?;
    let mut model = model_for(Arch::Hier2, 0)?;
    let cfg = TrainConfig {
        steps: CONVERGENCE_STEPS,
        ..TrainConfig::default()
    };
    train_run(&cfg, &data.train, &mut model, None)?;
    let accuracy = 1.0 - token_error(&model, &data.test, Search::Greedy)?;
    let secs = clock.elapsed().as_secs_f64();
    Ok(Outcome::new(
        accuracy >= 0.95 && secs <= 900.0,
        format!(
            "monotone task, {CONVERGENCE_STEPS} pretrain steps: greedy token accuracy {accuracy:.4} on {} held-out utterances in {secs:.0}s",
            data.test.len()
        ),
    ))
}

// 8 ------------------------------------------------------------------------

pub fn reordering() -> Result<Outcome> {
    let mut hier = Vec::new();
    let mut shared = Vec::new();
    for seed in SEEDS {
        hier.push(joint_run(Arch::Hier2, false, seed)?.bleu);
        shared.push(joint_run(Arch::Shared, false, seed)?.bleu);
    }
    let (h, s) = (median(hier.clone()), median(shared.clone()));
    Ok(Outcome::new(
        h >= s,
        format!(
            "swap_pairs, {PRETRAIN_STEPS}+{JOINT_STEPS} steps: median BLEU hier2 {h:.2} ({}) vs shared {s:.2} ({}), gap {:+.2}",
            fmt_list(&hier, 2),
            fmt_list(&shared, 2),
            h - s
        ),
    ))
}

// 9 ------------------------------------------------------------------------

pub fn blank_penalty() -> Result<Outcome> {
    let data = swap_pairs();
    let run = joint_run(Arch::Hier2, true, SEEDS[0])?;
    let refs = references(&data.test);
    let mut ratios = Vec::new();
    for bp in BPS {
        let (hyps, _) = translations(&run.model, &data.test, Search::Streaming, bp)?;
        ratios.push(length_ratio(&refs, &hyps)?);
    }
    let monotone = ratios.windows(2).all(|w| w[1] >= w[0]);
    let closer = (ratios[3] - 1.0).abs() < (ratios[0] - 1.0).abs();
    Ok(Outcome::new(
        monotone && closer,
        format!(
            "hier2+cr streaming length ratio at bp {}: {}; |r-1| {:.3} at bp 0, {:.3} at bp 2",
            fmt_list(&BPS, 1),
            fmt_list(&ratios, 3),
            (ratios[0] - 1.0).abs(),
            (ratios[3] - 1.0).abs()
        ),
    ))
}

// 10 -----------------------------------------------------------------------

pub fn cr_trend() -> Result<Outcome> {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in SEEDS {
        without.push(joint_run(Arch::Hier2, false, seed)?.asr_ter);
        with.push(joint_run(Arch::Hier2, true, seed)?.asr_ter);
    }
    let (w, wo) = (median(with.clone()), median(without.clone()));
    Ok(Outcome::new(
        w <= wo + 0.01,
        format!(
            "hier2 joint ASR TER median with cr {w:.4} ({}) vs without {wo:.4} ({})",
            fmt_list(&with, 4),
            fmt_list(&without, 4)
        ),
    ))
}

// 11 -----------------------------------------------------------------------

/// Best of a few passes, to keep scheduler noise out of the comparison.
fn streaming_rtf(model: &HierarchicalModel<f32>, test: &[SynthExample]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        best = best.min(translations(model, test, Search::Streaming, 0.0)?.1);
    }
    Ok(best)
}

pub fn rtf() -> Result<Outcome> {
    let data = swap_pairs();
    let hier = streaming_rtf(&joint_run(Arch::Hier2, false, SEEDS[0])?.model, &data.test)?;
    let shared = streaming_rtf(&joint_run(Arch::Shared, false, SEEDS[0])?.model, &data.test)?;
    let diff = (hier - shared).abs() / hier.min(shared);
    Ok(Outcome::new(
        hier > 0.0 && shared > 0.0 && diff < 0.3,
        format!("streaming ST rtf hier2 {hier:.5}, shared {shared:.5}, relative difference {:.1}%", 100.0 * diff),
    ))
}
