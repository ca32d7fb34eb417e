use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transducer_st::config::{parse_list, ExperimentConfig};
use transducer_st::error::{Error, Result};
use transducer_st::experiment;
use transducer_st::train::Stage;

#[derive(Parser)]
#[command(name = "tst", version, about = "Joint speech recognition and translation transducers on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the model and training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Arithmetic precision, 32 or 64.
    #[arg(long)]
    precision: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// asr_pretrain or joint_finetune; overrides the config.
        #[arg(long)]
        stage: Option<String>,
        /// Checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Decode the test split, once per blank penalty.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated blank penalties; defaults to the config value.
        #[arg(long)]
        bp: Option<String>,
    },
    /// Score hypotheses against references.
    Eval {
        /// Dataset manifest or decode file.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score the transcript column of a manifest instead of the translation.
        #[arg(long)]
        asr: bool,
    },
    /// Train and score the ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the grid's blank penalties.
        #[arg(long)]
        bp: Option<String>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = common.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load(&common)?;
            experiment::cmd_synth(&cfg, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train {
            common,
            data,
            out,
            stage,
            init,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = stage {
                cfg.train.stage = Stage::parse(&s)
                    .ok_or_else(|| Error::Config {
                        key: "stage".into(),
                        msg: "expected asr_pretrain or joint_finetune".into(),
                    })?;
            }
            let log = transducer_st::par::with_jobs(common.jobs, || {
                experiment::cmd_train(&cfg, &data, &out, init.as_deref())
            })?;
            if let Some(last) = log.series("total").last() {
                println!("final total loss {last}");
            }
        }
        Command::Decode {
            common,
            checkpoint,
            data,
            out,
            bp,
        } => {
            let cfg = load(&common)?;
            let bps = match bp {
                Some(list) => parse_list("bp", &list, "a number")?,
                None => vec![cfg.decode.blank_penalty],
            };
            let files = transducer_st::par::with_jobs(common.jobs, || {
                experiment::cmd_decode(&cfg, &checkpoint, &data, &out, &bps)
            })?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Eval { refs, hyps, out, asr } => {
            let report = experiment::cmd_eval(&refs, &hyps, &out, !asr)?;
            print!("{}", report.render(false));
        }
        Command::Ablate { common, data, out, bp } => {
            let mut cfg = load(&common)?;
            if let Some(list) = bp {
                cfg.ablate.bps = parse_list("bp", &list, "a number")?;
            }
            print!("{}", experiment::cmd_ablate(&cfg, &data, &out, common.jobs)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\t', '\n'], " ");
            eprintln!("error\t{}\t{msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
