mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use duplex_core::kv::KvMap;

use crate::commands::Axis;
use crate::config::RunConfig;

/// Joint speech recognition and translation on toy corpora.
#[derive(Parser, Debug)]
#[command(name = "duplex", version)]
struct Cli {
    /// key=value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Commands write nowhere else.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides one config key, e.g. `--set lambda=0.3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a toy corpus (train/dev/test splits).
    GenData {
        /// Content tokens per language.
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// MAP, MAP_SWAP or MAP_REVERSE.
        #[arg(long)]
        rule: Option<String>,
        /// Also render each utterance as a WAV file.
        #[arg(long)]
        wav: bool,
    },
    /// Compute stacked log-Mel features for every WAV file in a directory.
    Featurize {
        #[arg(long)]
        wav_dir: PathBuf,
    },
    /// Train a model on a corpus directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Dev corpus for checkpoint selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        wait_k: Option<usize>,
    },
    /// Decode a corpus with a checkpoint.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Score a decode file against a reference corpus.
    Eval {
        #[arg(long)]
        decoded: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train and score one model per (value, seed).
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64])]
        seeds: Vec<u64>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        greedy: bool,
        /// Runs trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn overrides(cli: &Cli) -> duplex_core::Result<Vec<KvMap>> {
    let mut out = vec![KvMap::parse(&cli.set.join("\n"))?];
    let mut flags = KvMap::new();
    match &cli.command {
        Command::GenData { vocab, train, dev, test, rule, .. } => {
            let sizes = [("data.vocab_size", vocab), ("data.train_size", train), ("data.dev_size", dev), ("data.test_size", test)];
            for (k, v) in sizes {
                if let Some(v) = v {
                    flags.set(k, v);
                }
            }
            if let Some(r) = rule {
                flags.set("data.translation_rule", r);
            }
        }
        Command::Train { steps, lambda, wait_k, .. } => {
            if let Some(v) = steps {
                flags.set("steps", v);
            }
            if let Some(v) = lambda {
                flags.set("lambda", v);
            }
            if let Some(v) = wait_k {
                flags.set("wait_k", v);
            }
        }
        Command::Decode { beam: Some(b), .. } => flags.set("beam_size", b),
        _ => {}
    }
    out.push(flags);
    Ok(out)
}

fn run(cli: &Cli) -> duplex_core::Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(cli)?, cli.seed, &cli.out)?;
    cfg.echo()?;
    match &cli.command {
        Command::GenData { wav, .. } => commands::gen_data(&cfg, *wav),
        Command::Featurize { wav_dir } => commands::featurize_dir(&cfg, wav_dir),
        Command::Train { corpus, dev, resume, .. } => commands::train_cmd(&cfg, corpus, dev.as_deref(), resume.as_deref()),
        Command::Decode { checkpoint, corpus, greedy, .. } => commands::decode_cmd(&cfg, checkpoint, corpus, *greedy),
        Command::Eval { decoded, corpus } => commands::eval_cmd(&cfg, decoded, corpus),
        Command::Sweep { axis, values, seeds, corpus, dev, greedy, jobs } => {
            commands::sweep_cmd(&cfg, *axis, values, seeds, corpus, dev, *greedy, *jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
