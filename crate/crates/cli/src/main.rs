//! `ipt`: corpus statistics, splitting, training, evaluation, prediction
//! and fixture synthesis for frame-level playing-technique detection.

mod activations;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipt_core::dataset::fixture::FixtureCorpusConfig;
use ipt_core::dataset::SplitSizes;
use ipt_core::model::DEFAULT_THRESHOLD;

use crate::config::ConfigProblems;

#[derive(Parser)]
#[command(name = "ipt", version, about = "Frame-level Guzheng playing-technique detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-technique note statistics of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Also write the table here (`.json` for machine-readable output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Balanced train/valid/test split of a corpus, written as JSON.
    Split(SplitCmd),
    /// Train a model; the run directory receives config, split, log and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `paths.out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint (or activation files) on one split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<paths.out>/checkpoints/best.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to `<paths.out>/eval-<split>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Score `<dir>/<audio_id>.tsv` activation files instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
    },
    /// Frame activations for one audio file, plus a piano-roll figure.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        audio: PathBuf,
        /// Activation TSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Piano-roll PNG; defaults to the TSV path with a `.png` extension.
        #[arg(long)]
        figure: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Generate a synthetic corpus, or a single track from a fixture spec.
    Synth(SynthCmd),
}

#[derive(Args)]
struct SplitCmd {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Set sizes as `train,valid,test`; defaults to 80/10/10.
    #[arg(long, value_parser = parse_sizes)]
    sizes: Option<SplitSizes>,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out: PathBuf,
    /// Fixture spec TOML; writes a one-track corpus named after the file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = FixtureCorpusConfig::default().n_tracks)]
    tracks: usize,
    /// Seconds per track.
    #[arg(long, default_value_t = FixtureCorpusConfig::default().track_duration)]
    duration: f64,
    #[arg(long, default_value_t = FixtureCorpusConfig::default().n_performers)]
    performers: usize,
    #[arg(long, default_value_t = FixtureCorpusConfig::default().overlap_probability)]
    overlap: f64,
}

fn parse_sizes(s: &str) -> Result<SplitSizes, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("{p:?} is not a count")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [train, valid, test] => Ok(SplitSizes::new(train, valid, test)),
        _ => Err("expected three comma-separated counts".into()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Stats { corpus, out } => commands::stats(&corpus, out.as_deref()),
        Command::Split(c) => commands::split(commands::SplitArgs {
            corpus: c.corpus,
            sizes: c.sizes,
            seed: c.seed,
            out: c.out,
        }),
        Command::Train { config, seed, out } => commands::train_run(&config, seed, out),
        Command::Eval {
            config,
            checkpoint,
            split,
            out,
            threshold,
            predictions,
        } => commands::eval(commands::EvalArgs {
            config,
            checkpoint,
            split,
            out,
            threshold,
            predictions,
        }),
        Command::Predict {
            checkpoint,
            audio,
            out,
            figure,
            threshold,
        } => commands::predict(commands::PredictArgs {
            checkpoint,
            audio,
            out,
            figure,
            threshold,
        }),
        Command::Synth(c) => commands::synth(commands::SynthArgs {
            out: c.out,
            spec: c.spec,
            corpus: FixtureCorpusConfig {
                n_tracks: c.tracks,
                track_duration: c.duration,
                n_performers: c.performers,
                overlap_probability: c.overlap,
            },
            seed: c.seed,
        }),
    }
}

/// Exit status per error category. 2 is left to argument parsing.
fn exit_status(category: &str) -> u8 {
    match category {
        "config" => 3,
        "parse" => 4,
        "validation" => 5,
        "io" => 6,
        "checkpoint" => 7,
        "numeric" => 8,
        "shape" => 9,
        "serialization" => 10,
        _ => 1,
    }
}

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ipt_core::Error>() {
            return e.category();
        }
        if cause.is::<ConfigProblems>() {
            return "config";
        }
    }
    "internal"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cat = category(&err);
            eprintln!("error[{cat}]: {err:#}");
            ExitCode::from(exit_status(cat))
        }
    }
}
