//! `heterodiff`: data preparation, training, generation, evaluation and
//! rendering for layout diffusion models.

mod commands;
mod config;
mod svg;
mod trace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heterodiff::profile::ProfileName;
use heterodiff::Error;

use commands::{CorruptArgs, Mode, SampleArgs, TrainArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "heterodiff", version, about = "Discrete diffusion for layout generation")]
struct Cli {
    /// Default bundle: paper (K=128, N_max=20, T=200) or desk (K=32, N_max=8, T=50).
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<ProfileName>,
    /// JSON file overriding profile defaults; flags override the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training and generation.
    #[arg(long, global = true, env = "HETERODIFF_SEED")]
    seed: Option<u64>,
    /// Accepted for scripts; every command already runs serially.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of UI-like layouts.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a corpus and split it 90/5/5 into train/val/test files.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a denoiser, writing a checkpoint and an optional CSV loss log.
    Train {
        /// Corpus file (split first) or a directory written by `ingest`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total optimizer steps (overrides the configuration).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Also save the checkpoint every this many steps.
        #[arg(long)]
        save_every: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Generate layouts from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Element types for gentype, comma separated (e.g. toolbar,text,text).
        #[arg(long, value_delimiter = ',')]
        types: Vec<String>,
        /// Layouts to refine.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Number of samples (ugen, gentype).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t_ugen: Option<usize>,
        #[arg(long)]
        t_gentype: Option<usize>,
        #[arg(long)]
        t_refine: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every intermediate state to this JSON file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Take the argmax instead of sampling at the last step.
        #[arg(long)]
        greedy_final: bool,
        /// Sample with the live weights instead of the EMA copy.
        #[arg(long)]
        live_weights: bool,
    },
    /// Run the forward process on one layout, keeping frames at t = round(T j / intervals).
    Corrupt {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        intervals: usize,
        /// Write the step and cumulative matrices at each frame time as CSV.
        #[arg(long)]
        dump_matrices: Option<PathBuf>,
    },
    /// Compare generated layouts with reference layouts.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Types left out of Overlap, comma separated.
        #[arg(long, value_delimiter = ',')]
        ignore: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a corpus file or a trace file as SVG.
    Render {
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Plot a training log or the coordinate noise schedule.
    Plot {
        #[command(subcommand)]
        what: PlotKind,
    },
}

#[derive(Subcommand)]
enum PlotKind {
    Loss {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Schedule {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_profile(s: &str) -> Result<ProfileName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn run(cli: Cli) -> heterodiff::Result<()> {
    let mut cfg = RunConfig::load(cli.profile, cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Synth { n, out } => commands::synth(&cfg, n, &out),
        Command::Ingest { input, out_dir } => commands::ingest(&cfg, &input, &out_dir),
        Command::Train {
            corpus,
            out,
            log,
            resume,
            steps,
            lr,
            batch_size,
            save_every,
            quiet,
        } => {
            if let Some(lr) = lr {
                cfg.profile.train.lr = lr;
            }
            if let Some(b) = batch_size {
                cfg.profile.train.batch_size = b;
            }
            cfg.validate()?;
            let args = TrainArgs {
                corpus,
                out,
                log,
                resume,
                steps,
                save_every,
                quiet,
            };
            commands::train(&cfg, &args)
        }
        Command::Sample {
            checkpoint,
            mode,
            types,
            input,
            n,
            t_ugen,
            t_gentype,
            t_refine,
            out,
            trace,
            greedy_final,
            live_weights,
        } => commands::sample(
            &cfg,
            &SampleArgs {
                checkpoint,
                mode,
                types,
                input,
                n,
                t_ugen,
                t_gentype,
                t_refine,
                out,
                trace,
                greedy_final,
                live_weights,
            },
        ),
        Command::Corrupt {
            input,
            index,
            out,
            intervals,
            dump_matrices,
        } => commands::corrupt(
            &cfg,
            &CorruptArgs {
                input,
                index,
                out,
                intervals,
                dump_matrices,
            },
        ),
        Command::Eval {
            generated,
            reference,
            ignore,
            out,
        } => commands::eval(&cfg, &generated, &reference, ignore.as_deref(), out.as_deref()),
        Command::Render { input, out_dir } => commands::render(&input, &out_dir).map(|_| ()),
        Command::Plot { what } => match what {
            PlotKind::Loss { log, out } => commands::plot_loss(&log, &out),
            PlotKind::Schedule { out } => commands::plot_schedule(&cfg, &out),
        },
    }
}

/// Runtime failures of a valid request exit with 1; bad input or
/// configuration exits with 2, like usage errors.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::MaskedType { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
