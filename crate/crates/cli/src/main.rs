//! `phasesep`: runs the separation experiments from one JSON config.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 a checked criterion failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasesep::config::Profile;

mod commands;

use commands::{Context, CriterionFailed, UsageError};

#[derive(Parser, Debug)]
#[command(
    name = "phasesep",
    version,
    about = "Phase-feature music source separation experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single seed, overriding the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// STFT profile, overriding the config.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic corpus to `<out>/corpus`.
    Synth,
    /// Phase-derivative histograms and tensor dumps for one song.
    Features {
        /// Song directory name in the corpus.
        #[arg(long)]
        song: String,
        /// Analyse one stem instead of the mixture.
        #[arg(long)]
        source: Option<String>,
        /// Histogram bins over [-π, π].
        #[arg(long, default_value_t = 64)]
        hist_bins: usize,
    },
    /// Trains one bundle per configured architecture and seed.
    Train {
        /// Also train a phase-only bundle per ablation feature variant.
        #[arg(long)]
        ablation: bool,
    },
    /// Separates a mixture into stems.
    Separate {
        /// Trained bundle; not used with --oracle.
        #[arg(long, required_unless_present = "oracle")]
        bundle: Option<PathBuf>,
        /// Mixture WAV file.
        #[arg(long, conflicts_with = "song")]
        mixture: Option<PathBuf>,
        /// Corpus song whose mixture is separated.
        #[arg(long, required_unless_present = "mixture")]
        song: Option<String>,
        /// Resynthesize the song's own stems from their true amplitude and
        /// phase, checking the pipeline end to end.
        #[arg(long, requires = "song", conflicts_with = "bundle")]
        oracle: bool,
    },
    /// Scores bundles on the test split; the first bundle is the baseline.
    Evaluate {
        #[arg(long, required = true)]
        bundle: Vec<PathBuf>,
        /// Skip the oracle upper-bound table.
        #[arg(long)]
        no_upper_bounds: bool,
    },
    /// Checks the phase/amplitude derivative relation on a chirp.
    VerifyTheory,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<CriterionFailed>().is_some() {
        return 3;
    }
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<phasesep::Error>() {
        Some(phasesep::Error::Config(_) | phasesep::Error::Json(_)) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let ctx = Context::new(g.config.as_deref(), g.out, g.seed, g.profile, g.force)?;
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Features {
            song,
            source,
            hist_bins,
        } => commands::features(&ctx, &song, source.as_deref(), hist_bins),
        Command::Train { ablation } => commands::train(&ctx, ablation),
        Command::Separate {
            bundle,
            mixture,
            song,
            oracle,
        } => commands::separate(&ctx, bundle.as_deref(), mixture.as_deref(), song.as_deref(), oracle),
        Command::Evaluate {
            bundle,
            no_upper_bounds,
        } => commands::evaluate(&ctx, &bundle, !no_upper_bounds),
        Command::VerifyTheory => commands::verify_theory(&ctx),
    }
}
