use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lungstack_cli::config::RunConfig;
use lungstack_cli::manifest::RunDir;
use lungstack_cli::stages::{self, Ctx, Level};
use lungstack_cli::{report, CliResult};
use lungstack_core::synth::SynthSpec;

/// Two-stage respiratory-sound classification pipeline.
#[derive(Parser)]
#[command(name = "lungstack", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Run directory; defaults to <output_dir>/run-<config hash>.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Re-run even when the stage is up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read and curate the corpus under data_root.
    Ingest(RunArgs),
    /// Write a synthetic cohort in the native layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Split patients and cut 2 s event clips.
    Preprocess(RunArgs),
    /// Embed every clip with the configured backend.
    Embed(RunArgs),
    /// Train the base heads with out-of-fold predictions.
    TrainBase(RunArgs),
    /// Tune and fit the meta-learners.
    Stack(RunArgs),
    /// Vote event predictions into patient predictions.
    Aggregate(RunArgs),
    /// Score predictions, optionally with bootstrap intervals.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Level::Event)]
        level: Level,
        /// Bootstrap replicates (0 disables intervals); defaults to the config.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Bootstrap seed; defaults to the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit cohort, metric, curve and per-clip figure tables.
    Report(RunArgs),
}

fn open(args: &RunArgs) -> CliResult<Ctx> {
    let cfg = RunConfig::load(&args.config)?;
    let root = args.run_dir.clone().unwrap_or_else(|| cfg.default_run_dir());
    log::info!("run directory {}", root.display());
    let run = RunDir::open(&root, &cfg.hash())?;
    Ok(Ctx {
        cfg,
        run,
        force: args.force,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            out,
            patients,
            seed,
            force,
        } => {
            let spec = SynthSpec {
                n_patients: patients,
                seed,
                ..SynthSpec::default()
            };
            stages::synth(&out, &spec, force)?;
        }
        Command::Ingest(a) => drop(stages::ingest(&mut open(&a)?)?),
        Command::Preprocess(a) => drop(stages::preprocess(&mut open(&a)?)?),
        Command::Embed(a) => drop(stages::embed(&mut open(&a)?)?),
        Command::TrainBase(a) => drop(stages::train(&mut open(&a)?)?),
        Command::Stack(a) => drop(stages::stack(&mut open(&a)?)?),
        Command::Aggregate(a) => drop(stages::aggregate(&mut open(&a)?)?),
        Command::Evaluate {
            run,
            level,
            bootstrap,
            seed,
        } => {
            let mut cx = open(&run)?;
            let b = bootstrap.unwrap_or(cx.cfg.bootstrap.replicates);
            let s = seed.unwrap_or(cx.cfg.bootstrap.seed);
            stages::evaluate(&mut cx, level, b, s)?;
        }
        Command::Report(a) => drop(report::report(&mut open(&a)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
