//! `geoloss`: command-line front end for training, evaluation, navigation
//! simulation, dataset parsing and feature matching.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod run;

use commands::{data, learn, nav, sift};
use run::{CliError, RunContext};

#[derive(Debug, Parser)]
#[command(name = "geoloss", version, about = "Pose-regression losses, localization metrics and navigation baselines")]
struct Cli {
    /// JSON config for the subcommand; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory [default: $GEOLOSS_OUT/<subcommand>, or runs/<subcommand>].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the regressor with one loss formulation.
    Train(learn::TrainArgs),
    /// Train one model per formulation and tabulate median test errors.
    CompareLosses(learn::CompareArgs),
    /// Sweep loss weights around a base formulation.
    Gridsearch(learn::GridArgs),
    /// Median errors and cumulative histograms of a predictions CSV.
    Eval(learn::EvalArgs),
    /// Spread, line fit and heading statistics of a regressed path.
    Pathmetrics(data::PathArgs),
    /// Kidnapped-robot Monte Carlo localization runs.
    MclSim(nav::MclArgs),
    /// Shortest path on an occupancy grid.
    Plan(nav::PlanArgs),
    /// Parse and re-emit a COLMAP text model.
    ParseColmap(data::ColmapArgs),
    /// Extract features and localize by matching.
    Sift(sift::SiftArgs),
    /// Print the version.
    Version,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::CompareLosses(_) => "compare-losses",
            Command::Gridsearch(_) => "gridsearch",
            Command::Eval(_) => "eval",
            Command::Pathmetrics(_) => "pathmetrics",
            Command::MclSim(_) => "mcl-sim",
            Command::Plan(_) => "plan",
            Command::ParseColmap(_) => "parse-colmap",
            Command::Sift(_) => "sift",
            Command::Version => "version",
        }
    }
}

fn dispatch(cli: &Cli, ctx: &mut RunContext) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(run::runtime)?;
    }
    let config = cli.config.as_deref();
    if let Some(c) = config {
        ctx.input(c);
    }
    match &cli.command {
        Command::Train(a) => learn::train_cmd(ctx, config, a, cli.seed),
        Command::CompareLosses(a) => learn::compare_cmd(ctx, config, a, cli.seed),
        Command::Gridsearch(a) => learn::grid_cmd(ctx, config, a, cli.seed),
        Command::Eval(a) => learn::eval_cmd(ctx, config, a, cli.seed),
        Command::Pathmetrics(a) => data::pathmetrics_cmd(ctx, config, a, cli.seed),
        Command::MclSim(a) => nav::mcl_cmd(ctx, config, a, cli.seed),
        Command::Plan(a) => nav::plan_cmd(ctx, config, a, cli.seed),
        Command::ParseColmap(a) => data::colmap_cmd(ctx, config, a, cli.seed),
        Command::Sift(a) => sift::sift_cmd(ctx, config, a, cli.seed),
        Command::Version => unreachable!("handled before a run directory exists"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Version = cli.command {
        println!("{}", env!("CARGO_PKG_VERSION"));
        return ExitCode::SUCCESS;
    }
    let mut ctx = RunContext::new(cli.command.name(), cli.out_dir.clone(), cli.seed.unwrap_or(0), cli.threads);
    let result = dispatch(&cli, &mut ctx);
    if let Err(e) = ctx.write_manifest(result.as_ref().err()) {
        eprintln!("error: cannot write manifest in {}: {e}", ctx.dir.display());
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
