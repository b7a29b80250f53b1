//! The `neurotraj` command line: dataset generation, relabeling, training,
//! evaluation, closed-loop simulation, latency sweeps and plotting.

pub mod commands;
pub mod manifest;
pub mod plot;

use clap::{Args, CommandFactory, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

pub use manifest::{FileRecord, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "neurotraj", version, about = "Potential-map conditioned neural trajectory planning")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for commands that fan out over episodes or latencies.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Pipeline config JSON with optional `train`, `sim` and `relabel` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic expert dataset.
    Gen(commands::GenArgs),
    /// Rewrite labels that pass through inflated obstacle cells.
    Relabel(commands::RelabelArgs),
    /// Train a driving model.
    Train(commands::TrainArgs),
    /// Open-loop evaluation of a model on a dataset.
    Eval(commands::EvalArgs),
    /// Run one closed-loop episode.
    Simulate(commands::SimulateArgs),
    /// Success rate over the scenario suite for several planning latencies.
    SweepLatency(commands::SweepArgs),
    /// Render a CSV as an SVG plot.
    Plot(commands::PlotArgs),
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("NEUROTRAJ_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn subcommand_help(argv: &[OsString]) -> Option<String> {
    let mut cmd = Cli::command();
    let name = argv
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| cmd.find_subcommand(a).is_some())?
        .to_string();
    cmd.find_subcommand_mut(&name).map(|sub| sub.render_help().to_string())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    init_logging();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprint!("{e}");
            if let Some(help) = subcommand_help(&argv) {
                eprintln!();
                eprint!("{help}");
            }
            return EXIT_USAGE;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(&cli, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DOMAIN
        }
    }
}
