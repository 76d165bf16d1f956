use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sram_margin_lab::array::Granularity;
use sram_margin_lab::cli::{self, Command, ExperimentConfig, Manifest, RunRequest};
use sram_margin_lab::Result;

#[derive(Parser)]
#[command(
    name = "sram-margin-lab",
    version,
    about = "6T SRAM write-margin experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Hold and write transfer curves and equilibria
    Vtc(RunArgs),
    /// State-space trajectories of the six write scenarios
    Trajectories(RunArgs),
    /// Static write noise margin
    Wnm(RunArgs),
    /// Bit-line write trip voltage
    Bwtv(RunArgs),
    /// Word-line write trip voltage
    Wwtv(RunArgs),
    /// Critical word-line pulse width
    CritPulse(RunArgs),
    /// Word-line voltage margin of single cells
    WlvmCell(RunArgs),
    /// All metrics over the pull-up ratio sweep and the configured designs
    PrSweep(RunArgs),
    /// Monte Carlo correlation of WWTV, BWTV and WLVM
    McCorrelate(RunArgs),
    /// Word-line voltage margin search over a sampled array
    WlvmArray(RunArgs),
    /// Margin distributions of the configured designs
    CellCompare(RunArgs),
    /// Repeat a previous run from its manifest
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the commented default configuration
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; the built-in default when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; `output_dir` of the config when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cell names
    #[arg(long, value_delimiter = ',')]
    cells: Option<Vec<String>>,
    /// Comma-separated list of bit, word, block, memory (wlvm-array)
    #[arg(long, value_delimiter = ',')]
    granularity: Option<Vec<String>>,
}

fn execute(command: Command, args: RunArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => cli::load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let granularity = args
        .granularity
        .map(|gs| {
            gs.iter()
                .map(|g| g.parse::<Granularity>())
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    let req = RunRequest::resolve(command, config, args.seed, args.cells, granularity)?;
    let m = cli::run(&req, &out)?;
    eprintln!(
        "{}: wrote {} files to {}",
        command,
        m.outputs.len() + 1,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let parsed = Cli::parse();
    let result = match parsed.command {
        Cmd::Vtc(a) => execute(Command::Vtc, a),
        Cmd::Trajectories(a) => execute(Command::Trajectories, a),
        Cmd::Wnm(a) => execute(Command::Wnm, a),
        Cmd::Bwtv(a) => execute(Command::Bwtv, a),
        Cmd::Wwtv(a) => execute(Command::Wwtv, a),
        Cmd::CritPulse(a) => execute(Command::CritPulse, a),
        Cmd::WlvmCell(a) => execute(Command::WlvmCell, a),
        Cmd::PrSweep(a) => execute(Command::PrSweep, a),
        Cmd::McCorrelate(a) => execute(Command::McCorrelate, a),
        Cmd::WlvmArray(a) => execute(Command::WlvmArray, a),
        Cmd::CellCompare(a) => execute(Command::CellCompare, a),
        Cmd::Rerun { manifest, out } => {
            Manifest::load(&manifest).and_then(|m| cli::run(&m.request(), &out).map(|_| ()))
        }
        Cmd::DefaultConfig => {
            print!("{}", cli::DEFAULT_CONFIG);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
