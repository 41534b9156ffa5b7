use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use replaylab_cli::{run, RunArgs, Subcommand};

#[derive(Parser)]
#[command(
    name = "replaylab",
    version,
    about = "Replay-buffer experiments for asynchronous RL fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Compute-ratio table, optimal design and step size
    Design(Common),
    /// Buffered SGD on synthetic objectives
    SimulateSync(Common),
    /// Discrete-event pipeline simulation
    SimulateAsync(Common),
    /// Policy-gradient training on a bandit task
    TrainBandit(Common),
    /// Compare completed runs at equal compute
    Report {
        #[command(flatten)]
        common: Common,
        /// Completed run directories
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file (a run manifest also works)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicates, overriding the config
    #[arg(long)]
    seeds: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// `key=v1,v2;other=v3` overrides applied after the config file
    #[arg(long)]
    grid_overrides: Option<String>,
}

impl Common {
    fn into_args(self, inputs: Vec<PathBuf>) -> RunArgs {
        RunArgs {
            config: self.config,
            seed: self.seed,
            seeds: self.seeds,
            out: self.out,
            grid_overrides: self.grid_overrides,
            inputs,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (sub, args) = match cli.command {
        Command::Design(c) => (Subcommand::Design, c.into_args(Vec::new())),
        Command::SimulateSync(c) => (Subcommand::SimulateSync, c.into_args(Vec::new())),
        Command::SimulateAsync(c) => (Subcommand::SimulateAsync, c.into_args(Vec::new())),
        Command::TrainBandit(c) => (Subcommand::TrainBandit, c.into_args(Vec::new())),
        Command::Report { common, runs } => (Subcommand::Report, common.into_args(runs)),
    };
    match run(sub, &args) {
        Ok(stats) => {
            for name in sub.display_files() {
                if let Ok(text) = fs::read_to_string(args.out.join(name)) {
                    print!("{text}");
                }
            }
            for (k, v) in stats {
                println!("{k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("replaylab {}: {e}", sub.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
