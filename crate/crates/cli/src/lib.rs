//! Run orchestration for replaylab: config resolution, per-subcommand
//! drivers, output directories and run manifests.

pub mod commands;
pub mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use replaylab_core::async_sim::SimError;
use replaylab_core::compute::ComputeError;
use replaylab_core::design::DesignError;
use replaylab_core::report::ReportError;
use replaylab_core::rl_toy::ToyError;
use replaylab_core::sgd_lab::SgdError;

pub use config::{Config, ConfigError, KeySpec, RawConfig, MANIFEST_MARKER};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("run diverged: {0}")]
    Diverged(String),
    #[error("pipeline deadlocked: {0}")]
    Deadlock(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Deadlock(_) => 4,
            CliError::Io { .. } | CliError::Failed(_) => 1,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<SgdError> for CliError {
    fn from(e: SgdError) -> Self {
        match e {
            SgdError::Diverged { .. } => CliError::Diverged(e.to_string()),
            SgdError::InvalidConfig(_) | SgdError::Design(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Deadlock { .. } => CliError::Deadlock(e.to_string()),
            SimError::InvalidConfig(_) => CliError::Invalid(e.to_string()),
            SimError::Buffer(replaylab_core::BufferError::InvalidConfig(_)) => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::Diverged { .. } => CliError::Diverged(e.to_string()),
            ToyError::Buffer(replaylab_core::BufferError::InvalidConfig(_))
            | ToyError::InvalidTask(_)
            | ToyError::InvalidConfig(_)
            | ToyError::Parse { .. }
            | ToyError::Compute(_) => CliError::Invalid(e.to_string()),
            ToyError::Buffer(_) => CliError::Failed(e.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ComputeError> for CliError {
    fn from(e: ComputeError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Design,
    SimulateSync,
    SimulateAsync,
    TrainBandit,
    Report,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Design => "design",
            Subcommand::SimulateSync => "simulate-sync",
            Subcommand::SimulateAsync => "simulate-async",
            Subcommand::TrainBandit => "train-bandit",
            Subcommand::Report => "report",
        }
    }

    pub fn schema(self) -> &'static [KeySpec] {
        match self {
            Subcommand::Design => commands::design::SCHEMA,
            Subcommand::SimulateSync => commands::sync::SCHEMA,
            Subcommand::SimulateAsync => commands::pipeline::SCHEMA,
            Subcommand::TrainBandit => commands::bandit::SCHEMA,
            Subcommand::Report => commands::report::SCHEMA,
        }
    }

    /// Human-readable output the binary echoes after a successful run.
    pub fn display_files(self) -> &'static [&'static str] {
        match self {
            Subcommand::Design => &["gamma.txt"],
            Subcommand::Report => &["report.txt"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<u64>,
    pub out: PathBuf,
    pub grid_overrides: Option<String>,
    /// Completed run directories (report only).
    pub inputs: Vec<PathBuf>,
}

/// Summary values recorded in the manifest; virtual quantities only.
pub type Stats = Vec<(String, String)>;

/// Reads the config file (if any), applies flag overrides and checks the
/// result against the subcommand schema.
pub fn resolve_config(sub: Subcommand, args: &RunArgs) -> Result<Config, CliError> {
    let mut raw = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    if let Some(overrides) = &args.grid_overrides {
        raw.apply_overrides(overrides)?;
    }
    if let Some(seed) = args.seed {
        raw.set("seed", seed.to_string());
    }
    if let Some(seeds) = args.seeds {
        raw.set("seeds", seeds.to_string());
    }
    Ok(raw.resolve(sub.schema())?)
}

/// Runs a subcommand into `args.out` and writes its manifest.
pub fn run(sub: Subcommand, args: &RunArgs) -> Result<Stats, CliError> {
    let cfg = resolve_config(sub, args)?;
    let out = &args.out;
    if out.join(MANIFEST_FILE).exists() {
        return Err(CliError::Failed(format!(
            "{} already holds a completed run; choose a fresh output directory",
            out.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let stats = match sub {
        Subcommand::Design => commands::design::run(&cfg, out)?,
        Subcommand::SimulateSync => commands::sync::run(&cfg, out)?,
        Subcommand::SimulateAsync => commands::pipeline::run(&cfg, out)?,
        Subcommand::TrainBandit => commands::bandit::run(&cfg, out)?,
        Subcommand::Report => commands::report::run(&cfg, &args.inputs, out)?,
    };
    write_manifest(sub, args, &cfg, &stats)?;
    log::info!("{} finished in {}", sub.name(), out.display());
    Ok(stats)
}

fn write_manifest(
    sub: Subcommand,
    args: &RunArgs,
    cfg: &Config,
    stats: &Stats,
) -> Result<(), CliError> {
    let path = args.out.join(MANIFEST_FILE);
    let config_path = args
        .config
        .as_ref()
        .map_or_else(|| "(defaults)".to_string(), |p| p.display().to_string());
    let mut text = format!(
        "{MANIFEST_MARKER}\nsubcommand = {}\ntool_version = {TOOL_VERSION}\nconfig_path = {config_path}\nseed = {}\nseeds = {}\nout = {}\n",
        sub.name(),
        cfg.str("seed"),
        cfg.str("seeds"),
        args.out.display(),
    );
    for (i, input) in args.inputs.iter().enumerate() {
        text.push_str(&format!("input.{i} = {}\n", input.display()));
    }
    for (k, v) in stats {
        text.push_str(&format!("stat.{k} = {v}\n"));
    }
    for (k, v) in cfg.entries() {
        text.push_str(&format!("config.{k} = {v}\n"));
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Writes one data file through `body`.
pub(crate) fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|()| w.flush())
        .map_err(|e| CliError::io(&path, e))
}

/// Per-replicate seed derived from the manifest seed.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    replaylab_core::SeedStream::new(seed).child(index).master()
}
