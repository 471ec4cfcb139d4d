//! The `seawatch` command-line pipeline.
//!
//! Every subcommand reads and writes artifacts in `work_dir` and records
//! itself in `work_dir/manifest.json`.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use seawatch::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::StageRecord;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "seawatch", version, about = "AIS vessel-day outlier detection")]
pub struct Cli {
    /// key=value configuration file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sigma multiplier of the outlier threshold.
    #[arg(long, global = true)]
    pub k: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Single-threaded everywhere, for byte-identical reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Parse AIS CSV files, filter by length and build per-vessel tracks.
    Ingest,
    /// Resample, interpolate and normalize tracks into vessel-day sequences.
    Preprocess,
    /// Partition the corpus into train, validation and test sets.
    Split,
    /// Train the recurrent autoencoder.
    Train,
    /// Score a set and flag outliers.
    Score,
    /// Write selected vessel-days as GeoJSON LineStrings.
    ExportGeojson,
    /// Re-threshold existing scores and summarize the run.
    Report,
    /// Generate a synthetic AIS corpus with labelled anomalies.
    Synth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Preprocess => "preprocess",
            Command::Split => "split",
            Command::Train => "train",
            Command::Score => "score",
            Command::ExportGeojson => "export-geojson",
            Command::Report => "report",
            Command::Synth => "synth",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_USAGE
    } else if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

/// File, then `--set` overrides in order, then the dedicated flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(v) = &cli.work_dir {
        cfg.work_dir = v.clone();
    }
    if let Some(v) = &cli.input {
        cfg.input = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.k {
        cfg.k = v;
    }
    if let Some(v) = cli.epochs {
        cfg.epochs = v;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<StageRecord> {
    if command != Command::Synth {
        std::fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io_at(&cfg.work_dir, e))?;
    }
    let start = Instant::now();
    let stage = match command {
        Command::Ingest => commands::ingest(cfg),
        Command::Preprocess => commands::preprocess(cfg),
        Command::Split => commands::split_cmd(cfg),
        Command::Train => commands::train_cmd(cfg),
        Command::Score => commands::score(cfg),
        Command::ExportGeojson => commands::export_geojson_cmd(cfg),
        Command::Report => commands::report(cfg),
        Command::Synth => return commands::synth(cfg),
    }?;
    manifest::record_stage(cfg, command.name(), start.elapsed().as_secs_f64(), &stage)?;
    Ok(stage)
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if cli.print_config {
        print!("{}", cfg.render());
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given; see --help");
        return EXIT_USAGE;
    };
    if cfg.deterministic {
        // Fails only if a pool already exists, which is fine for reruns in
        // one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match execute(command, &cfg) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
