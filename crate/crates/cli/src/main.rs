//! `voictl`: experiment runner for the event-triggered control toolkit.
//!
//! Exit codes: 0 success, 1 configuration or run error, 2 failed
//! verification checks, 64 usage error.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voi_control::model::ModelError;
use voi_control::policies::TriggerKind;

use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Run(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "voictl", version, about = "Event-triggered control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment or model config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo episodes.
    #[arg(long, global = true)]
    episodes: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for CSV tables and summary.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write per-stage traces of every episode (simulate; needs --out).
    #[arg(long, global = true)]
    trace_out: bool,
    /// Trigger policy, `kind[:param]`.
    #[arg(long, global = true)]
    policy: Option<String>,
    /// Use the myopic VoI rule in place of the exact DP trigger.
    #[arg(long, global = true)]
    myopic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model and print its dimensions.
    Validate { path: Option<PathBuf> },
    /// Riccati sequences S, L, Gamma and prices theta as CSV.
    Riccati { path: Option<PathBuf> },
    /// Value tables and thresholds of the scalar DP as CSV.
    Dp { path: Option<PathBuf> },
    /// Monte Carlo batch of the closed loop.
    Simulate { path: Option<PathBuf> },
    /// Trade-off curve over the configured lambda list.
    Sweep { path: Option<PathBuf> },
    /// Oracle checks on a tiny scalar instance.
    Verify { path: Option<PathBuf> },
}

impl Command {
    fn path(&self) -> Option<&Path> {
        match self {
            Command::Validate { path }
            | Command::Riccati { path }
            | Command::Dp { path }
            | Command::Simulate { path }
            | Command::Sweep { path }
            | Command::Verify { path } => path.as_deref(),
        }
    }

    /// Summary goes to stdout unless the primary output is a table.
    fn prints_table(&self) -> bool {
        matches!(self, Command::Riccati { .. } | Command::Dp { .. })
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = match (cli.command.path(), cli.config.as_deref()) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give the config either positionally or with --config".into())),
        (Some(p), None) | (None, Some(p)) => p,
        (None, None) => return Err(CliError::Usage("a config file is required".into())),
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(episodes) = cli.episodes {
        cfg.episodes = episodes;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }
    if let Some(policy) = &cli.policy {
        cfg.policy = policy.parse().map_err(|e: voi_control::policies::PolicyError| CliError::Config {
            field: "policy".into(),
            message: e.to_string(),
        })?;
    }
    if cli.myopic && cfg.policy == TriggerKind::VoiExact {
        cfg.policy = TriggerKind::VoiMyopic;
    }
    if cli.trace_out && cli.out.is_none() {
        return Err(CliError::Usage("--trace-out needs --out <dir>".into()));
    }
    cfg.check()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let cfg = resolve(cli)?;
    if let Some(threads) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let output = match &cli.command {
        Command::Validate { .. } => commands::validate(&cfg)?,
        Command::Riccati { .. } => commands::riccati(&cfg)?,
        Command::Dp { .. } => commands::dp(&cfg)?,
        Command::Simulate { .. } => commands::simulate(&cfg, cli.trace_out)?,
        Command::Sweep { .. } => commands::sweep(&cfg)?,
        Command::Verify { .. } => commands::verify(&cfg)?,
    };
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        for (name, contents) in &output.tables {
            write_file(&dir.join(name), contents)?;
        }
        write_file(&dir.join("summary.json"), &(summary.clone() + "\n"))?;
    }
    let mut stdout = std::io::stdout().lock();
    let printed = match output.tables.first() {
        Some((_, table)) if cli.command.prints_table() && cli.out.is_none() => writeln!(stdout, "{}", table.trim_end()),
        _ => writeln!(stdout, "{summary}"),
    };
    printed.map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })?;
    if output.failing.is_empty() {
        Ok(0)
    } else {
        eprintln!("verification failed: {}", output.failing.join(", "));
        Ok(2)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
