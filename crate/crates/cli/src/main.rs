//! `mate`: generate synthetic data, train, solve equilibria, infer and
//! cross-validate macroscopic traffic models.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "mate", version, about = "Macroscopic traffic estimation")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Total number of samples, filled period by period.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fit every parameter group to a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Solve for equilibrium link flows with all other parameters fixed.
    Equilibrium {
        #[command(flatten)]
        common: Common,
        /// Relative-gap target.
        #[arg(long)]
        gap: Option<f64>,
    },
    /// Estimate network-wide flows and times for new inputs with trained parameters.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        gap: Option<f64>,
    },
    /// Link-level k-fold cross-validation against data-driven baselines.
    Xval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Cross-validate over a grid of equilibrium weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Summarize a finished run directory.
    Report { dir: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Equilibrium { .. } => "equilibrium",
            Command::Infer { .. } => "infer",
            Command::Xval { .. } => "xval",
            Command::Sweep { .. } => "sweep",
            Command::Report { .. } => "report",
        }
    }
}

fn cap_samples(cfg: &mut RunConfig, total: usize) -> Result<(), CliError> {
    if total == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let mut left = total;
    for p in &mut cfg.synthetic.periods {
        p.samples = p.samples.min(left);
        left -= p.samples;
    }
    cfg.synthetic.periods.retain(|p| p.samples > 0);
    Ok(())
}

/// Builds the effective configuration from file, `--set` and flags.
fn configure(command: &Command) -> Result<RunConfig, CliError> {
    let common = match command {
        Command::Generate { common, .. }
        | Command::Train { common, .. }
        | Command::Equilibrium { common, .. }
        | Command::Infer { common, .. }
        | Command::Xval { common, .. }
        | Command::Sweep { common, .. } => common,
        Command::Report { .. } => unreachable!(),
    };
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if let Some(data) = &common.data {
        cfg.data = Some(data.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match command {
        Command::Generate { samples: Some(n), .. } => cap_samples(&mut cfg, *n)?,
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::Equilibrium { gap: Some(g), .. } => cfg.train.gap_target = Some(*g),
        Command::Infer { checkpoint, gap, .. } => {
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c.clone());
            }
            if let Some(g) = gap {
                cfg.infer.gap_target = Some(*g);
            }
        }
        Command::Xval { k: Some(k), .. } => cfg.folds.k = *k,
        Command::Sweep { grid: Some(g), .. } => cfg.sweep.grid = g.clone(),
        _ => {}
    }
    cfg.resolve();
    cfg.validate(!matches!(command, Command::Generate { .. }))?;
    Ok(cfg)
}

fn timestamp(t: SystemTime) -> String {
    humantime::format_rfc3339_seconds(t).to_string()
}

fn run(command: Command) -> Result<(), CliError> {
    if let Command::Report { dir } = &command {
        print!("{}", report::cmd_report(dir)?);
        return Ok(());
    }
    let cfg = configure(&command)?;
    let out = commands::output_dir(&cfg)?;
    commands::write_json(&out.join("config.json"), &cfg)?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let result = match &command {
        Command::Generate { .. } => commands::cmd_generate(&cfg, &out)?,
        Command::Train { .. } => commands::cmd_train(&cfg, &out)?,
        Command::Equilibrium { .. } => commands::cmd_equilibrium(&cfg, &out)?,
        Command::Infer { .. } => commands::cmd_infer(&cfg, &out)?,
        Command::Xval { .. } => commands::cmd_xval(&cfg, &out)?,
        Command::Sweep { .. } => commands::cmd_sweep(&cfg, &out)?,
        Command::Report { .. } => unreachable!(),
    };
    commands::write_json(
        &out.join("summary.json"),
        &json!({ "command": command.name(), "result": result }),
    )?;
    commands::write_json(
        &out.join("metadata.json"),
        &json!({
            "command": command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "started": timestamp(started),
            "finished": timestamp(SystemTime::now()),
            "elapsed_seconds": clock.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
