use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ottd_cli::commands;
use ottd_cli::{CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ottd", version, about = "Off-policy TD experiments with target networks")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every algorithm on every seed and write results.csv.
    Run,
    /// Check convergence conditions and print convergence metrics.
    Diagnose,
    /// Compare closed-form fixed points with the learned parameters.
    FixedPoint,
    /// Evaluate the value-error bounds and write bounds.csv.
    Bound,
    /// Write the behaviour datasets as CSV.
    Collect,
    /// Render SVG learning curves from a results file.
    Plot {
        /// Path to results.csv.
        results: PathBuf,
    },
    /// Convergence metrics on Baird's example.
    Table1,
}

fn load(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seeds) = &cli.seed_override {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(cli: &Cli, w: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Plot { results } => {
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| results.parent().unwrap_or(Path::new(".")).to_path_buf());
            commands::cmd_plot(results, &dir, w).map(|_| ())
        }
        Command::Table1 => {
            let cfg = cli.config.as_ref().map(|_| load(cli)).transpose()?;
            commands::cmd_table1(cfg.as_ref(), &out_dir(cli, cfg.as_ref()), w).map(|_| ())
        }
        cmd => {
            let cfg = load(cli)?;
            let dir = out_dir(cli, Some(&cfg));
            match cmd {
                Command::Run => commands::cmd_run(&cfg, &dir, w).map(|_| ()),
                Command::Diagnose => commands::cmd_diagnose(&cfg, &dir, w),
                Command::FixedPoint => commands::cmd_fixed_point(&cfg, w),
                Command::Bound => commands::cmd_bound(&cfg, &dir, w),
                Command::Collect => commands::cmd_collect(&cfg, &dir, w).map(|_| ()),
                Command::Plot { .. } | Command::Table1 => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(&cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
