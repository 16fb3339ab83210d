//! `steffle run|validate|summarize`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use steffle::harness::{self, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "steffle", version, about = "Private and fair federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// First seed of the sweep.
    #[arg(long)]
    seed_base: Option<u64>,
    /// Output table path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// One of steffle, non_private_steffle, central_dp, non_private_central,
    /// no_fairness_fl, no_fairness_central.
    #[arg(long)]
    mode: Option<Mode>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep in a config file and write the tradeoff table.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a config file and its data without training.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute the summary rows of a tradeoff table.
    Summarize {
        records: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(path: &Path, o: &Overrides) -> steffle::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = o.seed_base {
        cfg.seed_base = s;
    }
    if let Some(p) = &o.output {
        cfg.output = p.clone();
    }
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    if let Some(j) = o.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn run(command: Command) -> steffle::Result<()> {
    match command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let records = harness::run_experiment(&cfg)?;
            if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| steffle::Error::Config(format!("{}: {e}", dir.display())))?;
            }
            harness::emit_tradeoff_table(&records, &cfg.output)?;
            let failed = records.iter().filter(|r| !r.is_summary() && r.failed()).count();
            println!("wrote {} rows to {} ({failed} failed cells)", records.len(), cfg.output.display());
        }
        Command::Validate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            harness::validate(&cfg)?;
            println!("{}: ok, {} cells", config.display(), harness::cells(&cfg).len());
        }
        Command::Summarize { records, output } => {
            let rows = harness::summarize(&harness::read_tradeoff_table(&records)?);
            let out = output.unwrap_or(records);
            harness::emit_tradeoff_table(&rows, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
