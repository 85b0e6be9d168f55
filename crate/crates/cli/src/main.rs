use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eabfl::fl::experiment::{build_partition, prepare_data};
use eabfl::fl::ExperimentConfig;
use eabfl::harness::{build_report, run_sweep, Axis, Metric, MANIFEST_FILE};
use eabfl::rec::{run_rec_experiment, RecExperimentConfig};
use eabfl::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "eabfl",
    version,
    about = "Fairness-attack federated learning simulator"
)]
struct Cli {
    /// Worker threads for sweep cells and client jobs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Added to every seed in the sweep.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep cell of a config; writes JSONL logs and a manifest.
    Run {
        config: PathBuf,
        /// Overrides `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise final-round metrics of a finished sweep as CSV.
    Report {
        manifest: PathBuf,
        #[arg(long, default_value = "eod")]
        metric: String,
        #[arg(long, default_value = "epsilon")]
        group_by: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Poison a matrix-factorisation recommender's item biases.
    RecAttack {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the client partition of a config as JSON.
    Partition { config: PathBuf },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Toml(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "config file {} not found",
            path.display()
        )));
    }
    let cfg = ExperimentConfig::load(path)?;
    let violations = cfg.violations();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
        return Err(Failure::Usage(format!(
            "invalid config {}:\n{}",
            path.display(),
            list.join("\n")
        )));
    }
    Ok(cfg)
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = read_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let manifest = run_sweep(&cfg, &dir, cli.jobs, cli.seed_offset)?;
            let failed = manifest.failures();
            println!("{}", dir.join(MANIFEST_FILE).display());
            if failed > 0 {
                return Err(Failure::Runtime(format!(
                    "{failed} of {} cells failed",
                    manifest.cells.len()
                )));
            }
        }
        Command::Report {
            manifest,
            metric,
            group_by,
            output,
        } => {
            let metric: Metric = metric.parse()?;
            let axis: Axis = group_by.parse()?;
            if !manifest.is_file() {
                return Err(Failure::Usage(format!(
                    "manifest {} not found",
                    manifest.display()
                )));
            }
            let table = build_report(&manifest, metric, axis)?;
            for g in &table.gaps {
                eprintln!("warning: partial report: {g}");
            }
            emit(&table.to_csv(), output.as_deref())?;
        }
        Command::RecAttack { config, output } => {
            if !config.is_file() {
                return Err(Failure::Usage(format!(
                    "config file {} not found",
                    config.display()
                )));
            }
            let cfg = RecExperimentConfig::load(&config)?;
            let report = run_rec_experiment(&cfg)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            emit(&(json + "\n"), output.as_deref())?;
        }
        Command::Partition { config } => {
            let mut cfg = read_config(&config)?;
            cfg.seed = cfg.seed.wrapping_add(cli.seed_offset);
            let (train, _) = prepare_data(&cfg)?;
            let plan = build_partition(&cfg, &train)?;
            let json =
                serde_json::to_string_pretty(&plan).map_err(|e| Failure::Runtime(e.to_string()))?;
            emit(&(json + "\n"), None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
