use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coherence_scope::config::ExperimentConfig;
use coherence_scope::runner;

#[derive(Parser)]
#[command(
    name = "coherence-scope",
    about = "GHZ-based detection and characterization of coherent errors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config; writes results.csv
    /// and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent sweeps.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-fit an existing results.csv and regenerate report.json.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file; prints warnings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Transfer-product vs brute-force cross-check suite; exits nonzero on
    /// deviation above 1e-9.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random channel tuples.
        #[arg(long, default_value_t = 100)]
        tuples: usize,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> coherence_scope::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, seed, jobs } => {
            let output = runner::run(&config, &out, seed, jobs)?;
            for w in &output.warnings {
                eprintln!("warning: {w}");
            }
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { config, out } => {
            let output = runner::refit(&config, &out)?;
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let warnings = cfg.validate()?;
            for w in &warnings {
                println!("warning: {w}");
            }
            println!("config ok");
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { seed, tuples, jobs } => {
            if let Some(k) = jobs {
                rayon::ThreadPoolBuilder::new().num_threads(k).build_global().ok();
            }
            let outcome = runner::oracle_suite(seed, tuples)?;
            let coherence_dev = runner::coherence_roundtrip_suite(seed, 25)?;
            println!(
                "oracle: {} qubit cases, {} qutrit cases, max parity deviation {:.3e}",
                outcome.qubit_cases, outcome.qudit_cases, outcome.max_deviation
            );
            println!("coherence round-trip worst error {coherence_dev:.3e}");
            if outcome.max_deviation > 1e-9 {
                eprintln!("oracle FAILED: deviation above 1e-9");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
