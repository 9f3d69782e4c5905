use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use davies_gap::harness::report::emit;
use davies_gap::harness::{self, ExperimentConfig, Format};
use davies_gap::Result;

#[derive(Parser)]
#[command(name = "davies-gap", version, about = "Quantum and classical spectral gaps of Davies generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-frequency, Hermitian and V_0 gaps of each instance.
    Gap(Opts),
    /// Quantum vs. classical gap sandwich over random instances.
    Compare(Opts),
    /// Frequency of proper 3-APs and repeated eigenvalues across model families.
    ApScan(Opts),
    /// Projection witnesses for the Cheeger-type bound.
    Cheeger(Opts),
    /// Randomised inequality suites; exits 1 on any violation.
    Verify(Opts),
}

#[derive(Args)]
struct Opts {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<CliFormat>,
    /// Multiplies every check tolerance.
    #[arg(long)]
    tol_scale: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliFormat {
    Json,
    Csv,
}

const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Flags override config fields.
fn load(opts: &Opts) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &opts.out {
        cfg.out = Some(out.clone());
    }
    if let Some(f) = opts.format {
        cfg.format = match f {
            CliFormat::Json => Format::Json,
            CliFormat::Csv => Format::Csv,
        };
    }
    if let Some(s) = opts.tol_scale {
        cfg.tolerances.scale = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Whether every check passed.
fn run(command: &Command) -> Result<bool> {
    let opts = match command {
        Command::Gap(o) | Command::Compare(o) | Command::ApScan(o) | Command::Cheeger(o) | Command::Verify(o) => o,
    };
    let cfg = load(opts)?;
    let out = cfg.out.as_deref();
    Ok(match command {
        Command::Gap(_) => {
            emit(&harness::run_gap(&cfg)?, cfg.format, out)?;
            true
        }
        Command::Compare(_) => {
            let rep = harness::run_comparison(&cfg)?;
            emit(&rep, cfg.format, out)?;
            rep.summary.passed
        }
        Command::ApScan(_) => {
            emit(&harness::run_ap_scan(&cfg)?, cfg.format, out)?;
            true
        }
        Command::Cheeger(_) => {
            let rep = harness::run_cheeger(&cfg)?;
            emit(&rep, cfg.format, out)?;
            rep.summary.passed
        }
        Command::Verify(_) => {
            let rep = harness::run_verify(&cfg)?;
            emit(&rep, cfg.format, out)?;
            for s in rep.suites.iter().filter(|s| !s.passed) {
                if let Some(f) = &s.failure {
                    eprintln!("{} failed: replay with --seed {} (trial {}): {}", s.suite.name(), f.seed, f.trial, f.detail);
                }
            }
            rep.passed
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VIOLATION),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
