//! Argument parsing and subcommand dispatch.
//!
//! Exit codes: 0 success, 2 missing/malformed input, 3 run diverged.

use crate::{plot, scenario_file, selftest};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mavctl::sim::{self, Scenario};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const EXIT_USER_ERROR: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mavctl",
    version,
    about = "Fault-tolerant hexacopter control simulator",
    after_help = "Scenario files are sectioned key = value text; see the repository README."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes <name>.csv and <name>.metrics
    Run(RunArgs),
    /// Run several scenarios in parallel, one thread each
    Batch(BatchArgs),
    /// Render SVG charts (positions, yaw error, health, thrusts) from a log
    Plot {
        /// Run log CSV produced by `run`
        #[arg(long)]
        log: PathBuf,
        /// Output directory for the SVG files
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Quick invariant checks; nonzero exit on any failure
    Selftest {
        /// Corrupt the moment coefficient to prove the oracle check fires
        #[arg(long, hide = true)]
        corrupt_km: bool,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario file
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Print run metrics to stdout as well
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Clone)]
struct BatchArgs {
    /// Scenario files (repeatable)
    #[arg(long = "scenario", required = true, num_args = 1..)]
    scenarios: Vec<PathBuf>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Override the scenario's noise seed
    #[arg(long)]
    seed: Option<u64>,
    /// Force plant-model mismatch on or off
    #[arg(long, value_parser = ["on", "off"])]
    mismatch: Option<String>,
    /// Disable measurement noise
    #[arg(long)]
    no_noise: bool,
}

impl Overrides {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        match self.mismatch.as_deref() {
            Some("off") => scenario.mismatch = sim::MismatchConfig::off(),
            Some("on") => scenario.mismatch = sim::MismatchConfig::default(),
            _ => {}
        }
        if self.no_noise {
            scenario.noise = false;
        }
    }
}

fn sanitize(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "scenario".into()
    } else {
        cleaned
    }
}

/// Run one scenario and write its artifacts. Returns the exit code.
fn run_one(scenario: &Scenario, out: &Path, verbose: bool) -> Result<u8> {
    let (log, metrics) = sim::run(scenario).context("simulation failed")?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    let stem = sanitize(&scenario.name);
    let csv_path = out.join(format!("{stem}.csv"));
    let metrics_path = out.join(format!("{stem}.metrics"));
    std::fs::write(&csv_path, log.to_csv())
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    std::fs::write(&metrics_path, metrics.to_text())
        .with_context(|| format!("cannot write {}", metrics_path.display()))?;
    if verbose {
        print!("{}", metrics.to_text());
    }
    if metrics.diverged {
        eprintln!(
            "run `{}` diverged; partial log written to {}",
            scenario.name,
            csv_path.display()
        );
        return Ok(EXIT_DIVERGED);
    }
    println!("wrote {} and {}", csv_path.display(), metrics_path.display());
    Ok(0)
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let mut scenario = scenario_file::load(&args.scenario)?;
    args.overrides.apply(&mut scenario);
    run_one(&scenario, &args.out, args.verbose)
}

fn cmd_batch(args: &BatchArgs) -> Result<u8> {
    // parse everything up front so a bad file fails the whole batch early
    let mut scenarios = Vec::new();
    for path in &args.scenarios {
        let mut s = scenario_file::load(path)?;
        args.overrides.apply(&mut s);
        scenarios.push(s);
    }
    let mut worst = 0u8;
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(|| run_one(s, &args.out, false)))
            .collect();
        for h in handles {
            match h.join().expect("runner thread panicked") {
                Ok(code) => worst = worst.max(code),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    worst = worst.max(EXIT_USER_ERROR);
                }
            }
        }
    });
    Ok(worst)
}

fn cmd_plot(log_path: &Path, out: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(log_path)
        .with_context(|| format!("cannot read log {}", log_path.display()))?;
    let log = mavctl::sim::RunLog::from_csv(&text)?;
    let stem = log_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("log");
    let files = plot::plot_log(&log, out, stem)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

pub fn dispatch(cli: Cli) -> ExitCode {
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Batch(args) => cmd_batch(args),
        Command::Plot { log, out } => cmd_plot(log, out),
        Command::Selftest { corrupt_km } => {
            let ok = selftest::run(selftest::Corruption {
                km_sign: *corrupt_km,
            });
            Ok(if ok { 0 } else { 1 })
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USER_ERROR)
        }
    }
}
