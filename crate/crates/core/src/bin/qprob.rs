//! Command-line front end: each subcommand loads one experiment config,
//! runs it, and writes the report (plus any CSV tables) to disk.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for
//! config mistakes, 3 when a solver or the filesystem gives up mid-run.

use std::path::{Path, PathBuf};
use std::process::exit;

use clap::{Parser, Subcommand};

use qprob::report::{
    self, ExperimentConfig, LoadedConfig, VerificationReport,
};
use qprob::QprobError;

#[derive(Parser)]
#[command(
    name = "qprob",
    version,
    about = "Grid-based quantum probability experiments: verification suites, evolutions, and scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite described by a config and write a report.
    Verify {
        /// Experiment config (JSON, kind "verify").
        config: PathBuf,
        /// Report file (default: the config's output field, then report.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for random fixtures; everything else is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evolve a configured state; writes snapshots.csv and summary.json.
    Evolve {
        /// Experiment config (JSON, kind "evolve" or "many_body").
        config: PathBuf,
        /// Output directory (default: the config's output field, then ".").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure a dispersion relation; writes dispersion.csv and summary.json.
    Dispersion {
        /// Experiment config (JSON, kind "dispersion").
        config: PathBuf,
    },
    /// Scan packet widths against the classical path; writes classical.csv
    /// and summary.json.
    Classical {
        /// Experiment config (JSON, kind "classical_scan").
        config: PathBuf,
    },
}

fn main() {
    report::apply_thread_cap_from_env();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Verify { config, out, seed } => verify(&config, out, seed),
        Command::Evolve { config, out } => {
            run_in_dir(&config, out, |loaded, dir| report::run_evolve(loaded, dir))
        }
        Command::Dispersion { config } => {
            run_in_dir(&config, None, |loaded, dir| report::run_dispersion(loaded, dir))
        }
        Command::Classical { config } => {
            run_in_dir(&config, None, |loaded, dir| report::run_classical_scan(loaded, dir))
        }
    };
    exit(code);
}

fn fail(err: &QprobError) -> i32 {
    eprintln!("error: {err}");
    report::exit_code_for(err)
}

fn verify(config: &Path, out: Option<PathBuf>, seed: u64) -> i32 {
    let loaded = match report::load_config(config) {
        Ok(loaded) => loaded,
        Err(e) => return fail(&e),
    };
    let report = match report::run_verify(&loaded, seed) {
        Ok(report) => report,
        Err(e) => return fail(&e),
    };
    let path = out
        .or_else(|| loaded.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("report.json"));
    finish(&report, &path)
}

fn run_in_dir(
    config: &Path,
    out: Option<PathBuf>,
    run: impl FnOnce(&LoadedConfig, &Path) -> Result<VerificationReport, QprobError>,
) -> i32 {
    let loaded = match report::load_config(config) {
        Ok(loaded) => loaded,
        Err(e) => return fail(&e),
    };
    let dir = out
        .or_else(|| output_dir(&loaded.config))
        .unwrap_or_else(|| PathBuf::from("."));
    let report = match run(&loaded, &dir) {
        Ok(report) => report,
        Err(e) => return fail(&e),
    };
    finish(&report, &dir.join("summary.json"))
}

fn output_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.output.clone()
}

fn finish(report: &VerificationReport, path: &Path) -> i32 {
    if let Err(e) = report::write_report(report, path) {
        return fail(&e);
    }
    println!(
        "{}: {} checks, {} failed -> {}",
        report.kind,
        report.summary.total,
        report.summary.failed,
        path.display()
    );
    if report.aborted {
        eprintln!("error: the run aborted mid-evolution; partial output was kept");
        3
    } else if report.summary.pass {
        0
    } else {
        1
    }
}
