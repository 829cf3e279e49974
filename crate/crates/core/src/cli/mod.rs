//! Scenario runner: `msign run <config.json>`, `msign selfcheck`,
//! `msign schema`.

pub mod config;
pub mod report;
pub mod scenarios;
pub mod selfcheck;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, P2pSettings, ScenarioConfig, ScenarioKind, SEED_ENV};
pub use report::{summary, Report, Table};
pub use scenarios::{execute, Check, Results, ScenarioError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Parser, Debug)]
#[command(
    name = "msign",
    version,
    about = "Watermark ownership scenarios for federated training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the scenario described by a JSON config
    Run {
        config: PathBuf,
        /// Write outputs here instead of the config's output_dir
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fast invariant suite
    Selfcheck,
    /// Print the JSON schema of the config file
    Schema,
}

/// Runs a loaded config and returns the report. No files are written.
pub fn run_config(config: &ScenarioConfig) -> Result<Report, ScenarioError> {
    let start = Instant::now();
    let (results, checks) = execute(config)?;
    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        results,
        checks,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn config_schema() -> schemars::Schema {
    schemars::schema_for!(ScenarioConfig)
}

pub fn write_outputs(report: &Report, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(report).map_err(std::io::Error::other)?;
    fs::write(dir.join(REPORT_FILE), json)?;
    let mut csv = Vec::new();
    summary(&report.results)
        .write_csv(&mut csv)
        .map_err(std::io::Error::other)?;
    fs::write(dir.join(SUMMARY_FILE), csv)
}

fn run_command(path: &Path, out: Option<PathBuf>) -> u8 {
    let config =
        match ScenarioConfig::load(path).and_then(|c| c.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        };
    let report = match run_config(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("scenario failed: {e}");
            return EXIT_FAILED;
        }
    };
    let dir = out.unwrap_or_else(|| config.output_dir.clone());
    if let Err(e) = write_outputs(&report, &dir) {
        eprintln!("cannot write outputs to {}: {e}", dir.display());
        return EXIT_FAILED;
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!(
        "wrote {} and {}",
        dir.join(REPORT_FILE).display(),
        dir.join(SUMMARY_FILE).display()
    );
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn selfcheck_command() -> u8 {
    let fault = std::env::var_os(selfcheck::FAULT_ENV).is_some();
    let lines = selfcheck::run(fault);
    for l in &lines {
        println!(
            "{} {} ({:.0} ms): {}",
            if l.passed { "ok  " } else { "FAIL" },
            l.name,
            l.elapsed_ms,
            l.detail
        );
    }
    if lines.iter().all(|l| l.passed) {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    ExitCode::from(match cli.command {
        Command::Run { config, out } => run_command(&config, out),
        Command::Selfcheck => selfcheck_command(),
        Command::Schema => {
            println!(
                "{}",
                serde_json::to_string_pretty(&config_schema()).expect("schema serializes")
            );
            EXIT_OK
        }
    })
}
