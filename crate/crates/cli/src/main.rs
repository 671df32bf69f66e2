use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairfaucet::harness::{run_epoch_schedule, HarnessError, RunReport};
use fairfaucet::report::{
    parse_gas_log, summarize, write_allocations, write_gas_log, write_summary, ReportError, SummaryRow,
};
use fairfaucet::scenario::{expand_sweep, override_entry, parse_entries, parse_sweep, Scenario, ScenarioError};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "fairfaucet", version, about = "Run max-min fair faucet scenarios on a simulated ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write gas_log.csv, allocations.csv and summary.csv.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `key=v1,v2,...`; repeat for a cartesian product.
        #[arg(long)]
        sweep: Vec<String>,
    },
    /// Print the cost summary of an existing gas log.
    Summarize {
        gas_log: PathBuf,
        #[arg(long)]
        algorithm: String,
        #[arg(long)]
        size: u64,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0} oracle mismatch(es)")]
    Mismatch(usize),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Mismatch(_) => 1,
            CliError::Config(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(e) => e.into(),
            HarnessError::Faucet(e) => CliError::Config(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

struct Point {
    label: Option<String>,
    scenario: Scenario,
}

/// Directory-safe name for a sweep point, e.g. `n-10_seed-3`.
fn point_label(overrides: &[(String, String)]) -> String {
    overrides
        .iter()
        .map(|(k, v)| {
            let v: String = v.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
            format!("{k}-{}", v.trim_matches('-'))
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn resolve(config: &Path, seed: Option<u64>, sweep: &[String]) -> Result<Vec<Point>, CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let mut base = parse_entries(&text)?;
    if let Some(seed) = seed {
        override_entry(&mut base, "seed", &seed.to_string())?;
    }
    let axes = sweep.iter().map(|s| parse_sweep(s)).collect::<Result<Vec<_>, _>>()?;
    let mut points = Vec::new();
    for overrides in expand_sweep(&axes) {
        let mut entries = base.clone();
        for (k, v) in &overrides {
            override_entry(&mut entries, k, v)?;
        }
        let scenario = Scenario::from_entries(&entries).map_err(|e| match axes.is_empty() {
            true => CliError::from(e),
            false => CliError::Config(format!("sweep point {}: {e}", point_label(&overrides))),
        })?;
        let label = (!axes.is_empty()).then(|| point_label(&overrides));
        points.push(Point { label, scenario });
    }
    Ok(points)
}

fn size_label(s: &Scenario) -> u64 {
    s.quanta.unwrap_or(s.n)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_point(dir: &Path, s: &Scenario, r: &RunReport, summary: &[SummaryRow]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scenario.txt"), s.to_text())?;
    write_gas_log(create(&dir.join("gas_log.csv"))?, &r.gas_log())?;
    write_allocations(create(&dir.join("allocations.csv"))?, &r.allocations)?;
    write_summary(create(&dir.join("summary.csv"))?, summary)?;
    Ok(())
}

fn run(config: &Path, out: &Path, seed: Option<u64>, sweep: &[String]) -> Result<(), CliError> {
    // every point is validated before anything is written
    let points = resolve(config, seed, sweep)?;
    let mut combined = Vec::new();
    let mut mismatches = 0;
    for p in &points {
        let report = run_epoch_schedule(&p.scenario)?;
        let summary = summarize(&report.gas_log(), p.scenario.algorithm.as_str(), size_label(&p.scenario));
        let dir = match &p.label {
            Some(l) => out.join(l),
            None => out.to_path_buf(),
        };
        write_point(&dir, &p.scenario, &report, &summary)?;
        for m in &report.mismatches {
            eprintln!("{}: {m}", p.label.as_deref().unwrap_or("run"));
        }
        mismatches += report.mismatches.len();
        combined.extend(summary);
    }
    if points.len() > 1 {
        write_summary(create(&out.join("summary.csv"))?, &combined)?;
    }
    if mismatches > 0 {
        return Err(CliError::Mismatch(mismatches));
    }
    Ok(())
}

fn summarize_file(path: &Path, algorithm: &str, size: u64) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let rows = parse_gas_log(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    write_summary(&mut lock, &summarize(&rows, algorithm, size))?;
    lock.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seed, sweep } => run(config, out, *seed, sweep),
        Command::Summarize { gas_log, algorithm, size } => summarize_file(gas_log, algorithm, *size),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairfaucet: {e}");
            ExitCode::from(e.code())
        }
    }
}
