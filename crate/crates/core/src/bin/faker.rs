use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use faker_core::harness::{
    emit_report, load_config, oracle_check_with, read_reports, render_report, run, sweep, AxisSpec, CellFailure,
    Mutation, Overrides, ReportFormat,
};
use faker_core::sim::MetricsReport;
use faker_core::{Error, Result};

const DEFAULT_OUT: &str = "faker-out";

#[derive(Parser)]
#[command(name = "faker", version, about = "Similarity-metric poisoning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report.json and report.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary one config field over a list of values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `name=v1,v2,...` with name one of n, m, c, dirichlet, rounds, seed, t, defense, attack, margin.
        #[arg(long)]
        axis: AxisSpec,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every registered oracle.
    OracleCheck {
        /// Write the full report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MutationArg::None)]
        mutation: MutationArg,
    },
    /// Re-emit saved JSON reports.
    Report {
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MutationArg {
    None,
    LambdaOffByOne,
}

fn settings(seed: Option<u64>, out: Option<PathBuf>) -> Result<(Overrides, PathBuf)> {
    let o = Overrides { seed, out_dir: out }.or(Overrides::from_env()?);
    let dir = o.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok((o, dir))
}

fn write_both(reports: &[MetricsReport], dir: &Path, stem: &str) -> Result<()> {
    emit_report(reports, ReportFormat::Json, &dir.join(format!("{stem}.json")))?;
    emit_report(reports, ReportFormat::Csv, &dir.join(format!("{stem}.csv")))
}

fn summary(r: &MetricsReport) -> String {
    format!(
        "{} vs {}: ER {:.4} SR {:.2} TC {:.3e}s",
        r.config.attack_label(),
        r.config.defense.kind.name(),
        r.er,
        r.sr,
        r.tc_seconds
    )
}

fn failures_json(failures: &[&CellFailure]) -> String {
    serde_json::to_string(failures).expect("failures serialize")
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let (o, dir) = settings(seed, out)?;
            let mut cfg = load_config(&config)?;
            o.apply(&mut cfg);
            let report = run(&cfg)?;
            println!("{}", summary(&report));
            write_both(&[report], &dir, "report")?;
            Ok(true)
        }
        Command::Sweep { config, axis, seed, out } => {
            let (o, dir) = settings(seed, out)?;
            let mut cfg = load_config(&config)?;
            o.apply(&mut cfg);
            let cells = sweep(&cfg, &axis);
            let mut done = Vec::new();
            let mut failed = Vec::new();
            for (v, c) in axis.values.iter().zip(&cells) {
                match c {
                    Ok(r) => {
                        println!("{}={v}: {}", axis.axis.name(), summary(r));
                        done.push(r.clone());
                    }
                    Err(f) => failed.push(f),
                }
            }
            if !done.is_empty() {
                write_both(&done, &dir, "sweep")?;
            }
            if failed.is_empty() {
                return Ok(true);
            }
            let list = failures_json(&failed);
            faker_core::harness::write_atomic(&dir.join("failures.json"), list.as_bytes())?;
            eprintln!("{list}");
            Ok(false)
        }
        Command::OracleCheck { out, mutation } => {
            let m = match mutation {
                MutationArg::None => Mutation::None,
                MutationArg::LambdaOffByOne => Mutation::FltrustLambdaOffByOne,
            };
            let report = oracle_check_with(m);
            for e in &report.entries {
                let verdict = if e.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {:<32} {:>8.3}s  {}", e.name, e.seconds, e.detail);
            }
            if let Some(f) = report.first_failure() {
                let replay = f.replay.as_ref().map_or("null".to_string(), |v| v.to_string());
                eprintln!("first failure: {} replay {}", f.name, replay);
            }
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                faker_core::harness::write_atomic(&path, text.as_bytes())?;
            }
            Ok(report.passed())
        }
        Command::Report { format, input, out } => {
            let mut reports = Vec::new();
            for p in &input {
                reports.extend(read_reports(p)?);
            }
            match out {
                Some(path) => emit_report(&reports, format.into(), &path)?,
                None => {
                    let bytes = render_report(&reports, format.into())?;
                    print!("{}", String::from_utf8_lossy(&bytes));
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
