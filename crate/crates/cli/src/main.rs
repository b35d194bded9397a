mod record;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use decoy_core::keyrate::{format_table, sweep_rows, write_csv};
use decoy_core::oracle::{evaluate_scenario, run_suite, Scenario, SuiteConfig, VerdictStatus};
use decoy_core::sim::{empirical_subclass_rates, two_block_ratio, PatternSpec, SimParams};
use decoy_core::{Error, SweepRow, SweepSettings, T1Convention};

use crate::record::{ExperimentRecord, RecordError};

const EXIT_PARSE: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_ORACLE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "decoy",
    version,
    about = "Decoy-state single-photon bounds and key rates under source errors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the relative intensity error over an experiment record.
    Analyze {
        record: PathBuf,
        #[arg(long, value_enum, default_value_t = ConventionArg::Darkcorrected)]
        convention: ConventionArg,
        /// Write the sweep as CSV. With `--convention both` one file per
        /// convention is written, suffixed `_darkcorrected` and `_caption`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Simulate a source and channel and summarize the counts.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        /// Overrides the seed in the parameter file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full tally as JSON.
        #[arg(long)]
        tally: Option<PathBuf>,
    },
    /// Check the error-tolerant bounds against simulated ground truth.
    Verify {
        #[arg(long, default_value_t = 100)]
        scenarios: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluate a single scenario from a JSON file instead.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Pulses per scenario.
        #[arg(long)]
        pulses: Option<u64>,
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        /// Write one JSON verdict per line.
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    Caption,
    Darkcorrected,
    Both,
}

impl ConventionArg {
    fn conventions(self) -> Vec<T1Convention> {
        match self {
            Self::Caption => vec![T1Convention::CaptionRatio],
            Self::Darkcorrected => vec![T1Convention::DarkCountCorrected],
            Self::Both => vec![T1Convention::DarkCountCorrected, T1Convention::CaptionRatio],
        }
    }
}

/// Failure classes mapped to the process exit code.
enum Failure {
    Parse(anyhow::Error),
    Precondition(anyhow::Error),
    Oracle(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Parse(_) => EXIT_PARSE,
            Self::Precondition(_) => EXIT_PRECONDITION,
            Self::Oracle(_) => EXIT_ORACLE,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Precondition(e.into())
    }
}

fn parse_failure<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Parse(e.into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Parse)?;
    serde_json::from_str(&text)
        .with_context(|| format!("malformed {}", path.display()))
        .map_err(Failure::Parse)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Parse)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn analyze(path: &Path, convention: ConventionArg, csv: Option<&Path>) -> Result<(), Failure> {
    let record = ExperimentRecord::load(path).map_err(|e| match e {
        RecordError::Invalid(_) => Failure::Precondition(e.into()),
        _ => Failure::Parse(e.into()),
    })?;
    let rates = record.rates()?;
    let deltas = record.deltas();
    println!("{}", record.name);
    println!(
        "M = {:.6e} pulses, S = {:e}, S' = {:e}, S0 = {:e}, E' = {}",
        record.pulses(),
        record.s,
        record.s_prime,
        record.s0,
        record.qber_signal
    );
    let mut violations = 0;
    let mut insecure = 0;
    let conventions = convention.conventions();
    for &conv in &conventions {
        let settings = SweepSettings::new(record.mu, record.mu_prime, record.repetition_hz, conv);
        let mut rows: Vec<SweepRow> = Vec::new();
        let mut notes = String::new();
        for (delta, row) in deltas.iter().zip(sweep_rows(&rates, &deltas, &settings)) {
            match row {
                Ok(r) => {
                    insecure += usize::from(!r.is_secure());
                    rows.push(r);
                }
                Err(Error::ConditionViolated { k }) => {
                    violations += 1;
                    let _ = writeln!(
                        notes,
                        "{:>7.2}% precondition violated: source ordering fails at k = {k}",
                        100.0 * delta
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }
        println!("\nt1 convention: {}", conv.name());
        print!("{}{}", format_table(&rows), notes);
        if let Some(csv) = csv {
            let target = if conventions.len() > 1 {
                suffixed(csv, conv.name())
            } else {
                csv.to_path_buf()
            };
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).map_err(parse_failure)?;
            write_file(&target, &buf)?;
        }
    }
    if insecure > 0 {
        eprintln!("warning: {insecure} row(s) yield no secure key");
    }
    if violations > 0 {
        return Err(Failure::Precondition(anyhow::anyhow!(
            "{violations} row(s) violate the source ordering condition"
        )));
    }
    Ok(())
}

fn simulate(
    params_path: &Path,
    seed: Option<u64>,
    tally_path: Option<&Path>,
) -> Result<(), Failure> {
    let params: SimParams = read_json(params_path)?;
    let seed = seed.unwrap_or(params.seed);
    let start = Instant::now();
    let tally = params.run(seed)?;
    let elapsed = start.elapsed();
    let rates = tally.observed_rates()?;
    println!("pulses         {}", tally.pulses);
    println!("seed           {seed}");
    println!("S  (decoy)     {:.6e}", rates.s);
    println!("S' (signal)    {:.6e}", rates.s_prime);
    println!("S0 (vacuum)    {:.6e}", rates.s0);
    let sub = empirical_subclass_rates(&tally);
    let fmt = |e: Option<decoy_core::sim::RateEstimate>| match e {
        Some(e) => format!("{:.6e} +- {:.2e}", e.rate, e.sigma),
        None => "n/a".into(),
    };
    println!("s1  (decoy)    {}", fmt(sub.decoy(1)));
    println!("s'1 (signal)   {}", fmt(sub.signal(1)));
    match (sub.decoy(1), sub.signal(1)) {
        (Some(d), Some(s)) if s.rate > 0.0 => {
            let (r, sigma) = d.ratio(&s);
            println!("s1/s'1         {r:.6} +- {sigma:.6}");
        }
        _ => println!("s1/s'1         n/a (no single-photon counts)"),
    }
    match &params.pattern {
        PatternSpec::TwoBlock {
            mu,
            mu_prime,
            strength,
            ..
        } => println!(
            "analytic       {:.6}",
            two_block_ratio(*mu, *mu_prime, *strength)
        ),
        PatternSpec::Exact { .. } => println!("analytic       1"),
        PatternSpec::PerPulse { .. } => {}
    }
    println!("elapsed        {:.2} s", elapsed.as_secs_f64());
    if let Some(path) = tally_path {
        let json = serde_json::to_vec_pretty(&tally).map_err(parse_failure)?;
        write_file(path, &json)?;
    }
    Ok(())
}

fn verify(
    scenarios: usize,
    seed: u64,
    params: Option<&Path>,
    pulses: Option<u64>,
    sigma: f64,
    jsonl: Option<&Path>,
) -> Result<(), Failure> {
    if let Some(path) = params {
        let mut scenario: Scenario = read_json(path)?;
        if let Some(m) = pulses {
            scenario.pulses = m;
        }
        let verdict = evaluate_scenario(&scenario, sigma)?;
        if let Some(out) = jsonl {
            write_file(out, format!("{}\n", verdict.json_line()).as_bytes())?;
        }
        return match verdict.status {
            VerdictStatus::Pass => {
                println!(
                    "scenario {}: pass (worst slack {:.2} sigma)",
                    scenario.id, verdict.slack
                );
                Ok(())
            }
            VerdictStatus::Fail => {
                println!(
                    "scenario {}: FAIL (worst slack {:.2} sigma)",
                    scenario.id, verdict.slack
                );
                Err(Failure::Oracle(format!("scenario {} failed", scenario.id)))
            }
            VerdictStatus::PreconditionRejected { k } => {
                println!(
                    "scenario {}: precondition rejected (ordering fails at k = {k})",
                    scenario.id
                );
                Err(Failure::Precondition(anyhow::anyhow!(
                    "declared windows violate the source ordering condition"
                )))
            }
        };
    }
    if scenarios == 0 {
        return Err(Failure::Precondition(anyhow::anyhow!(
            "--scenarios must be at least 1"
        )));
    }
    let config = SuiteConfig {
        scenarios,
        seed,
        pulses: pulses.unwrap_or(10_000_000),
        sigma_allowance: sigma,
    };
    let start = Instant::now();
    let report = run_suite(&config)?;
    let elapsed = start.elapsed();
    if let Some(out) = jsonl {
        write_file(out, report.json_lines().as_bytes())?;
    }
    for v in report
        .verdicts
        .iter()
        .filter(|v| v.status == VerdictStatus::Fail)
    {
        println!(
            "FAIL scenario {} (worst slack {:.2} sigma)",
            v.scenario_id, v.slack
        );
    }
    println!("scenarios        {}", report.verdicts.len());
    println!("pulses each      {}", config.pulses);
    println!("pass rate        {:.1}%", 100.0 * report.pass_rate());
    println!("failures         {}", report.failures());
    println!("worst slack      {:.2} sigma", report.worst_slack());
    println!("vacuum coverage  {:.1}%", 100.0 * report.vacuum_coverage());
    println!(
        "rejected draws   {} of {}",
        report.rejected_draws, report.draws
    );
    println!("elapsed          {:.1} s", elapsed.as_secs_f64());
    if report.failures() > 0 {
        return Err(Failure::Oracle(format!(
            "{} scenario(s) failed",
            report.failures()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Analyze {
            record,
            convention,
            csv,
        } => analyze(record, *convention, csv.as_deref()),
        Command::Simulate {
            params,
            seed,
            tally,
        } => simulate(params, *seed, tally.as_deref()),
        Command::Verify {
            scenarios,
            seed,
            params,
            pulses,
            sigma,
            jsonl,
        } => verify(
            *scenarios,
            *seed,
            params.as_deref(),
            *pulses,
            *sigma,
            jsonl.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Parse(e) | Failure::Precondition(e) => eprintln!("error: {e:#}"),
                Failure::Oracle(msg) => eprintln!("error: {msg}"),
            }
            ExitCode::from(f.code())
        }
    }
}
