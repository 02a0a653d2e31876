use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use evmagsim::engine::trace::parse_trace;
use evmagsim::report::{BatteryCsvWriter, SummaryBuilder};
use evmagsim::{parse_scenario, RunSummary, Scenario, SimTime};

#[derive(Parser)]
#[command(name = "evmagsim", version, about = "Simulate an electromagnet EV charging coupler")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and print its summary.
    Run {
        file: PathBuf,
        /// Write the trace log here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the battery curve CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Stop after this simulated time (ms).
        #[arg(long)]
        until: Option<SimTime>,
        /// Run label, echoed in the summary. The engine has no randomness.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse a scenario and report diagnostics.
    Check { file: PathBuf },
    /// Recompute the summary from a trace log.
    Report { trace: PathBuf },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Parse(Vec<String>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Parse(messages)) => {
            for m in messages {
                eprintln!("{m}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Cmd) -> Result<(), Failure> {
    match command {
        Cmd::Run {
            file,
            trace,
            csv,
            until,
            seed,
        } => {
            let scenario = load_scenario(&file)?;
            let summary = run(&scenario, trace.as_deref(), csv.as_deref(), until)?;
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{summary}").context("writing summary")?;
            if let Some(seed) = seed {
                writeln!(stdout, "seed={seed}").context("writing summary")?;
            }
            Ok(())
        }
        Cmd::Check { file } => {
            let scenario = load_scenario(&file)?;
            println!(
                "ok: {} socket(s), {} event(s), {} cell(s)",
                scenario.sockets.len(),
                scenario.events.len(),
                scenario.pack.socs.len()
            );
            Ok(())
        }
        Cmd::Report { trace } => {
            let text = read(&trace)?;
            let records = parse_trace(&text).map_err(|errs| {
                Failure::Parse(errs.iter().map(|e| format!("{}:{e}", trace.display())).collect())
            })?;
            let mut builder = SummaryBuilder::default();
            for r in &records {
                builder.push(r).context("summarizing trace")?;
            }
            println!("{}", builder.finish());
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    Ok(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = read(path)?;
    parse_scenario(&text).map_err(|errs| Failure::Parse(errs.iter().map(|e| format!("{}:{e}", path.display())).collect()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(scenario: &Scenario, trace: Option<&Path>, csv: Option<&Path>, until: Option<SimTime>) -> Result<RunSummary> {
    let mut world = scenario.build_world().context("building world")?;
    let mut trace_out = trace.map(create).transpose()?;
    let mut csv_out = match csv {
        Some(path) => Some(
            BatteryCsvWriter::new(create(path)?, scenario.pack.socs.len())
                .with_context(|| format!("writing {}", path.display()))?,
        ),
        None => None,
    };
    let limit = until.unwrap_or(SimTime::MAX);
    let mut summary = SummaryBuilder::default();
    while world.queue().peek_time().is_some_and(|t| t <= limit) {
        for record in world.step() {
            summary.push(&record)?;
            if let Some(out) = trace_out.as_mut() {
                writeln!(out, "{record}").context("writing trace")?;
            }
            if let (Some(out), Some(step)) = (csv_out.as_mut(), record.charge_step()) {
                out.push(&step).context("writing CSV")?;
            }
        }
    }
    if let Some(mut out) = trace_out {
        out.flush().context("writing trace")?;
    }
    if let Some(out) = csv_out {
        out.finish().context("writing CSV")?;
    }
    Ok(summary.finish())
}
