use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asyncscope::analyzer::{analyze_session, HeuristicConfig};
use asyncscope::report::{
    heuristic_name, metric_name, render_json, render_text, write_histograms, DiagnosisReport,
    DEFAULT_BINS,
};
use asyncscope::runtime::{ClockMode, ClockSource};
use asyncscope::scenarios::{registry, run_scenario_on, ScenarioError};
use asyncscope::tracelog::{read_trace_file, write_session_file};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_MISMATCH: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "asyncscope",
    version,
    about = "Profile asynchronous task execution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario, print its report and check its expectations
    Demo {
        scenario: String,
        /// Heuristic thresholds as key = value lines
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also save the recorded trace
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Analyze one or more trace files; several traces form a multi-configuration report
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write one histogram CSV per group and metric into this directory
        #[arg(long)]
        histograms: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS as u16, value_parser = clap::value_parser!(u16).range(1..))]
        bins: u16,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<HeuristicConfig, Failure> {
    match path {
        None => Ok(HeuristicConfig::default()),
        Some(p) => {
            HeuristicConfig::load(p).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", p.display())))
        }
    }
}

fn render(report: &DiagnosisReport, format: Format) -> String {
    match format {
        Format::Text => render_text(report),
        Format::Json => render_json(report),
    }
}

fn demo(
    name: &str,
    config: Option<&Path>,
    out: Option<&Path>,
    format: Format,
) -> Result<u8, Failure> {
    let cfg = load_config(config)?;
    let mode = ClockMode::from_env().map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    let outcome = run_scenario_on(name, &cfg, ClockSource::new(mode)).map_err(|e| match e {
        ScenarioError::UnknownScenario(_) => {
            fail(EXIT_USAGE, format!("{e}; see `asyncscope list`"))
        }
        e => fail(EXIT_MISMATCH, e.to_string()),
    })?;
    if let Some(path) = out {
        write_session_file(path, &outcome.session)
            .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    }
    print!("{}", render(&outcome.report, format));
    if matches!(format, Format::Text) {
        println!("\n== expectations ==");
        if outcome.checks.is_empty() {
            println!("no warnings expected, none fired: ok");
        }
        for c in &outcome.checks {
            let status = match (c.expected, c.fired) {
                (true, true) => "ok",
                (true, false) => "MISSING",
                (false, true) => "UNEXPECTED",
                (false, false) => unreachable!(),
            };
            println!(
                "{} {}: {status}",
                metric_name(c.metric),
                heuristic_name(c.heuristic)
            );
        }
    }
    if outcome.passed() {
        Ok(0)
    } else {
        eprintln!("asyncscope: scenario {name} did not meet its expectations");
        Ok(EXIT_MISMATCH)
    }
}

fn analyze(
    traces: &[PathBuf],
    config: Option<&Path>,
    format: Format,
    histograms: Option<&Path>,
    bins: usize,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let cfg = load_config(config)?;
    let mut analyses = Vec::new();
    for path in traces {
        let at = |e: &dyn std::fmt::Display| fail(EXIT_PARSE, format!("{}: {e}", path.display()));
        let session = read_trace_file(path).map_err(|e| at(&e))?;
        analyses.push(analyze_session(&session, &cfg).map_err(|e| at(&e))?);
    }
    let report = DiagnosisReport::build(&analyses, bins);
    if let Some(dir) = histograms {
        write_histograms(&report, dir)
            .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", dir.display())))?;
    }
    let text = render(&report, format);
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn list() -> u8 {
    let width = registry().iter().map(|s| s.name.len()).max().unwrap_or(0);
    for s in registry() {
        let kind = if s.control { "control" } else { "defect" };
        println!("{:<width$}  {kind:<7}  {}", s.name, s.description);
    }
    0
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Demo {
            scenario,
            config,
            out,
            format,
        } => demo(scenario, config.as_deref(), out.as_deref(), *format),
        Command::Analyze {
            traces,
            config,
            format,
            histograms,
            bins,
            out,
        } => analyze(
            traces,
            config.as_deref(),
            *format,
            histograms.as_deref(),
            usize::from(*bins),
            out.as_deref(),
        ),
        Command::List => Ok(list()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("asyncscope: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
