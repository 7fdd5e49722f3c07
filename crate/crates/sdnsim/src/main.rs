use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdnsim::canned;
use sdnsim::scenario::Scenario;
use sdnsim::sim::run_simulation;
use sdnsim::topology::Topology;

const EXIT_INVALID: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Deterministic simulator for a publish/subscribe-driven software-defined
/// IoT network: topics and content filters on top, flow tables underneath.
#[derive(Parser)]
#[command(name = "sdnsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit the run report as JSON on stdout.
    Run(RunArgs),
    /// Check a topology (and optionally a scenario) without running it.
    Validate(ValidateArgs),
    /// List the built-in scenario/topology pairs.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Topology JSON file (pair with --scenario).
    #[arg(long, requires = "scenario", conflicts_with = "canned")]
    topology: Option<PathBuf>,
    /// Scenario JSON file (pair with --topology).
    #[arg(long, requires = "topology", conflicts_with = "canned")]
    scenario: Option<PathBuf>,
    /// Name of a built-in pair; see `list-scenarios`.
    #[arg(long)]
    canned: Option<String>,
    /// RNG seed. The same seed and inputs reproduce the identical run.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the dispatched-event trace to this file as NDJSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the report to this file instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Topology JSON file.
    #[arg(long)]
    topology: PathBuf,
    /// Scenario JSON file to check against the topology.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run_cmd(&args),
        Command::Validate(args) => validate_cmd(&args),
        Command::ListScenarios => {
            for entry in canned::ALL {
                println!("{:<24} {}", entry.name, entry.summary);
            }
            ExitCode::SUCCESS
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_inputs(args: &RunArgs) -> Result<(Topology, Scenario), String> {
    if let Some(name) = &args.canned {
        let entry = canned::find(name).ok_or_else(|| {
            format!("unknown canned scenario `{name}`; `sdnsim list-scenarios` shows the choices")
        })?;
        return entry.load().map_err(|e| e.to_string());
    }
    match (&args.topology, &args.scenario) {
        (Some(topo_path), Some(scen_path)) => {
            let topo = Topology::from_json(&read(topo_path)?).map_err(|e| e.to_string())?;
            let scenario =
                Scenario::from_json(&read(scen_path)?, &topo).map_err(|e| e.to_string())?;
            Ok((topo, scenario))
        }
        _ => Err("pass --topology with --scenario, or --canned <name>".into()),
    }
}

fn run_cmd(args: &RunArgs) -> ExitCode {
    let (topo, scenario) = match load_inputs(args) {
        Ok(pair) => pair,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_INVALID);
        }
    };

    let trace_writer: Option<Box<dyn Write>> = match &args.trace {
        Some(path) => match File::create(path) {
            Ok(f) => Some(Box::new(BufWriter::new(f))),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_INVALID);
            }
        },
        None => None,
    };

    let report = match run_simulation(&topo, &scenario, args.seed, trace_writer) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };

    eprintln!(
        "run complete: {} events, {} deliveries, {} audit records, trace {}",
        report.events_dispatched,
        report.deliveries.len(),
        report.audits.len(),
        report.trace_hash
    );
    if !report.conservation_violations.is_empty() {
        eprintln!(
            "warning: {} conservation violations",
            report.conservation_violations.len()
        );
    }

    let json = report.to_json_pretty();
    match &args.report {
        Some(path) => {
            if let Err(e) = fs::write(path, json + "\n") {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_INVALID);
            }
        }
        None => println!("{json}"),
    }
    ExitCode::SUCCESS
}

fn validate_cmd(args: &ValidateArgs) -> ExitCode {
    let topo = match read(&args.topology)
        .and_then(|t| Topology::from_json(&t).map_err(|e| e.to_string()))
    {
        Ok(topo) => topo,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    println!(
        "topology ok: {} switches, {} devices, {} writers, {} readers",
        topo.switches.len(),
        topo.devices.len(),
        topo.writers.len(),
        topo.readers.len()
    );

    if let Some(scen_path) = &args.scenario {
        let scenario = match read(scen_path)
            .and_then(|s| Scenario::from_json(&s, &topo).map_err(|e| e.to_string()))
        {
            Ok(s) => s,
            Err(msg) => {
                eprintln!("error: {msg}");
                return ExitCode::from(EXIT_INVALID);
            }
        };
        println!(
            "scenario ok: {} actions, horizon {} us",
            scenario.actions.len(),
            scenario.horizon_us()
        );
    }
    ExitCode::SUCCESS
}
