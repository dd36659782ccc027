use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cits_orchestrator::manager::DeploymentRequest;
use cits_orchestrator::runner::{RunError, RunOptions, Runner};
use cits_orchestrator::scenario::load_scenario;
use cits_orchestrator::store::ResourceKind;
use cits_orchestrator::trace::{assert_trace, Trace};

const EXIT_DIFF: u8 = 1;
const EXIT_SCENARIO: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "cits-orch", version, about = "Run and check demand-driven orchestration scenarios")]
struct Cli {
    /// Log filter, e.g. `warn` or `cits_orchestrator=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and optionally diff the trace against a golden file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Deliver every request to the application manager twice.
        #[arg(long)]
        duplicate_delivery: bool,
        /// Override the scenario's tick budget.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Apply one request (JSON) to the state a scenario reaches at a given tick.
    Inject {
        request: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        after_tick: u64,
    },
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match cli.command {
        Command::Run { scenario, trace_out, golden, duplicate_delivery, ticks } => {
            run(scenario, trace_out, golden, RunOptions { duplicate_delivery, tick_budget: ticks })
        }
        Command::Inject { request, scenario, after_tick } => inject(request, scenario, after_tick),
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!(
                    "{}: {} entities, {} events, {} routes, budget {}",
                    scenario.display(),
                    s.topology.entities().count(),
                    s.timeline.events.len(),
                    s.timeline.routes.len(),
                    s.tick_budget
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_SCENARIO, e),
        },
    }
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn write_trace(path: &Option<PathBuf>, trace: &Trace) -> Result<(), ExitCode> {
    match path {
        Some(p) => std::fs::write(p, trace.to_jsonl()).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", p.display()))),
        None => Ok(()),
    }
}

fn run(scenario: PathBuf, trace_out: Option<PathBuf>, golden: Option<PathBuf>, options: RunOptions) -> ExitCode {
    let s = match load_scenario(&scenario) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SCENARIO, e),
    };
    let runner = match Runner::new(s, options) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SCENARIO, e),
    };
    let trace = match runner.run() {
        Ok(t) => t,
        Err(RunError::NonQuiescence { t, source, trace }) => {
            let _ = write_trace(&trace_out, &trace);
            return fail(EXIT_RUNTIME, format!("at tick {t}: {source}"));
        }
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    if let Err(code) = write_trace(&trace_out, &trace) {
        return code;
    }
    let errors = trace.errors().count();
    println!("{} records, last step {}, {} error records", trace.len(), trace.last_step(), errors);
    if trace_out.is_none() && golden.is_none() {
        print!("{}", trace.to_jsonl());
    }
    if let Some(g) = golden {
        match assert_trace(&trace, &g) {
            Ok(report) => {
                print!("{report}");
                if !report.is_clean() {
                    return ExitCode::from(EXIT_DIFF);
                }
            }
            Err(e) => return fail(EXIT_SCENARIO, e),
        }
    }
    ExitCode::SUCCESS
}

fn inject(request: PathBuf, scenario: PathBuf, after_tick: u64) -> ExitCode {
    let req: DeploymentRequest = match std::fs::read_to_string(&request)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SCENARIO, format!("{}: {e}", request.display())),
    };
    let mut runner = match load_scenario(&scenario).map_err(|e| e.to_string()).and_then(|s| {
        Runner::new(s, RunOptions::default()).map_err(|e| e.to_string())
    }) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SCENARIO, e),
    };
    if let Err(e) = runner.run_until(after_tick) {
        return fail(EXIT_RUNTIME, e);
    }
    let mark = runner.trace().len();
    let result = match runner.submit(&req) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    println!("{}", serde_json::to_string_pretty(&result).expect("serializable"));
    for r in &runner.trace().records[mark..] {
        println!("{}", serde_json::to_string(r).expect("serializable"));
    }
    for kind in [ResourceKind::ManagedService, ResourceKind::ManagedConnection] {
        for cr in runner.store().list(kind) {
            let support: Vec<String> = cr.status.support.iter().map(ToString::to_string).collect();
            println!("{kind} {} gen {} {:?} [{}]", cr.name, cr.generation, cr.status.phase, support.join(","));
        }
    }
    ExitCode::SUCCESS
}
