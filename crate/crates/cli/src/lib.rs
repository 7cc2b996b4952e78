//! Command-line front end of `lpsnet`. [`run`] parses arguments, executes
//! one subcommand and returns the process exit code:
//! 0 ok, 1 usage, 2 model error, 3 numeric failure.

pub mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lpsnet::benchmark;
use lpsnet::sim::SimConfig;
use lpsnet::{Error, Registry};

#[derive(Parser)]
#[command(name = "lpsnet", version, about = "Two-layer processor-sharing queueing networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file (TOML).
    model: PathBuf,
    /// Apply the named [[scenario]] block.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Independent replications.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Completed jobs per replication, warmup included.
    #[arg(long, default_value_t = 1_000_000)]
    jobs: u64,
    /// Fraction of each replication discarded as warmup.
    #[arg(long, default_value_t = 0.2)]
    warmup: f64,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Assert server discipline and work conservation at every event.
    #[arg(long)]
    check_invariants: bool,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            replications: self.reps,
            horizon: self.jobs,
            warmup_fraction: self.warmup,
            confidence: self.confidence,
            check_invariants: self.check_invariants,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form quantities and the heavy-traffic approximation, as JSON.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        /// Report the uncorrected delay probability and sojourn time as EV/p_d.
        #[arg(long)]
        raw: bool,
    },
    /// Integrate the fluid ODE and print the trajectory as CSV.
    Fluid {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial state, comma separated, one value per node (default: empty network).
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
        /// Rescale arrival rates so the load is exactly 1.
        #[arg(long)]
        critical: bool,
        /// Use (1 - load) K servers per node, the heavy-traffic scaling.
        #[arg(long)]
        virtual_servers: bool,
        /// Fixed RK4 step (default chosen from the rates and horizon).
        #[arg(long)]
        step: Option<f64>,
        /// Write every n-th step.
        #[arg(long, default_value_t = 100)]
        stride: usize,
    },
    /// Discrete-event simulation; prints estimates as JSON.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Write a per-job CSV trace of the first replication.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Mean sojourn time from a named estimator, as JSON.
    Estimate {
        /// Model file (TOML); not needed with --list.
        #[arg(required_unless_present = "list")]
        model: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "heavy-traffic")]
        method: String,
        /// List the available estimators.
        #[arg(long)]
        list: bool,
        /// Per-node truncation level for the ctmc estimator.
        #[arg(long, default_value_t = 60)]
        truncation: usize,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Reproduce the 16-row tandem benchmark table.
    Validate {
        /// Rows to run (1-16), comma separated; all by default.
        #[arg(long, value_delimiter = ',')]
        rows: Vec<usize>,
        /// Only check the approximation column.
        #[arg(long)]
        no_sim: bool,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Exit with status 3 when the report fails.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        sim: SimArgs,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numeric() => 3,
        Error::InvalidArgument(_) | Error::UnknownEstimator(_) => 1,
        _ => 2,
    }
}

fn emit(out: &mut dyn Write, text: &str) {
    // A closed pipe is not worth a panic.
    let _ = out.write_all(text.as_bytes());
}

fn json(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("results serialize")
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> lpsnet::Result<u8> {
    match cli.command {
        Command::Analyze { model, raw } => {
            let m = commands::load_model(&model.model, model.scenario.as_deref())?;
            emit(out, &format!("{}\n", json(&commands::analyze(&m, raw)?)));
        }
        Command::Fluid { model, x0, horizon, critical, virtual_servers, step, stride } => {
            let m = commands::load_model(&model.model, model.scenario.as_deref())?;
            let args = commands::FluidArgs { x0, horizon, critical, virtual_servers, step, stride };
            let (csv, warnings) = commands::fluid(&m, &args)?;
            for w in warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            emit(out, &csv);
        }
        Command::Simulate { model, sim, trace } => {
            let m = commands::load_model(&model.model, model.scenario.as_deref())?;
            emit(out, &format!("{}\n", json(&commands::simulate(&m, &sim.config(), trace.as_deref())?)));
        }
        Command::Estimate { model, scenario, method, list, truncation, sim } => {
            let registry = Registry::with_defaults(sim.config(), truncation);
            if list {
                emit(out, &commands::list_methods(&registry));
                return Ok(0);
            }
            let path = model.expect("clap requires a model without --list");
            let m = commands::load_model(&path, scenario.as_deref())?;
            emit(out, &format!("{}\n", json(&commands::estimate(&m, &registry, &method)?)));
        }
        Command::Validate { rows, no_sim, json: as_json, strict, sim } => {
            let config = sim.config();
            let report = commands::validate(&rows, (!no_sim).then_some(&config))?;
            if as_json {
                emit(out, &format!("{}\n", json(&serde_json::to_value(&report).expect("report serializes"))));
            } else {
                emit(out, &benchmark::render(&report));
            }
            if strict && !report.passed {
                return Ok(3);
            }
        }
    }
    Ok(0)
}

/// Runs the command line `args` (program name first), writing results to
/// `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                return 1;
            }
            emit(out, &text);
            return 0;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
