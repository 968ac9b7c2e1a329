mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use bravo_core::verify::Level;
use bravo_core::QuadratureConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{CliError, CliResult, Figure, SimOptions, SweepMode};
use output::{write_stdout, Format, Table};

/// Output-to-input variance ratios of birth-death queues: exact values,
/// heavy-traffic limits and simulation estimates.
#[derive(Debug, Parser)]
#[command(name = "bravo", version)]
struct Cli {
    /// Output format for tables.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,

    /// Suppress progress and summary messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
struct QueueArgs {
    /// Number of servers.
    #[arg(long)]
    s: u64,
    /// Waiting room beyond the servers.
    #[arg(long)]
    k: u64,
    /// Traffic intensity λ/(sμ).
    #[arg(long)]
    rho: f64,
}

#[derive(Debug, Args, Clone)]
struct QuadArgs {
    /// Absolute quadrature tolerance.
    #[arg(long, default_value_t = 1e-10)]
    abs_tol: f64,
    /// Relative quadrature tolerance.
    #[arg(long, default_value_t = 1e-10)]
    rel_tol: f64,
    /// Mass allowed to be truncated from semi-infinite integrals.
    #[arg(long, default_value_t = 1e-14)]
    tail_tol: f64,
}

impl QuadArgs {
    fn config(&self) -> CliResult<QuadratureConfig> {
        let c = QuadratureConfig { abs_tol: self.abs_tol, rel_tol: self.rel_tol, truncation_tail_mass: self.tail_tol };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args, Clone)]
struct SimArgs {
    /// Master seed; replication r uses streams 2r and 2r + 1.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    replications: Option<usize>,
    /// Batches per replication.
    #[arg(long)]
    batches: Option<usize>,
    /// Simulated time per batch.
    #[arg(long)]
    batch_length: Option<f64>,
    /// Simulated time discarded before the first batch.
    #[arg(long)]
    warmup: Option<f64>,
    /// Start state: `stationary` or a state index.
    #[arg(long)]
    initial_state: Option<String>,
}

impl SimArgs {
    fn options(&self, delay: bool) -> SimOptions {
        SimOptions {
            seed: self.seed,
            replications: self.replications,
            batches: self.batches,
            batch_length: self.batch_length,
            warmup: self.warmup,
            initial_state: self.initial_state.clone(),
            delay,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerifyLevel {
    Fast,
    Full,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact ratio for an M/M/s/K queue.
    Exact(QueueArgs),
    /// Heavy-traffic limit of the ratio at (β, η).
    Qed {
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long)]
        eta: f64,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Evaluate a grid of points in parallel.
    Sweep {
        #[arg(long, value_enum)]
        mode: SweepMode,
        /// CSV file with header `s,k,rho` or `beta,eta`.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Inline point, `s,k,rho` or `beta,eta`; may be repeated.
        #[arg(long = "point", allow_hyphen_values = true)]
        points: Vec<String>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        quad: QuadArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Estimate the ratio by simulation.
    Simulate {
        #[command(flatten)]
        queue: QueueArgs,
        /// Per-state marking probabilities q_1,...,q_J (thinned departures).
        #[arg(long, value_delimiter = ',')]
        marks: Option<Vec<f64>>,
        /// Also estimate the probability that an arrival waits.
        #[arg(long)]
        delay: bool,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Write the data behind the figures.
    Figures {
        #[arg(long, value_enum, default_value_t = Figure::All)]
        which: Figure,
        #[arg(long)]
        output_dir: PathBuf,
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Run the acceptance checks.
    Verify {
        #[arg(long, value_enum, default_value_t = VerifyLevel::Fast)]
        level: VerifyLevel,
        /// Multiply the critical-curve integrand by this factor (self-test of the harness).
        #[arg(long, hide = true)]
        perturb_l_eta: Option<f64>,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("BRAVO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("BRAVO_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Compute(e.to_string()))
}

fn emit(table: &Table, format: Format) -> CliResult<()> {
    write_stdout(&table.render(format)).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    let format = cli.format;
    match cli.command {
        Command::Exact(q) => emit(&commands::exact(q.s, q.k, q.rho)?, format),
        Command::Qed { beta, eta, quad } => emit(&commands::qed(beta, eta, &quad.config()?)?, format),
        Command::Sweep { mode, grid, points, output, quad, sim } => {
            let mut all = match &grid {
                Some(path) => commands::read_grid(path, mode)?,
                None => Vec::new(),
            };
            for p in &points {
                all.push(commands::parse_point(p, mode)?);
            }
            let table = commands::sweep(mode, &all, &quad.config()?, &sim.options(false))?;
            match output {
                Some(path) => std::fs::write(&path, table.render(format))
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
                None => emit(&table, format),
            }
        }
        Command::Simulate { queue, marks, delay, sim } => {
            let table = commands::simulate(queue.s, queue.k, queue.rho, marks.as_deref(), &sim.options(delay))?;
            if marks.is_some() && !cli.quiet {
                eprintln!("note: marked-departure estimates are experimental");
            }
            emit(&table, format)
        }
        Command::Figures { which, output_dir, quad } => {
            let written = commands::figures(which, &output_dir, format, &quad.config()?)?;
            if !cli.quiet {
                for path in written {
                    eprintln!("wrote {}", path.display());
                }
            }
            Ok(())
        }
        Command::Verify { level, perturb_l_eta } => {
            let level = match level {
                VerifyLevel::Fast => Level::Fast,
                VerifyLevel::Full => Level::Full,
            };
            let outcome = commands::verify(level, perturb_l_eta);
            emit(&outcome.table, format)?;
            if !cli.quiet {
                eprintln!("{}", outcome.summary);
            }
            if outcome.failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::VerificationFailed(outcome.failed))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let quiet = cli.quiet;
    let result = configure_threads().and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // The verify summary already names the failed checks.
            if !(quiet || matches!(e, CliError::VerificationFailed(_))) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
