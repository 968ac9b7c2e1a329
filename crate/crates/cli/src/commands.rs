use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use bravo_core::chain::{
    build_mmsk, d_pi_lower_bound, d_pi_marked, evaluate, stationary, MarkedNormalization, MmskParams,
};
use bravo_core::qed::{self, d0, d_beta_eta, delay_prob_limit, Branch, QuadratureConfig, BETA_SWITCH};
use bravo_core::sim::{empirical_delay_prob, simulate_marked_ratio, simulate_ratio, EstimateQuality, InitialState, SimConfig};
use bravo_core::verify::{self, Hooks, Level, Outcome};
use bravo_core::Error;
use rayon::prelude::*;
use serde::Deserialize;

use crate::output::{Cell, Format, Table};

/// Upper bound on `s·(1 + K)` for exact sweep points.
pub const EXACT_WORK_LIMIT: u64 = 10_000_000;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
    Compute(String),
    VerificationFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
            CliError::Compute(_) | CliError::VerificationFailed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Compute(m) => write!(f, "computation failed: {m}"),
            CliError::VerificationFailed(names) => write!(f, "verification failed: {}", names.join("; ")),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::NonConstantBirths { .. } | Error::CriticalBeta(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Compute(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn exact_fields(s: u64, k: u64, rho: f64) -> CliResult<Vec<(&'static str, Cell)>> {
    let chain = build_mmsk(MmskParams::new(s, k, rho)?)?;
    let (dist, out) = evaluate(&chain)?;
    Ok(vec![
        ("s", s.into()),
        ("k", k.into()),
        ("rho", rho.into()),
        ("states", chain.num_states_above_zero().into()),
        ("pi_top", dist.top().into()),
        ("departure_rate", out.departure_rate.into()),
        ("ratio", out.ratio.into()),
        ("lower_bound", d_pi_lower_bound(&dist).into()),
    ])
}

pub fn exact(s: u64, k: u64, rho: f64) -> CliResult<Table> {
    Ok(Table::record(exact_fields(s, k, rho)?))
}

pub fn qed_fields(beta: f64, eta: f64, config: &QuadratureConfig) -> CliResult<Vec<(&'static str, Cell)>> {
    if !beta.is_finite() || !eta.is_finite() {
        return Err(CliError::Input(format!("beta and eta must be finite, got ({beta}, {eta})")));
    }
    // η = 0 is only meaningful on the critical branch, where the closed form is finite.
    if eta == 0.0 && beta.abs() < BETA_SWITCH {
        return Ok(vec![
            ("beta", beta.into()),
            ("eta", eta.into()),
            ("branch", "critical".into()),
            ("h", Cell::Missing),
            ("f", Cell::Missing),
            ("g", Cell::Missing),
            ("ratio", d0(0.0)?.into()),
            ("delay_prob_limit", 0.0.into()),
        ]);
    }
    if eta <= 0.0 {
        return Err(CliError::Input(format!("eta must be positive, got {eta}")));
    }
    let e = d_beta_eta(eta, beta, config)?;
    let branch = match e.branch {
        Branch::Critical => "critical",
        Branch::Noncritical => "noncritical",
    };
    Ok(vec![
        ("beta", beta.into()),
        ("eta", eta.into()),
        ("branch", branch.into()),
        ("h", e.h_value.into()),
        ("f", e.f_value.into()),
        ("g", e.g_value.into()),
        ("ratio", e.ratio.into()),
        ("delay_prob_limit", delay_prob_limit(eta, beta)?.into()),
    ])
}

pub fn qed(beta: f64, eta: f64, config: &QuadratureConfig) -> CliResult<Table> {
    Ok(Table::record(qed_fields(beta, eta, config)?))
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub seed: u64,
    pub replications: Option<usize>,
    pub batches: Option<usize>,
    pub batch_length: Option<f64>,
    pub warmup: Option<f64>,
    pub initial_state: Option<String>,
    pub delay: bool,
}

fn sim_config(chain: &bravo_core::BirthDeathChain, opts: &SimOptions) -> CliResult<SimConfig> {
    let mut c = SimConfig::for_chain(chain, opts.seed)?;
    if let Some(r) = opts.replications {
        c.replications = r;
    }
    if let Some(b) = opts.batches {
        c.batch_count = b;
    }
    if let Some(l) = opts.batch_length {
        c.batch_length = l;
    }
    if let Some(w) = opts.warmup {
        c.warmup_time = w;
    }
    if let Some(state) = &opts.initial_state {
        c.initial_state = match state.as_str() {
            "stationary" => InitialState::StationarySampled,
            x => InitialState::Fixed(
                x.parse().map_err(|_| CliError::Input(format!("initial state must be 'stationary' or an integer, got '{x}'")))?,
            ),
        };
    }
    c.validate(chain)?;
    Ok(c)
}

pub fn simulate_fields(
    s: u64,
    k: u64,
    rho: f64,
    marks: Option<&[f64]>,
    opts: &SimOptions,
) -> CliResult<Vec<(&'static str, Cell)>> {
    let chain = build_mmsk(MmskParams::new(s, k, rho)?)?;
    let config = sim_config(&chain, opts)?;
    let (est, reference) = match marks {
        Some(q) => (
            simulate_marked_ratio(&chain, q, &config)?,
            d_pi_marked(&chain, q, MarkedNormalization::CountedDepartures)?.ratio,
        ),
        None => (simulate_ratio(&chain, &config)?, evaluate(&chain)?.1.ratio),
    };
    let quality = match &est.quality {
        EstimateQuality::Ok => "ok".to_string(),
        EstimateQuality::LowQuality(reason) => format!("low: {reason}"),
    };
    let mut fields = vec![
        ("s", s.into()),
        ("k", k.into()),
        ("rho", rho.into()),
        ("marked", marks.is_some().into()),
        ("ratio_estimate", est.ratio_estimate.into()),
        ("standard_error", est.standard_error.into()),
        ("ci95_low", est.ci95.0.into()),
        ("ci95_high", est.ci95.1.into()),
        ("formula_ratio", reference.into()),
        ("total_departures", est.total_departures.into()),
        ("mean_rate_estimate", est.mean_rate_estimate.into()),
        ("mean_rate_standard_error", est.mean_rate_standard_error.into()),
        ("master_seed", est.seed_provenance.master_seed.into()),
        ("replications", est.seed_provenance.replications.into()),
        ("batch_count", config.batch_count.into()),
        ("batch_length", config.batch_length.into()),
        ("warmup_time", config.warmup_time.into()),
        ("quality", quality.into()),
        ("experimental", marks.is_some().into()),
    ];
    if opts.delay {
        let p = empirical_delay_prob(&chain, s as usize, &config)?;
        let exact = stationary(&chain)?.tail_mass(s as usize);
        fields.push(("delay_prob_estimate", p.estimate.into()));
        fields.push(("delay_prob_standard_error", p.standard_error.into()));
        fields.push(("delay_prob_exact", exact.into()));
    }
    Ok(fields)
}

pub fn simulate(s: u64, k: u64, rho: f64, marks: Option<&[f64]>, opts: &SimOptions) -> CliResult<Table> {
    Ok(Table::record(simulate_fields(s, k, rho, marks, opts)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepMode {
    Exact,
    Qed,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPoint {
    Queue { s: u64, k: u64, rho: f64 },
    Limit { beta: f64, eta: f64 },
}

#[derive(Debug, Deserialize)]
struct QueueRow {
    s: u64,
    k: u64,
    rho: f64,
}

#[derive(Debug, Deserialize)]
struct LimitRow {
    beta: f64,
    eta: f64,
}

/// Reads a CSV grid with header `s,k,rho` (exact, simulate) or `beta,eta` (qed).
pub fn read_grid(path: &Path, mode: SweepMode) -> CliResult<Vec<GridPoint>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let bad = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut points = Vec::new();
    match mode {
        SweepMode::Qed => {
            for row in reader.deserialize::<LimitRow>() {
                let r = row.map_err(bad)?;
                points.push(GridPoint::Limit { beta: r.beta, eta: r.eta });
            }
        }
        SweepMode::Exact | SweepMode::Simulate => {
            for row in reader.deserialize::<QueueRow>() {
                let r = row.map_err(bad)?;
                points.push(GridPoint::Queue { s: r.s, k: r.k, rho: r.rho });
            }
        }
    }
    Ok(points)
}

/// Parses an inline point `s,k,rho` or `beta,eta`.
pub fn parse_point(text: &str, mode: SweepMode) -> CliResult<GridPoint> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || CliError::Input(format!("cannot parse grid point '{text}'"));
    match (mode, parts.as_slice()) {
        (SweepMode::Qed, [b, e]) => Ok(GridPoint::Limit {
            beta: b.parse().map_err(|_| bad())?,
            eta: e.parse().map_err(|_| bad())?,
        }),
        (SweepMode::Exact | SweepMode::Simulate, [s, k, r]) => Ok(GridPoint::Queue {
            s: s.parse().map_err(|_| bad())?,
            k: k.parse().map_err(|_| bad())?,
            rho: r.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

pub fn sweep(
    mode: SweepMode,
    points: &[GridPoint],
    config: &QuadratureConfig,
    sim: &SimOptions,
) -> CliResult<Table> {
    if points.is_empty() {
        return Err(CliError::Input("the sweep grid is empty".into()));
    }
    for p in points {
        match (mode, p) {
            (SweepMode::Exact, GridPoint::Queue { s, k, .. }) => {
                let work = s.saturating_mul(k.saturating_add(1));
                if work > EXACT_WORK_LIMIT {
                    return Err(CliError::Input(format!(
                        "point (s={s}, K={k}) exceeds the exact work bound s(1+K) <= {EXACT_WORK_LIMIT}"
                    )));
                }
            }
            (SweepMode::Qed, GridPoint::Limit { .. }) | (SweepMode::Simulate, GridPoint::Queue { .. }) => {}
            _ => return Err(CliError::Input("grid point does not match the sweep mode".into())),
        }
    }
    // Points run concurrently; `collect` keeps grid order.
    let rows: Vec<CliResult<Vec<(&'static str, Cell)>>> = points
        .par_iter()
        .map(|p| match *p {
            GridPoint::Queue { s, k, rho } if mode == SweepMode::Exact => exact_fields(s, k, rho),
            GridPoint::Queue { s, k, rho } => simulate_fields(s, k, rho, None, sim),
            GridPoint::Limit { beta, eta } => qed_fields(beta, eta, config),
        })
        .collect();
    let mut table: Option<Table> = None;
    for row in rows {
        let fields = row?;
        let t = table.get_or_insert_with(|| Table::new(fields.iter().map(|(h, _)| *h).collect()));
        t.push(fields.into_iter().map(|(_, c)| c).collect());
    }
    Ok(table.expect("grid is non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    All,
}

pub fn fig1() -> CliResult<Table> {
    // The grid plus the closed-form minimiser, kept in η order.
    let argmin = qed::eta_star().argmin;
    let mut etas: Vec<f64> = (0..=500u32).map(|k| k as f64 / 100.0).collect();
    etas.push(argmin);
    etas.sort_by(f64::total_cmp);
    let mut t = Table::new(vec!["eta", "d0"]);
    for eta in etas {
        t.push(vec![eta.into(), d0(eta)?.into()]);
    }
    Ok(t)
}

pub const FIG2_ETAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

pub fn fig2(config: &QuadratureConfig) -> CliResult<Table> {
    let grid: Vec<(f64, f64)> = FIG2_ETAS
        .iter()
        .flat_map(|&eta| (0..=240).map(move |k| ((k as f64 - 120.0) / 20.0, eta)))
        .collect();
    let values: Vec<CliResult<f64>> = grid
        .par_iter()
        .map(|&(beta, eta)| Ok(d_beta_eta(eta, beta, config)?.ratio))
        .collect();
    let mut t = Table::new(vec!["beta", "eta", "d"]);
    for ((beta, eta), v) in grid.into_iter().zip(values) {
        t.push(vec![beta.into(), eta.into(), v?.into()]);
    }
    Ok(t)
}

pub const FIG3_SERVERS: [u64; 3] = [10, 100, 400];

pub fn fig3() -> CliResult<Table> {
    let grid: Vec<(u64, f64)> = FIG3_SERVERS
        .iter()
        .flat_map(|&s| (0..=100).map(move |k| (s, (50 + k) as f64 / 100.0)))
        .collect();
    let values: Vec<CliResult<f64>> = grid
        .par_iter()
        .map(|&(s, rho)| {
            let k = (s as f64).sqrt().ceil() as u64;
            Ok(evaluate(&build_mmsk(MmskParams::new(s, k, rho)?)?)?.1.ratio)
        })
        .collect();
    let mut t = Table::new(vec!["rho", "s", "d_exact"]);
    for ((s, rho), v) in grid.into_iter().zip(values) {
        t.push(vec![rho.into(), s.into(), v?.into()]);
    }
    // The s → ∞ marker at the critical point with η = 1.
    t.push(vec![1.0.into(), "inf".into(), d0(1.0)?.into()]);
    Ok(t)
}

pub fn figures(which: Figure, dir: &Path, format: Format, config: &QuadratureConfig) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let wanted: &[Figure] = match which {
        Figure::All => &[Figure::Fig1, Figure::Fig2, Figure::Fig3],
        Figure::Fig1 => &[Figure::Fig1],
        Figure::Fig2 => &[Figure::Fig2],
        Figure::Fig3 => &[Figure::Fig3],
    };
    let mut written = Vec::new();
    for fig in wanted {
        let (name, table) = match fig {
            Figure::Fig1 => ("fig1", fig1()?),
            Figure::Fig2 => ("fig2", fig2(config)?),
            Figure::Fig3 => ("fig3", fig3()?),
            Figure::All => unreachable!("expanded above"),
        };
        let path = dir.join(format!("{name}.{}", format.extension()));
        fs::write(&path, table.render(format)).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

static L_ETA_FACTOR: OnceLock<f64> = OnceLock::new();

fn perturbed_l_eta(eta: f64) -> bravo_core::Result<f64> {
    Ok(qed::l_eta(eta)? * L_ETA_FACTOR.get().copied().unwrap_or(1.0))
}

pub struct VerifyOutcome {
    pub table: Table,
    pub summary: String,
    pub failed: Vec<String>,
}

pub fn verify(level: Level, perturb_l_eta: Option<f64>) -> VerifyOutcome {
    let hooks = match perturb_l_eta {
        Some(factor) => {
            let _ = L_ETA_FACTOR.set(factor);
            Hooks { l_eta: perturbed_l_eta }
        }
        None => Hooks::default(),
    };
    let report = verify::run_with(level, &hooks);
    let mut table = Table::new(vec!["id", "name", "outcome", "measured", "expected", "seconds"]);
    for c in &report.checks {
        let outcome = match c.outcome {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Skipped => "skipped",
        };
        table.push(vec![
            (c.id as u64).into(),
            c.name.clone().into(),
            outcome.into(),
            c.measured.clone().into(),
            c.expected.clone().into(),
            c.seconds.into(),
        ]);
    }
    let failed: Vec<String> = report.failures().map(|c| format!("{} {}", c.id, c.name)).collect();
    let passed = report.checks.iter().filter(|c| c.outcome == Outcome::Pass).count();
    let skipped = report.checks.iter().filter(|c| c.outcome == Outcome::Skipped).count();
    let mut summary = format!("verify: {passed} passed, {} failed, {skipped} skipped", failed.len());
    if !failed.is_empty() {
        summary.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    VerifyOutcome { table, summary, failed }
}
