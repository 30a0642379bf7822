//! Command-line front end for the partner model.

pub mod config;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use partner_model::analytic::{absorption_closed_form, i_star, lambda_c, r0, AbsorptionSummary};
use partner_model::branching::{
    delta_half_abscissa, expected_counts, rate_matrix, simulate_branching, spectral_abscissa,
    BranchingConfig, BranchingKind, BranchingParams, BranchingState, BranchingSummary,
    DEFAULT_POPULATION_CAP,
};
use partner_model::linalg::Mat3;
use partner_model::mfe::{integrate_sampled, mfe_equilibrium, MfeState, DEFAULT_DT};
use partner_model::replicas::{run_replicas, splitmix64, SimRng};
use partner_model::sim::io::{write_summaries_json, write_trajectory_csv};
use partner_model::sim::micro::{coupled_pair, simulate_micro, MicroState, MAX_MICRO_SITES};
use partner_model::sim::{simulate_macro, MacroState, SimConfig};
use partner_model::{CriticalValue, Params};

use output::create_file;

#[derive(Parser, Debug)]
#[command(name = "partner", version, about = "SIS epidemic with monogamous dynamic partnerships")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct Common {
    /// Transmission rate within a discordant partnership.
    #[arg(long, global = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Partnership formation rate.
    #[arg(long = "r-plus", global = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_plus: Option<f64>,
    /// Partnership breakup rate.
    #[arg(long = "r-minus", global = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_minus: Option<f64>,
    /// Master seed; generated and printed to stderr when absent.
    #[arg(long, global = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output file, or directory for commands that write several files.
    #[arg(long, global = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads for replicas (default: all cores).
    #[arg(long, global = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// JSON object of defaults, keyed by flag name in snake_case.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Closed-form threshold and equilibrium quantities.
    Analytic,
    /// Critical transmission rate over a grid of partnership rates.
    SweepLambdaC(SweepArgs),
    /// Integrate the mean-field equations.
    Mfe(MfeArgs),
    /// Exact simulation of the aggregate chain.
    Simulate(SimulateArgs),
    /// Site-level simulation for small populations.
    Micro(MicroArgs),
    /// Paired site-level runs under the monotone coupling.
    Couple(CoupleArgs),
    /// Simulate the upper or lower branching bound.
    Branching(BranchingArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Grid for r+ as `lo:hi:count`.
    #[arg(long = "r-plus-grid")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_plus_grid: Option<String>,
    /// Grid for r- as `lo:hi:count`.
    #[arg(long = "r-minus-grid")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_minus_grid: Option<String>,
    /// Space grid points geometrically instead of linearly.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub log: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct MfeArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub si0: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ii0: Option<f64>,
    #[arg(long = "t-end")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[arg(long = "sample-dt")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    /// Report the attracting equilibrium instead of a trajectory.
    #[arg(long = "to-equilibrium")]
    #[serde(default, skip_serializing_if = "is_false")]
    pub to_equilibrium: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Population size.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[arg(long = "t-end")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long = "sample-dt")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    /// Initial infectious singles (default ceil(0.1 N)); everyone starts single.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<u64>,
    /// Start of the time-averaging window.
    #[arg(long = "average-from")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_from: Option<f64>,
    /// Keep running the partnership dynamics after the infection dies out.
    #[arg(long = "run-past-extinction")]
    #[serde(default, skip_serializing_if = "is_false")]
    pub run_past_extinction: bool,
    /// Write only the JSON summaries.
    #[arg(long = "no-trajectories")]
    #[serde(default, skip_serializing_if = "is_false")]
    pub no_trajectories: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct MicroArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long = "t-end")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long = "sample-dt")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    /// Initially infectious sites (default ceil(0.1 N)).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<usize>,
    /// Initial partnerships (default 0).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct CoupleArgs {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long = "t-end")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long = "sample-dt")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
    /// Number of paired runs.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    /// Infectious sites of the larger configuration (default N/2).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<usize>,
    /// Shared initial partnerships (default N/4).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct BranchingArgs {
    /// ubp or lbp (default: ubp below threshold, lbp above).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<BranchingKind>,
    /// Slack; defaults to the value halving the spectral abscissa.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long = "n-i")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_i: Option<u64>,
    #[arg(long = "n-si")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_si: Option<u64>,
    #[arg(long = "n-ii")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ii: Option<u64>,
    #[arg(long = "t-end")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    /// Population at which a run is stopped as censored.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    /// Record counts on this grid (written as CSV with --out).
    #[arg(long = "sample-dt")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_dt: Option<f64>,
}

/// Failure classes, mapped to exit codes 2 and 1.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<partner_model::ModelError> for Failure {
    fn from(e: partner_model::ModelError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Out<T = ()> = Result<T, Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn usage_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Ctx {
    file: Map<String, Value>,
    common: Common,
}

impl Ctx {
    fn params(&self) -> Out<Params> {
        let get = |v: Option<f64>, flag: &str| {
            v.ok_or_else(|| usage(format!("missing --{flag} (or its key in --config)")))
        };
        let c = &self.common;
        Params::new(
            get(c.lambda, "lambda")?,
            get(c.r_plus, "r-plus")?,
            get(c.r_minus, "r-minus")?,
        )
        .map_err(usage_err)
    }

    fn seed(&self) -> u64 {
        self.common.seed.unwrap_or_else(|| {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            let seed = splitmix64(nanos ^ u64::from(std::process::id()));
            eprintln!("seed: {seed}");
            seed
        })
    }

    fn args<F: Serialize, T: for<'de> Deserialize<'de>>(&self, flags: &F) -> Out<T> {
        config::merge(&self.file, flags).map_err(Failure::Usage)
    }

    fn out(&self) -> Option<&Path> {
        self.common.out.as_deref()
    }

    /// Creates and returns the output directory, if one was requested.
    fn out_dir(&self) -> Out<Option<&Path>> {
        if let Some(dir) = self.out() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(self.out())
    }
}

pub fn run(cli: Cli) -> Out {
    let file = config::load(cli.common.config.as_deref()).map_err(Failure::Usage)?;
    let common: Common = config::merge(&file, &cli.common).map_err(Failure::Usage)?;
    let ctx = Ctx { file, common };
    if ctx.common.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    match cli.command {
        Command::Analytic => cmd_analytic(&ctx),
        Command::SweepLambdaC(a) => cmd_sweep(&ctx, &a),
        Command::Mfe(a) => cmd_mfe(&ctx, &a),
        Command::Simulate(a) => cmd_simulate(&ctx, &a),
        Command::Micro(a) => cmd_micro(&ctx, &a),
        Command::Couple(a) => cmd_couple(&ctx, &a),
        Command::Branching(a) => cmd_branching(&ctx, &a),
    }
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> Out {
    match path {
        Some(p) => {
            let mut w = create_file(p)?;
            f(&mut w)?;
            w.flush().context("flushing output")?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            writeln!(lock).context("writing to stdout")?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Out {
    emit(path, |w| {
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    })
}

// analytic ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub params: Params,
    pub y_star: f64,
    pub p_r: f64,
    pub beta: f64,
    pub r0: f64,
    pub lambda_c: CriticalValue,
    /// `None` below threshold.
    pub i_star: Option<f64>,
    pub absorption: AbsorptionSummary,
}

pub fn analytic_report(p: &Params) -> anyhow::Result<AnalyticReport> {
    let d = p.derived();
    Ok(AnalyticReport {
        params: *p,
        y_star: d.y_star,
        p_r: d.p_r,
        beta: d.beta,
        r0: r0(p),
        lambda_c: lambda_c(p.r_plus, p.r_minus)?,
        i_star: i_star(p)?,
        absorption: absorption_closed_form(p),
    })
}

fn cmd_analytic(ctx: &Ctx) -> Out {
    let p = ctx.params()?;
    let report = analytic_report(&p)?;
    emit_json(ctx.out(), &report)
}

// sweep-lambda-c ---------------------------------------------------------

fn parse_grid(spec: &str, log: bool, name: &str) -> Out<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("{name}: expected lo:hi:count, got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 || (count == 1 && hi != lo) {
        return Err(usage(format!(
            "{name}: need 0 < lo <= hi and count >= 1 (count 1 only when lo = hi)"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = |k: usize| k as f64 / (count - 1) as f64;
    Ok((0..count)
        .map(|k| {
            if log {
                lo * (hi / lo).powf(step(k))
            } else {
                lo + (hi - lo) * step(k)
            }
        })
        .collect())
}

/// `λ_c` over the product grid, each finite value checked against `R0 = 1`.
pub fn sweep_rows(rps: &[f64], rms: &[f64]) -> anyhow::Result<Vec<(f64, f64, CriticalValue)>> {
    let mut rows = Vec::with_capacity(rps.len() * rms.len());
    for &rm in rms {
        for &rp in rps {
            let lc = lambda_c(rp, rm)?;
            if let CriticalValue::Finite(l) = lc {
                let check = r0(&Params::new(l, rp, rm)?);
                if (check - 1.0).abs() > 1e-8 {
                    anyhow::bail!("R0(lambda_c) = {check} at r+ = {rp}, r- = {rm}");
                }
            }
            rows.push((rp, rm, lc));
        }
    }
    Ok(rows)
}

fn cmd_sweep(ctx: &Ctx, flags: &SweepArgs) -> Out {
    let a: SweepArgs = ctx.args(flags)?;
    let rps = match (&a.r_plus_grid, ctx.common.r_plus) {
        (Some(g), _) => parse_grid(g, a.log, "--r-plus-grid")?,
        (None, Some(v)) => vec![v],
        (None, None) => parse_grid("0.5:20:40", a.log, "--r-plus-grid")?,
    };
    let rms = match (&a.r_minus_grid, ctx.common.r_minus) {
        (Some(g), _) => parse_grid(g, a.log, "--r-minus-grid")?,
        (None, Some(v)) => vec![v],
        (None, None) => parse_grid("0.1:10:40", a.log, "--r-minus-grid")?,
    };
    if rps.iter().chain(&rms).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(usage("rates must be finite and positive"));
    }
    let rows = sweep_rows(&rps, &rms)?;
    emit(ctx.out(), |w| output::write_sweep_csv(w, &rows))
}

// mfe --------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub params: Params,
    pub r0: f64,
    pub equilibrium: MfeState,
    pub analytic_i_star: Option<f64>,
}

fn positive(v: f64, name: &str) -> Out<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("{name} must be positive and finite, got {v}")))
    }
}

fn cmd_mfe(ctx: &Ctx, flags: &MfeArgs) -> Out {
    let a: MfeArgs = ctx.args(flags)?;
    let p = ctx.params()?;
    if a.to_equilibrium {
        let eq = mfe_equilibrium(&p)?;
        let report = EquilibriumReport {
            params: p,
            r0: r0(&p),
            equilibrium: eq,
            analytic_i_star: i_star(&p)?,
        };
        return emit_json(ctx.out(), &report);
    }
    let s0 = MfeState::new(
        a.y0.unwrap_or(1.0),
        a.i0.unwrap_or(0.1),
        a.si0.unwrap_or(0.0),
        a.ii0.unwrap_or(0.0),
    );
    let violation = s0.region_violation();
    if violation > 0.0 {
        return Err(usage(format!(
            "initial state lies outside 0 <= i <= y <= 1, 0 <= ii <= ip <= (1-y)/2 (by {violation:.3e})"
        )));
    }
    let t_end = positive(a.t_end.unwrap_or(100.0), "--t-end")?;
    let dt = positive(a.dt.unwrap_or(DEFAULT_DT), "--dt")?;
    let sample_dt = positive(a.sample_dt.unwrap_or(0.1), "--sample-dt")?;
    let tr = integrate_sampled(&s0, &p, t_end, dt, sample_dt)?;
    emit(ctx.out(), |w| output::write_mfe_csv(w, &tr))
}

// simulate ---------------------------------------------------------------

fn cmd_simulate(ctx: &Ctx, flags: &SimulateArgs) -> Out {
    let a: SimulateArgs = ctx.args(flags)?;
    let p = ctx.params()?;
    let n = a.n.ok_or_else(|| usage("missing --n"))?;
    let i0 = a.i0.unwrap_or_else(|| (n as f64 * 0.1).ceil() as u64);
    if i0 > n {
        return Err(usage(format!("--i0 {i0} exceeds --n {n}")));
    }
    let init = MacroState::new(n, n - i0, i0, 0, 0, 0).map_err(usage_err)?;
    let replicas = a.replicas.unwrap_or(1);
    if replicas == 0 {
        return Err(usage("--replicas must be at least 1"));
    }
    let mut cfg = SimConfig::new(positive(a.t_end.unwrap_or(100.0), "--t-end")?);
    cfg.sample_dt = positive(a.sample_dt.unwrap_or(0.1), "--sample-dt")?;
    cfg.run_past_extinction = a.run_past_extinction;
    cfg.average_from = a.average_from.unwrap_or(0.0);
    if !(cfg.average_from >= 0.0) {
        return Err(usage("--average-from must be nonnegative"));
    }
    let master = ctx.seed();
    let dir = ctx.out_dir()?;
    let write_traj = dir.is_some() && !a.no_trajectories;
    let results: Vec<anyhow::Result<_>> = run_replicas(master, replicas, ctx.common.jobs, |k, seed| {
        let log = simulate_macro(&init, &p, &cfg, seed)?;
        if write_traj {
            let path = dir.unwrap().join(format!("trajectory_{k:04}.csv"));
            write_trajectory_csv(create_file(&path)?, &log.samples)?;
        }
        Ok(log.summary())
    });
    let summaries = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    match dir {
        Some(d) => {
            let mut w = create_file(&d.join("summaries.json"))?;
            write_summaries_json(&mut w, &summaries)?;
            w.flush().context("writing summaries")?;
            Ok(())
        }
        None => emit(None, |w| Ok(write_summaries_json(w, &summaries)?)),
    }
}

// micro ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroReport {
    pub seed: u64,
    pub marks_processed: u64,
    pub events: usize,
    pub final_counts: MacroState,
    pub final_state: MicroState,
}

fn init_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(splitmix64(seed ^ 0x5eed))
}

fn cmd_micro(ctx: &Ctx, flags: &MicroArgs) -> Out {
    let a: MicroArgs = ctx.args(flags)?;
    let p = ctx.params()?;
    let n = a.n.ok_or_else(|| usage("missing --n"))?;
    if !(2..=MAX_MICRO_SITES).contains(&n) {
        return Err(usage(format!("--n must lie in 2..={MAX_MICRO_SITES}")));
    }
    let i0 = a.i0.unwrap_or_else(|| (n as f64 * 0.1).ceil() as usize);
    let pairs = a.pairs.unwrap_or(0);
    let t_end = positive(a.t_end.unwrap_or(10.0), "--t-end")?;
    let sample_dt = positive(a.sample_dt.unwrap_or(0.1), "--sample-dt")?;
    let seed = ctx.seed();
    let init = MicroState::random(n, i0, pairs, &mut init_rng(seed)).map_err(usage_err)?;
    let run = simulate_micro(&init, &p, t_end, sample_dt, seed)?;
    let report = MicroReport {
        seed,
        marks_processed: run.marks_processed,
        events: run.events.len(),
        final_counts: run.final_state.to_macro(),
        final_state: run.final_state.clone(),
    };
    match ctx.out_dir()? {
        Some(d) => {
            write_trajectory_csv(create_file(&d.join("trajectory.csv"))?, &run.samples)?;
            emit_json(Some(&d.join("micro.json")), &report)
        }
        None => emit_json(None, &report),
    }
}

// couple -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSummary {
    pub seed: u64,
    pub violations: u64,
    pub first_violation: Option<f64>,
    pub marks_processed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupleReport {
    pub runs: Vec<CoupledSummary>,
    pub total_violations: u64,
}

fn cmd_couple(ctx: &Ctx, flags: &CoupleArgs) -> Out {
    let a: CoupleArgs = ctx.args(flags)?;
    let p = ctx.params()?;
    let n = a.n.unwrap_or(50);
    if !(2..=MAX_MICRO_SITES).contains(&n) {
        return Err(usage(format!("--n must lie in 2..={MAX_MICRO_SITES}")));
    }
    let i0 = a.i0.unwrap_or(n / 2);
    let pairs = a.pairs.unwrap_or(n / 4);
    if i0 > n || 2 * pairs > n {
        return Err(usage("--i0 must be at most N and --pairs at most N/2"));
    }
    let t_end = positive(a.t_end.unwrap_or(20.0), "--t-end")?;
    let sample_dt = positive(a.sample_dt.unwrap_or(1.0), "--sample-dt")?;
    let runs = a.runs.unwrap_or(1);
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let master = ctx.seed();
    let dir = ctx.out_dir()?;
    let results: Vec<anyhow::Result<CoupledSummary>> =
        run_replicas(master, runs, ctx.common.jobs, |k, seed| {
            use rand::Rng;
            let mut g = init_rng(seed);
            let b = MicroState::random(n, i0, pairs, &mut g)?;
            let inf_a: Vec<bool> = (0..n).map(|x| b.is_infected(x) && g.gen_bool(0.5)).collect();
            let a_state = MicroState::new(inf_a, &b.matching())?;
            let run = coupled_pair(&a_state, &b, &p, t_end, sample_dt, seed)?;
            if let Some(d) = dir {
                write_trajectory_csv(create_file(&d.join(format!("a_{k:04}.csv")))?, &run.samples_a)?;
                write_trajectory_csv(create_file(&d.join(format!("b_{k:04}.csv")))?, &run.samples_b)?;
            }
            Ok(CoupledSummary {
                seed,
                violations: run.violations,
                first_violation: run.first_violation,
                marks_processed: run.marks_processed,
            })
        });
    let runs = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let total_violations = runs.iter().map(|r| r.violations).sum();
    let report = CoupleReport {
        runs,
        total_violations,
    };
    emit_json(dir.map(|d| d.join("couple.json")).as_deref(), &report)?;
    if total_violations > 0 {
        return Err(Failure::Runtime(anyhow!(
            "{total_violations} containment violations in the coupled runs"
        )));
    }
    Ok(())
}

// branching --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingReport {
    pub kind: BranchingKind,
    pub delta: f64,
    pub rate_matrix: Mat3,
    pub spectral_abscissa: f64,
    pub initial: BranchingState,
    pub t_end: f64,
    /// `B_0 exp(A t_end)`.
    pub expected_final: [f64; 3],
    pub summaries: Vec<BranchingSummary>,
}

fn cmd_branching(ctx: &Ctx, flags: &BranchingArgs) -> Out {
    let a: BranchingArgs = ctx.args(flags)?;
    let p = ctx.params()?;
    let kind = a.kind.unwrap_or(if r0(&p) < 1.0 {
        BranchingKind::Ubp
    } else {
        BranchingKind::Lbp
    });
    let delta = match a.delta {
        Some(d) => d,
        None => delta_half_abscissa(&p, kind).map_err(|e| {
            usage(format!("{e}; pass --delta explicitly for this kind and regime"))
        })?,
    };
    let bp = BranchingParams::new(p, delta, kind).map_err(usage_err)?;
    let init = BranchingState::new(a.n_i.unwrap_or(1), a.n_si.unwrap_or(0), a.n_ii.unwrap_or(0));
    let t_end = positive(a.t_end.unwrap_or(50.0), "--t-end")?;
    let mut cfg = BranchingConfig::new(t_end);
    cfg.cap = a.cap.unwrap_or(DEFAULT_POPULATION_CAP);
    if cfg.cap == 0 {
        return Err(usage("--cap must be positive"));
    }
    if let Some(dt) = a.sample_dt {
        cfg = cfg.with_grid(positive(dt, "--sample-dt")?);
    }
    let replicas = a.replicas.unwrap_or(1);
    if replicas == 0 {
        return Err(usage("--replicas must be at least 1"));
    }
    let master = ctx.seed();
    let dir = ctx.out_dir()?;
    let write_traj = dir.is_some() && a.sample_dt.is_some();
    let results: Vec<anyhow::Result<BranchingSummary>> =
        run_replicas(master, replicas, ctx.common.jobs, |k, seed| {
            let run = simulate_branching(&init, &bp, &cfg, seed)?;
            if write_traj {
                let path = dir.unwrap().join(format!("branching_{k:04}.csv"));
                output::write_branching_csv(create_file(&path)?, &run)?;
            }
            Ok(run.summary())
        });
    let summaries = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let a_mat = rate_matrix(&bp);
    let report = BranchingReport {
        kind,
        delta,
        rate_matrix: a_mat,
        spectral_abscissa: spectral_abscissa(&a_mat),
        initial: init,
        t_end,
        expected_final: expected_counts(&init, &bp, t_end)?,
        summaries,
    };
    emit_json(dir.map(|d| d.join("branching.json")).as_deref(), &report)
}
