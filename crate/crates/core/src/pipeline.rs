//! Build → solve → certify → cross-check, and the files a run writes.
//!
//! A run directory holds
//!
//! * `solution.csv`: one row per step, columns `quantity:tank:entry` for the
//!   states `xi`, rates `T`, influent `xin`, balance multipliers `lambda`,
//!   kinetics multipliers `rho` and kinetics gaps `gap`;
//! * `report.json`: solver summary, the full exactness report and the
//!   simulation cross-check;
//! * `plot.tsv`: influent, allocation shares and effluent concentrations
//!   over a step window;
//! * `manifest.json`: versions, options, timings, verdicts, the canonical
//!   scenario text and the SHA-256 of every other output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exactness::{certify, ExactnessOptions, ExactnessReport, Operating, Verdict};
use crate::program::{build, SolvedTrajectory};
use crate::scenario::influent::{read_table, write_table, Table};
use crate::scenario::{Mode, Scenario};
use crate::simulate::{forward_simulate, NewtonOptions, Simulation};
use crate::solver::{solve, verify_kkt, PresolveReport, SolverOptions, Status};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    Io,
    Validation,
    Infeasible,
    /// Unbounded, iteration limit, numerical failure, Newton failure.
    Numerical,
    /// Solved, but some step's kinetics gap is above tolerance.
    Inexact,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::Io => 1,
            Outcome::Validation => 2,
            Outcome::Infeasible => 3,
            Outcome::Numerical => 4,
            Outcome::Inexact => 5,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Io(_) => Outcome::Io,
            Error::Newton { .. } | Error::Singular(_) => Outcome::Numerical,
            _ => Outcome::Validation,
        }
    }

    pub fn from_status(s: Status) -> Self {
        match s {
            Status::Optimal => Outcome::Ok,
            Status::Infeasible => Outcome::Infeasible,
            Status::Unbounded | Status::MaxIterations | Status::NumericalFailure => Outcome::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Replay exact transient solutions through the forward simulator.
    pub simulate: bool,
    /// Largest state difference accepted by the replay.
    pub simulation_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            simulate: true,
            simulation_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub status: Status,
    pub iterations: usize,
    pub pcost: f64,
    pub dcost: f64,
    pub relative_gap: f64,
    pub pres: f64,
    pub dres: f64,
    pub kkt_relative: [f64; 4],
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_cone_rows: usize,
    pub presolve: PresolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationCheck {
    /// `max_n ‖ξ_sim(n) − ξ(n)‖∞`
    pub max_state_diff: f64,
    pub max_newton_iterations: usize,
    pub consistent: bool,
    /// Set when the simulator failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub build_ms: f64,
    pub solve_ms: f64,
    pub certify_ms: f64,
    pub simulate_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: Mode,
    /// One-line exactness summary, `exact: all steps` when every step passes.
    pub summary: String,
    pub outcome: Outcome,
    pub exit_code: i32,
    pub objective: f64,
    pub solver: SolverSummary,
    pub exactness: Option<ExactnessReport>,
    pub simulation: Option<SimulationCheck>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub trajectory: SolvedTrajectory,
    pub timings: Timings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the whole pipeline in memory. Build errors are returned; solver and
/// certificate outcomes are recorded in the report.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunResult> {
    let mut timings = Timings::default();
    let t = Instant::now();
    let built = build(sc)?;
    timings.build_ms = ms_since(t);

    let t = Instant::now();
    let sol = solve(&built.program, &sc.solver);
    timings.solve_ms = ms_since(t);
    log::info!(
        "{}: {} after {} iterations, objective {:e}",
        sc.name,
        sol.status,
        sol.iterations,
        sol.pcost
    );
    let kkt = verify_kkt(&built.program, &sol.x, &sol.y, &sol.z);
    let traj = built.layout.extract(sc, &built.program, &sol);
    let solver = SolverSummary {
        status: sol.status,
        iterations: sol.iterations,
        pcost: sol.pcost,
        dcost: sol.dcost,
        relative_gap: sol.relative_gap(),
        pres: sol.pres,
        dres: sol.dres,
        kkt_relative: kkt.relative,
        n_vars: built.program.n_vars,
        n_eq: built.program.n_eq(),
        n_cone_rows: built.program.n_cone_rows(),
        presolve: sol.presolve.clone(),
    };

    let mut outcome = Outcome::from_status(sol.status);
    let mut exactness = None;
    let mut simulation = None;
    let summary;
    if outcome == Outcome::Ok {
        let t = Instant::now();
        let rep = certify(sc, Operating::from(&traj));
        timings.certify_ms = ms_since(t);
        let res = &rep.residual;
        summary = if res.all_exact {
            "exact: all steps".to_string()
        } else {
            format!("inexact: {} of {} steps exact", res.exact_steps, res.steps.len())
        };
        if !res.all_exact {
            outcome = Outcome::Inexact;
        }
        if opts.simulate && sc.mode == Mode::Transient && res.all_exact {
            let t = Instant::now();
            simulation = Some(replay(sc, &traj, opts.simulation_tol));
            timings.simulate_ms = ms_since(t);
        }
        exactness = Some(rep);
    } else {
        summary = format!("no solution: solver status {}", sol.status);
    }

    let report = RunReport {
        scenario: sc.name.clone(),
        mode: sc.mode,
        summary,
        outcome,
        exit_code: outcome.code(),
        objective: sol.pcost,
        solver,
        exactness,
        simulation,
        notes: sc.notes.clone(),
    };
    Ok(RunResult {
        report,
        trajectory: traj,
        timings,
    })
}

/// Replays a solved trajectory's influent through the simulator from its
/// initial state.
pub fn replay(sc: &Scenario, traj: &SolvedTrajectory, tol: f64) -> SimulationCheck {
    match forward_simulate(sc, &traj.initial, &traj.influent, &NewtonOptions::default()) {
        Ok(sim) => {
            let max_state_diff = sim
                .xi
                .iter()
                .zip(&traj.xi)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            SimulationCheck {
                max_state_diff,
                max_newton_iterations: sim.steps.iter().map(|s| s.iterations).max().unwrap_or(0),
                consistent: max_state_diff <= tol,
                error: None,
            }
        }
        Err(e) => SimulationCheck {
            max_state_diff: f64::NAN,
            max_newton_iterations: 0,
            consistent: false,
            error: Some(e.to_string()),
        },
    }
}

// ---------------------------------------------------------------------------
// tables

fn columns(prefix: &str, s: usize, names: &[String]) -> Vec<String> {
    (0..s)
        .flat_map(|i| names.iter().map(move |n| format!("{prefix}:{i}:{n}")))
        .collect()
}

fn push_block(table: &mut Table, names: Vec<String>, rows: &[Vec<f64>]) {
    for (k, name) in names.into_iter().enumerate() {
        table.names.push(name);
        table
            .columns
            .push(rows.iter().map(|r| r.get(k).copied().unwrap_or(f64::NAN)).collect());
    }
}

/// The solution table of a solved trajectory.
pub fn solution_table(sc: &Scenario, traj: &SolvedTrajectory) -> Table {
    let s = sc.n_tanks();
    let rows = traj.xi.len();
    let mut table = Table {
        names: vec!["step".into()],
        columns: vec![(1..=rows).map(|n| n as f64).collect()],
    };
    let gaps: Vec<Vec<f64>> = traj
        .xi
        .iter()
        .zip(&traj.rates)
        .enumerate()
        .map(|(k, (x, t))| {
            sc.kinetics
                .rates(x, k + 1)
                .iter()
                .zip(t)
                .map(|(p, t)| p - t)
                .collect()
        })
        .collect();
    push_block(&mut table, columns("xi", s, &sc.state_names), &traj.xi);
    push_block(&mut table, columns("T", s, &sc.reaction_names), &traj.rates);
    push_block(&mut table, columns("xin", s, &sc.state_names), &traj.influent);
    push_block(&mut table, columns("lambda", s, &sc.state_names), &traj.lambda);
    push_block(&mut table, columns("rho", s, &sc.reaction_names), &traj.rho);
    push_block(&mut table, columns("gap", s, &sc.reaction_names), &gaps);
    table
}

/// A simulated trajectory as a table, including the initial state at step 0.
pub fn trajectory_table(sc: &Scenario, sim: &Simulation) -> Table {
    let s = sc.n_tanks();
    let mut xi = vec![sim.initial.clone()];
    xi.extend(sim.xi.iter().cloned());
    let mut rates = vec![sc.kinetics.rates(&sim.initial, 1)];
    rates.extend(sim.rates.iter().cloned());
    let mut table = Table {
        names: vec!["step".into()],
        columns: vec![(0..xi.len()).map(|n| n as f64).collect()],
    };
    push_block(&mut table, columns("xi", s, &sc.state_names), &xi);
    push_block(&mut table, columns("T", s, &sc.reaction_names), &rates);
    table
}

const QUANTITIES: [&str; 6] = ["xi", "T", "xin", "lambda", "rho", "gap"];

/// Parses a solution or trajectory CSV and checks its header: a leading
/// `step` column, then `quantity:tank:entry` columns.
pub fn read_solution(text: &str) -> Result<Table> {
    let table = read_table(text)?;
    if table.names.first().map(String::as_str) != Some("step") {
        return Err(Error::parse(1, "the first column must be \"step\""));
    }
    for name in &table.names[1..] {
        let parts: Vec<&str> = name.splitn(3, ':').collect();
        let ok = parts.len() == 3
            && QUANTITIES.contains(&parts[0])
            && parts[1].parse::<usize>().is_ok()
            && !parts[2].is_empty();
        if !ok {
            return Err(Error::parse(1, format!("column {name:?} is not quantity:tank:entry")));
        }
    }
    Ok(table)
}

/// Per-step blocks of one quantity, in the scenario's tank and entry order.
pub fn table_block(table: &Table, prefix: &str, s: usize, names: &[String]) -> Result<Vec<Vec<f64>>> {
    let cols = columns(prefix, s, names)
        .into_iter()
        .map(|c| {
            table
                .column(&c)
                .ok_or_else(|| Error::invalid("solution", format!("missing column {c:?}")))
        })
        .collect::<Result<Vec<&[f64]>>>()?;
    Ok((0..table.rows()).map(|k| cols.iter().map(|c| c[k]).collect()).collect())
}

/// Plot data: influent per tank, allocation shares of the allocated
/// entries, and states, for steps `window.0..=window.1`.
pub fn plot_tsv(sc: &Scenario, traj: &SolvedTrajectory, window: Option<(usize, usize)>) -> String {
    let (s, m) = (sc.n_tanks(), sc.kinetics.m);
    let rows = traj.xi.len();
    let (lo, hi) = window.unwrap_or((1, rows));
    let (lo, hi) = (lo.max(1), hi.min(rows));
    let allocated: Vec<usize> = sc.constraints.allocations.iter().map(|a| a.entry).collect();
    let mut out = String::from("step\tday");
    for i in 0..s {
        for e in 0..m {
            let _ = write!(out, "\txin:{i}:{}", sc.state_names[e]);
        }
    }
    for &e in &allocated {
        for i in 0..s {
            let _ = write!(out, "\tshare:{i}:{}", sc.state_names[e]);
        }
    }
    for i in 0..s {
        for e in 0..m {
            let _ = write!(out, "\txi:{i}:{}", sc.state_names[e]);
        }
    }
    out.push('\n');
    for n in lo..=hi {
        let k = n - 1;
        let day = match sc.mode {
            Mode::Transient => n as f64 * sc.grid.delta,
            Mode::SteadyState => 0.0,
        };
        let _ = write!(out, "{n}\t{day}");
        for v in &traj.influent[k] {
            let _ = write!(out, "\t{v}");
        }
        let q = &sc.network.at(n).inflow_rates;
        for &e in &allocated {
            let load: Vec<f64> = (0..s).map(|i| q[i] * traj.influent[k][i * m + e]).collect();
            let total: f64 = load.iter().sum();
            for l in load {
                let share = if total > 0.0 { l / total } else { 0.0 };
                let _ = write!(out, "\t{share}");
            }
        }
        for v in &traj.xi[k] {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// manifest and files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    /// Canonical scenario text; loading it reproduces the run.
    pub scenario_toml: Option<String>,
    pub scenario_sha256: Option<String>,
    /// Directory relative paths in the scenario were resolved against.
    pub base_dir: String,
    pub solver: SolverOptions,
    pub exactness_options: ExactnessOptions,
    pub status: String,
    pub iterations: usize,
    pub exit_code: i32,
    pub verdicts: Verdicts,
    pub timings_ms: serde_json::Value,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub residual_all_exact: Option<bool>,
    pub theorem: Option<String>,
    pub steady_state: Option<String>,
    pub state_weighted_corollary: Option<bool>,
    pub rate_weighted_corollary: Option<bool>,
    pub steady_structural: Option<bool>,
    pub certified: Option<bool>,
    pub advisory: Vec<String>,
    pub simulation_consistent: Option<bool>,
}

fn verdict_label(v: &Verdict) -> String {
    match v {
        Verdict::Positive => "positive".into(),
        Verdict::NotPositive => "not-positive".into(),
        Verdict::Inconclusive => "inconclusive".into(),
        Verdict::Indeterminate(why) => format!("indeterminate: {why}"),
    }
}

pub fn verdicts(report: &RunReport) -> Verdicts {
    let mut v = Verdicts {
        simulation_consistent: report.simulation.as_ref().map(|s| s.consistent),
        ..Verdicts::default()
    };
    if let Some(ex) = &report.exactness {
        v.residual_all_exact = Some(ex.residual.all_exact);
        v.theorem = ex.theorem.as_ref().map(|t| verdict_label(&t.verdict));
        v.steady_state = ex.steady.as_ref().map(|t| verdict_label(&t.verdict));
        v.steady_structural = ex.steady.as_ref().map(|t| t.sampled.applies);
        v.state_weighted_corollary = ex.corollaries.as_ref().map(|c| c.state_weighted.applies);
        v.rate_weighted_corollary = ex.corollaries.as_ref().map(|c| c.rate_weighted.applies);
        v.certified = Some(ex.certified);
        v.advisory = ex.advisory.clone();
    }
    v
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes the run files into `dir` (created if needed) and returns their
/// paths, manifest last.
pub fn write_outputs(
    sc: &Scenario,
    res: &RunResult,
    dir: &Path,
    base_dir: &Path,
    window: Option<(usize, usize)>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = vec![("report.json".into(), serde_json::to_string_pretty(&res.report)?)];
    if res.report.solver.status == Status::Optimal {
        files.push(("solution.csv".into(), write_table(&solution_table(sc, &res.trajectory))));
        files.push(("plot.tsv".into(), plot_tsv(sc, &res.trajectory, window)));
    }
    let mut paths = Vec::new();
    let mut outputs = Vec::new();
    for (name, text) in &files {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        outputs.push(OutputFile {
            file: name.clone(),
            sha256: sha256_hex(text.as_bytes()),
        });
        paths.push(p);
    }
    let scenario_toml = sc.to_toml().ok();
    let manifest = Manifest {
        tool: "bioconvex".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: sc.name.clone(),
        scenario_sha256: scenario_toml.as_deref().map(|t| sha256_hex(t.as_bytes())),
        scenario_toml,
        base_dir: base_dir.display().to_string(),
        solver: sc.solver.clone(),
        exactness_options: sc.exactness.clone(),
        status: res.report.solver.status.to_string(),
        iterations: res.report.solver.iterations,
        exit_code: res.report.exit_code,
        verdicts: verdicts(&res.report),
        timings_ms: serde_json::to_value(res.timings)?,
        outputs,
    };
    let p = dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?)?;
    paths.push(p);
    Ok(paths)
}

/// The scenario recorded in a manifest.
pub fn scenario_from_manifest(text: &str) -> Result<Scenario> {
    let m: Manifest = serde_json::from_str(text)?;
    let toml = m
        .scenario_toml
        .ok_or_else(|| Error::invalid("manifest.scenario-toml", "the manifest holds no scenario"))?;
    Scenario::from_toml(&toml, Path::new(&m.base_dir))
}

/// Fixed-width summary table of a run for the terminal.
pub fn summary_table(report: &RunReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("scenario".into(), report.scenario.clone()),
        ("mode".into(), format!("{:?}", report.mode).to_lowercase()),
        ("status".into(), report.solver.status.to_string()),
        ("iterations".into(), report.solver.iterations.to_string()),
        ("objective".into(), format!("{:.10e}", report.objective)),
        (
            "relative gap".into(),
            if report.solver.relative_gap.is_finite() {
                format!("{:.2e}", report.solver.relative_gap)
            } else {
                "n/a".into()
            },
        ),
        ("exactness".into(), report.summary.clone()),
    ];
    let v = verdicts(report);
    if let Some(ex) = &report.exactness {
        let worst = ex
            .residual
            .steps
            .iter()
            .map(|s| s.max_gap / s.scale)
            .fold(0.0, f64::max);
        rows.push(("max relative gap φ − T".into(), format!("{worst:.2e}")));
    }
    for (label, value) in [
        ("transient certificate", v.theorem),
        ("steady-state certificate", v.steady_state),
    ] {
        if let Some(value) = value {
            rows.push((label.into(), value));
        }
    }
    if let Some(b) = v.steady_structural {
        rows.push(("structural steady-state test".into(), applies(b)));
    }
    if let Some(b) = v.state_weighted_corollary {
        rows.push(("state-weighted corollary".into(), applies(b)));
    }
    if let Some(b) = v.rate_weighted_corollary {
        rows.push(("rate-weighted corollary".into(), applies(b)));
    }
    if let Some(sim) = &report.simulation {
        rows.push((
            "simulation replay".into(),
            format!("max |Δξ| {:.2e} ({})", sim.max_state_diff, if sim.consistent { "consistent" } else { "inconsistent" }),
        ));
    }
    for a in &v.advisory {
        rows.push(("advisory".into(), a.clone()));
    }
    for n in &report.notes {
        rows.push(("note".into(), n.clone()));
    }
    rows.push(("exit code".into(), report.exit_code.to_string()));
    let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    rows.iter().fold(String::new(), |mut out, (k, v)| {
        let pad = width - k.chars().count();
        let _ = writeln!(out, "{k}{}  {v}", " ".repeat(pad));
        out
    })
}

fn applies(b: bool) -> String {
    if b { "applies" } else { "does not apply" }.into()
}
