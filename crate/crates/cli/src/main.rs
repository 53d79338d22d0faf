//! `bioconvex`: scenario-driven runs of the relaxed bioprocess programs.
//!
//! Scenario arguments are TOML files or `preset:<name>`; `run` also accepts
//! a `manifest.json` from an earlier run and reproduces it. Exit codes:
//! 0 ok, 1 I/O, 2 validation, 3 infeasible, 4 numerical failure,
//! 5 solved but inexact.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bioconvex::conic::{read_program, write_program};
use bioconvex::exactness::{certify, Operating};
use bioconvex::pipeline::{self, Outcome, RunOptions};
use bioconvex::program::build;
use bioconvex::scenario::config::{Config, UnitSystem};
use bioconvex::scenario::influent::{write_table, Table};
use bioconvex::scenario::{presets, Mode};
use bioconvex::simulate::{find_steady_state, forward_simulate, NewtonOptions};
use bioconvex::solver::{solve, verify_kkt, SolverOptions};
use bioconvex::{discretize::Boundary, Error, Scenario};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bioconvex", version, about = "Convex relaxations of bioprocess network optimization")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML file or `preset:<name>`.
    scenario: String,
    /// Override the number of steps.
    #[arg(long)]
    tau: Option<usize>,
    /// Full-length wastewater horizon (1345 steps).
    #[arg(long, conflicts_with = "tau")]
    full: bool,
    /// Use every number as written, without unit conversion.
    #[arg(long)]
    paper_units: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a scenario, reporting every problem found.
    Validate(ScenarioArgs),
    /// Build, solve, certify and cross-check a scenario.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Plot window `first:last` (steps, inclusive).
        #[arg(long, value_parser = parse_window)]
        window: Option<(usize, usize)>,
        /// Skip the forward-simulation replay.
        #[arg(long)]
        no_simulate: bool,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Integrate the unrelaxed dynamics (or find a steady state).
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Take the initial state and influent from a solution CSV.
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Trajectory CSV to write; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the exactness certificates on a saved solution.
    Certify {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Solution CSV written by `run`.
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the relaxed program in the plain-text conic format.
    ExportProgram {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Solve a program in the plain-text conic format.
    SolveProgram {
        program: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the influent totals of a scenario as CSV.
    SynthInfluent {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run several scenarios concurrently, one output directory each.
    Batch {
        scenarios: Vec<String>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// List the shipped presets, or print one.
    Presets { name: Option<String> },
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected first:last")?;
    let a: usize = a.parse().map_err(|_| "first is not a step number")?;
    let b: usize = b.parse().map_err(|_| "last is not a step number")?;
    if a > b {
        return Err("first is after last".into());
    }
    Ok((a, b))
}

/// A failure with its exit code.
struct Failure {
    outcome: Outcome,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            outcome: Outcome::from_error(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult = Result<Outcome, Failure>;

fn load(args: &ScenarioArgs) -> Result<(Scenario, PathBuf), Failure> {
    let (text, base) = if let Some(name) = args.scenario.strip_prefix("preset:") {
        let text = presets::text(name).ok_or_else(|| Failure {
            outcome: Outcome::Validation,
            message: format!("unknown preset {name:?}; available: {}", presets::names().join(", ")),
        })?;
        (text.to_string(), PathBuf::from("."))
    } else {
        let path = Path::new(&args.scenario);
        let text = std::fs::read_to_string(path).map_err(|e| Failure {
            outcome: Outcome::Io,
            message: format!("{}: {e}", path.display()),
        })?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        if path.extension().is_some_and(|e| e == "json") {
            let sc = pipeline::scenario_from_manifest(&text)?;
            return Ok((sc, base));
        }
        (text, base)
    };
    let mut cfg: Config = toml::from_str(&text).map_err(Error::from)?;
    if let Some(tau) = args.tau {
        cfg.horizon.tau = tau;
    }
    if args.full {
        cfg.horizon.tau = 1345;
    }
    if args.paper_units {
        cfg.units = UnitSystem::Paper;
    }
    Ok((Scenario::from_config(cfg, &base)?, base))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn validate(args: &ScenarioArgs) -> CliResult {
    let (sc, _) = load(args)?;
    println!(
        "ok: {} ({:?}, {} tanks, {} states, {} reactions, {} steps)",
        sc.name,
        sc.mode,
        sc.n_tanks(),
        sc.kinetics.m,
        sc.kinetics.r,
        sc.steps()
    );
    for n in &sc.notes {
        println!("note: {n}");
    }
    Ok(Outcome::Ok)
}

fn run_one(args: &ScenarioArgs, out: &Path, window: Option<(usize, usize)>, opts: &RunOptions) -> Result<pipeline::RunResult, Failure> {
    let (sc, base) = load(args)?;
    let res = pipeline::run(&sc, opts)?;
    pipeline::write_outputs(&sc, &res, out, &base, window)?;
    Ok(res)
}

fn run(args: &ScenarioArgs, out: &Path, window: Option<(usize, usize)>, no_simulate: bool, json: bool) -> CliResult {
    let opts = RunOptions {
        simulate: !no_simulate,
        ..RunOptions::default()
    };
    let res = run_one(args, out, window, &opts)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&res.report)?);
    } else {
        print!("{}", pipeline::summary_table(&res.report));
        println!("outputs in {}", out.display());
    }
    Ok(res.report.outcome)
}

fn simulate(args: &ScenarioArgs, solution: Option<&Path>, out: Option<&Path>) -> CliResult {
    let (sc, _) = load(args)?;
    let opts = NewtonOptions::default();
    let (s, m) = (sc.n_tanks(), sc.kinetics.m);
    let (initial, influent) = match solution {
        Some(p) => {
            let table = pipeline::read_solution(&std::fs::read_to_string(p)?)?;
            let xi = pipeline::table_block(&table, "xi", s, &sc.state_names)?;
            let xin = pipeline::table_block(&table, "xin", s, &sc.state_names)?;
            let initial = match &sc.boundary {
                Boundary::Initial(x0) => x0.clone(),
                Boundary::Periodic => xi.last().cloned().unwrap_or_else(|| vec![0.0; s * m]),
            };
            (initial, xin)
        }
        None => {
            let initial = match &sc.boundary {
                Boundary::Initial(x0) => x0.clone(),
                Boundary::Periodic => {
                    eprintln!("note: periodic boundary without a solution; starting from zero");
                    vec![0.0; s * m]
                }
            };
            (initial, sc.influent.values.clone())
        }
    };
    if sc.mode == Mode::SteadyState {
        let xin = influent.first().cloned().unwrap_or_else(|| vec![0.0; s * m]);
        let guess = if solution.is_some() { initial } else { xin.clone() };
        let root = find_steady_state(&sc, &xin, &guess, &opts)?;
        let table = Table {
            names: std::iter::once("step".to_string())
                .chain((0..s).flat_map(|i| sc.state_names.iter().map(move |n| format!("xi:{i}:{n}"))))
                .collect(),
            columns: std::iter::once(vec![1.0]).chain(root.iter().map(|v| vec![*v])).collect(),
        };
        emit(out, &write_table(&table))?;
        return Ok(Outcome::Ok);
    }
    let sim = forward_simulate(&sc, &initial, &influent, &opts)?;
    emit(out, &write_table(&pipeline::trajectory_table(&sc, &sim)))?;
    Ok(Outcome::Ok)
}

fn certify_cmd(args: &ScenarioArgs, solution: &Path, json: bool) -> CliResult {
    let (sc, _) = load(args)?;
    let s = sc.n_tanks();
    let table = pipeline::read_solution(&std::fs::read_to_string(solution)?)?;
    let xi = pipeline::table_block(&table, "xi", s, &sc.state_names)?;
    let rates = pipeline::table_block(&table, "T", s, &sc.reaction_names)?;
    let rho = pipeline::table_block(&table, "rho", s, &sc.reaction_names).unwrap_or_default();
    if xi.len() != sc.steps() {
        return Err(Failure {
            outcome: Outcome::Validation,
            message: format!("solution has {} rows, scenario has {} steps", xi.len(), sc.steps()),
        });
    }
    let rep = certify(
        &sc,
        Operating {
            xi: &xi,
            rates: &rates,
            rho: &rho,
        },
    );
    if json {
        println!("{}", serde_json::to_string_pretty(&rep)?);
    } else {
        println!(
            "residual: {} of {} steps exact",
            rep.residual.exact_steps,
            rep.residual.steps.len()
        );
        if let Some(t) = &rep.theorem {
            println!("transient certificate: {:?}", t.verdict);
        }
        if let Some(st) = &rep.steady {
            println!("steady-state certificate: {:?}", st.verdict);
        }
        if let Some(c) = &rep.corollaries {
            println!("state-weighted corollary: {}", c.state_weighted.reason);
            println!("rate-weighted corollary: {}", c.rate_weighted.reason);
        }
        for a in &rep.advisory {
            println!("advisory: {a}");
        }
    }
    Ok(if rep.residual.all_exact { Outcome::Ok } else { Outcome::Inexact })
}

fn export_program(args: &ScenarioArgs, out: Option<&Path>) -> CliResult {
    let (sc, _) = load(args)?;
    let built = build(&sc)?;
    emit(out, &write_program(&built.program))?;
    Ok(Outcome::Ok)
}

fn solve_program(path: &Path, json: bool) -> CliResult {
    let prog = read_program(&std::fs::read_to_string(path)?)?;
    let sol = solve(&prog, &SolverOptions::default());
    let kkt = verify_kkt(&prog, &sol.x, &sol.y, &sol.z);
    if json {
        let v = serde_json::json!({
            "status": sol.status,
            "iterations": sol.iterations,
            "pcost": sol.pcost,
            "dcost": sol.dcost,
            "kkt-relative": kkt.relative,
            "kkt-pass": kkt.pass,
            "x": sol.x,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("status      {}", sol.status);
        println!("iterations  {}", sol.iterations);
        println!("objective   {:.12e}", sol.pcost);
        println!("dual        {:.12e}", sol.dcost);
    }
    Ok(Outcome::from_status(sol.status))
}

fn synth_influent(args: &ScenarioArgs, out: Option<&Path>) -> CliResult {
    let (sc, _) = load(args)?;
    let totals = sc.totals();
    if totals.is_empty() {
        return Err(Failure {
            outcome: Outcome::Validation,
            message: "the scenario allocates no influent totals".into(),
        });
    }
    let table = Table {
        names: std::iter::once("step".to_string())
            .chain(totals.iter().map(|(e, _)| sc.state_names[*e].clone()))
            .collect(),
        columns: std::iter::once((1..=sc.steps()).map(|n| n as f64).collect())
            .chain(totals.iter().map(|(_, v)| v.to_vec()))
            .collect(),
    };
    emit(out, &write_table(&table))?;
    Ok(Outcome::Ok)
}

fn batch(scenarios: &[String], out: &Path) -> CliResult {
    let results: Vec<(String, Result<pipeline::RunResult, Failure>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let dir = out.join(format!("{k:02}-{}", dir_name(name)));
                scope.spawn(move || {
                    let args = ScenarioArgs {
                        scenario: name.clone(),
                        tau: None,
                        full: false,
                        paper_units: false,
                    };
                    (name.clone(), run_one(&args, &dir, None, &RunOptions::default()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
    });
    let mut worst = Outcome::Ok;
    for (name, r) in results {
        let outcome = match r {
            Ok(res) => {
                println!("{name}: {} ({})", res.report.summary, res.report.solver.status);
                res.report.outcome
            }
            Err(f) => {
                println!("{name}: error: {}", f.message);
                f.outcome
            }
        };
        if outcome.code() > worst.code() {
            worst = outcome;
        }
    }
    Ok(worst)
}

fn dir_name(scenario: &str) -> String {
    let stem = scenario
        .strip_prefix("preset:")
        .map(str::to_string)
        .unwrap_or_else(|| {
            Path::new(scenario)
                .file_stem()
                .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
        });
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn presets_cmd(name: Option<&str>) -> CliResult {
    match name {
        None => {
            for n in presets::names() {
                println!("{n}");
            }
            Ok(Outcome::Ok)
        }
        Some(n) => match presets::text(n) {
            Some(t) => {
                print!("{t}");
                Ok(Outcome::Ok)
            }
            None => Err(Failure {
                outcome: Outcome::Validation,
                message: format!("unknown preset {n:?}"),
            }),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Run {
            scenario,
            out,
            window,
            no_simulate,
            json,
        } => run(scenario, out, *window, *no_simulate, *json),
        Command::Simulate { scenario, solution, out } => simulate(scenario, solution.as_deref(), out.as_deref()),
        Command::Certify { scenario, solution, json } => certify_cmd(scenario, solution, *json),
        Command::ExportProgram { scenario, out } => export_program(scenario, out.as_deref()),
        Command::SolveProgram { program, json } => solve_program(program, *json),
        Command::SynthInfluent { scenario, out } => synth_influent(scenario, out.as_deref()),
        Command::Batch { scenarios, out } => batch(scenarios, out),
        Command::Presets { name } => presets_cmd(name.as_deref()),
    };
    match result {
        Ok(o) => ExitCode::from(o.code() as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.outcome.code() as u8)
        }
    }
}
