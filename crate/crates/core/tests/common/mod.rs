//! Shared fixtures for the integration tests: a scenario suite, rate
//! formulas written out independently of the library, and brute-force
//! oracles for tiny conic programs.

#![allow(dead_code)]

pub mod checks;

use std::path::Path;

use bioconvex::conic::{Affine, ConeRow, ConicProgram, ProgramBuilder, RowTag};
use bioconvex::kinetics::{Biomass, GrowthModel};
use bioconvex::program::{build, SolvedTrajectory};
use bioconvex::scenario::presets;
use bioconvex::solver::solve;
use bioconvex::Scenario;
use rand::Rng;

pub fn load(text: &str) -> Scenario {
    Scenario::from_toml(text, Path::new(".")).expect("fixture scenario is valid")
}

pub fn solve_scenario(sc: &Scenario) -> SolvedTrajectory {
    let built = build(sc).expect("fixture scenario builds");
    let sol = solve(&built.program, &sc.solver);
    built.layout.extract(sc, &built.program, &sol)
}

const CHEMOSTAT: &str = r#"
name = "chemostat"
states = ["S"]
reactions = ["uptake"]
[network]
flow-unit = "m3/day"
[[network.tank]]
volume = 2.0
inflow = 1.0
outflow = 1.0
[horizon]
tau = 30
delta = 0.05
boundary = "initial"
initial = [[5.0]]
[kinetics]
shared = true
[[kinetics.tank]]
kappa = [[-1.0]]
reaction = [{ model = "monod", mu = 2.0, k = 1.5, substrate = "S", biomass = "X" }]
[[biomass]]
kind = "series"
name = "X"
values = [3.0, 3.2, 3.4, 3.6, 3.8, 4.0, 4.2, 4.4, 4.6, 4.8, 5.0, 5.0, 5.0, 5.0, 5.0,
          4.8, 4.6, 4.4, 4.2, 4.0, 3.8, 3.6, 3.4, 3.2, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]
[objective]
kind = "substrate-outflow"
eta = [[1.0]]
[influent]
values = [[10.0]]
"#;

const PRODUCT_CHAIN: &str = r#"
name = "product-chain"
states = ["A", "B"]
reactions = ["a-to-b", "b-uptake"]
[network]
flow-unit = "m3/day"
[[network.tank]]
volume = 1.0
inflow = 0.8
outflow = 0.0
[[network.tank]]
volume = 1.5
inflow = 0.4
outflow = 1.2
[[network.flow]]
from = 0
to = 1
rate = 0.8
[[network.diffusion]]
a = 0
b = 1
rate = 0.1
[horizon]
tau = 24
delta = 0.04
boundary = "initial"
initial = [[4.0, 1.0], [2.0, 2.0]]
[kinetics]
shared = true
[[kinetics.tank]]
kappa = [[-1.0, 0.0], ["1/2", -1.0]]
reaction = [
  { model = "monod", mu = 1.5, k = 2.0, substrate = "A", biomass = "X1" },
  { model = "monod", mu = 1.1, k = 0.7, substrate = "B", biomass = "X2" },
]
[[biomass]]
kind = "constant"
name = "X1"
value = 2.0
[[biomass]]
kind = "sinusoid"
name = "X2"
mean = 1.5
amplitude = 0.5
cycles = 1.0
[objective]
kind = "substrate-outflow"
eta = [[1.0, 0.8]]
[influent]
values = [[6.0, 0.5], [3.0, 1.0]]
"#;

const SWITCHED: &str = r#"
name = "switched-network"
states = ["S"]
reactions = ["uptake"]
[network]
flow-unit = "m3/day"
[[network.tank]]
volume = 1.0
inflow = 1.0
outflow = 0.5
[[network.tank]]
volume = 1.0
inflow = 0.0
outflow = 0.5
[[network.flow]]
from = 0
to = 1
rate = 0.5
[[network.snapshot]]
start = 10
inflow = [2.0, 0.0]
outflow = [1.0, 1.0]
flow = [{ from = 0, to = 1, rate = 1.0 }]
[horizon]
tau = 20
delta = 0.05
boundary = "initial"
initial = [[3.0], [1.0]]
[kinetics]
shared = true
[[kinetics.tank]]
kappa = [[-1.0]]
reaction = [{ model = "monod", mu = 3.0, k = 1.0, substrate = "S", biomass = "X" }]
[[biomass]]
kind = "constant"
name = "X"
value = 1.0
[objective]
kind = "substrate-outflow"
eta = [[1.0]]
[influent]
values = [[8.0]]
"#;

const COMPOSITE: &str = r#"
name = "composite"
states = ["S", "N"]
reactions = ["growth"]
[network]
flow-unit = "m3/day"
[[network.tank]]
volume = 1.0
inflow = 1.0
outflow = 1.0
[horizon]
tau = 16
delta = 0.05
boundary = "initial"
initial = [[4.0, 2.0]]
[kinetics]
shared = true
[[kinetics.tank]]
kappa = [[-1.0], [-0.3]]
reaction = [{ model = "geometric-interactive",
  a = { model = "monod", mu = 2.0, k = 1.0, substrate = "S", biomass = "X" },
  b = { model = "monod", mu = 2.0, k = 0.5, substrate = "N", biomass = "X" } }]
[[biomass]]
kind = "constant"
name = "X"
value = 2.0
[objective]
kind = "substrate-outflow"
eta = [[1.0, 1.0]]
[influent]
values = [[8.0, 3.0]]
"#;

/// The wastewater plants with a fixed influent, a fixed initial state and
/// no bounds or allocation rows.
pub fn wastewater_fixed(tau: usize) -> Scenario {
    let text = presets::WASTEWATER
        .replace("boundary = \"periodic\"", "boundary = \"initial\"\ninitial = [[40.0, 20.0, 3.0, 10.0]]")
        .replace("tau = 96", &format!("tau = {tau}"))
        .replace("amplitude = -100.0", "amplitude = -60.0")
        .replace("amplitude = 100.0", "amplitude = 60.0");
    let mut cfg: bioconvex::scenario::config::Config = toml::from_str(&text).unwrap();
    cfg.constraints = Default::default();
    cfg.influent.totals = None;
    cfg.influent.values = vec![vec![60.0, 25.0, 3.0, 10.0]];
    cfg.name = "wastewater-fixed".into();
    Scenario::from_config(cfg, Path::new(".")).unwrap()
}

/// The gradostat chain run as a transient problem.
pub fn gradostat_transient(s: usize) -> Scenario {
    let mut sc = presets::gradostat(s).unwrap();
    let mut cfg = sc.config.take().unwrap();
    cfg.mode = bioconvex::scenario::config::ModeConfig::Transient;
    cfg.horizon.tau = 20;
    cfg.name = format!("gradostat-transient-{s}");
    Scenario::from_config(cfg, Path::new(".")).unwrap()
}

/// A gradostat chain where every tank also draws effluent, so a
/// substrate-outflow objective weights the substrate in every tank.
pub fn gradostat_side_draw(s: usize) -> Scenario {
    use bioconvex::scenario::config::FlowConfig;
    let mut cfg = presets::gradostat(s).unwrap().config.unwrap();
    let draw = 1.0 / s as f64;
    for (i, t) in cfg.network.tank.iter_mut().enumerate() {
        t.inflow = if i == 0 { 1.0 } else { 0.0 };
        t.outflow = draw;
    }
    cfg.network.flow = (1..s)
        .map(|i| FlowConfig {
            from: i - 1,
            to: i,
            rate: 1.0 - i as f64 * draw,
        })
        .collect();
    cfg.name = format!("gradostat-side-draw-{s}");
    Scenario::from_config(cfg, Path::new(".")).unwrap()
}

/// Transient scenarios with a fixed initial state, fixed influent and no
/// extra rows: the setting of the transient dual identity.
pub fn transient_suite() -> Vec<Scenario> {
    vec![
        load(CHEMOSTAT),
        load(PRODUCT_CHAIN),
        load(SWITCHED),
        load(COMPOSITE),
        wastewater_fixed(24),
        gradostat_transient(3),
    ]
}

/// Runs whose relaxation is expected to be loose: tracking a substrate
/// level above what the kinetics leave rewards consuming less.
pub fn loose_suite() -> Vec<Scenario> {
    let setpoint = |text: &str, name: &str, diagonal: &str, target: &str| {
        let mut cfg: bioconvex::scenario::config::Config = toml::from_str(text).unwrap();
        cfg.objective = toml::from_str(&format!(
            "kind = \"setpoint\"\ndiagonal = {diagonal}\ntarget = {target}"
        ))
        .unwrap();
        cfg.name = name.into();
        Scenario::from_config(cfg, Path::new(".")).unwrap()
    };
    vec![
        setpoint(CHEMOSTAT, "chemostat-setpoint", "[1.0]", "[9.5]"),
        setpoint(PRODUCT_CHAIN, "product-chain-setpoint", "[1.0, 0.0, 1.0, 0.0]", "[6.0, 0.0, 5.0, 0.0]"),
    ]
}

/// Steady-state runs.
pub fn steady_suite() -> Vec<Scenario> {
    let mut out: Vec<Scenario> = [1, 3, 5].iter().map(|&s| presets::gradostat(s).unwrap()).collect();
    let mut cfg: bioconvex::scenario::config::Config = toml::from_str(PRODUCT_CHAIN).unwrap();
    cfg.mode = bioconvex::scenario::config::ModeConfig::SteadyState;
    cfg.kinetics.tank[0].reaction[1] = toml::from_str(
        r#"model = "monod"
mu = 1.1
k = 0.7
substrate = "B"
biomass = "X1""#,
    )
    .unwrap();
    cfg.biomass.retain(|b| b.name() == "X1");
    cfg.name = "product-chain-steady".into();
    out.push(Scenario::from_config(cfg, Path::new(".")).unwrap());
    out
}

// ---------------------------------------------------------------------------
// rate formulas, written out again

pub fn rate(model: &GrowthModel, x: &[f64], step: usize) -> f64 {
    match model {
        GrowthModel::Monod {
            mu,
            k_m,
            substrate,
            biomass,
        } => {
            let s = x[*substrate].max(0.0);
            let xb = match biomass {
                Biomass::Profile(p) => p.at(step),
                Biomass::State(i) => x[*i].max(0.0),
            };
            mu * xb * s / (k_m + s)
        }
        GrowthModel::Contois {
            mu,
            k_c,
            substrate,
            biomass,
        } => {
            let s = x[*substrate].max(0.0);
            let xb = x[*biomass].max(0.0);
            if xb == 0.0 && s == 0.0 {
                0.0
            } else {
                mu * xb * s / (k_c * xb + s)
            }
        }
        GrowthModel::NonInteractive { a, b } => rate(a, x, step).min(rate(b, x, step)),
        GrowthModel::GeometricInteractive { a, b } => (rate(a, x, step) * rate(b, x, step)).sqrt(),
    }
}

/// Largest `(φ − T)/(1 + ‖φ‖∞)` over a trajectory, with `φ` from [`rate`].
pub fn worst_relative_gap(sc: &Scenario, xi: &[Vec<f64>], rates: &[Vec<f64>]) -> f64 {
    let m = sc.kinetics.m;
    let r = sc.kinetics.r;
    let mut worst: f64 = 0.0;
    for (k, (x, t)) in xi.iter().zip(rates).enumerate() {
        let step = k + 1;
        let phi: Vec<f64> = sc
            .kinetics
            .tanks
            .iter()
            .enumerate()
            .flat_map(|(i, tank)| {
                let xs = &x[i * m..(i + 1) * m];
                tank.reactions.iter().map(move |rx| rate(rx, xs, step))
            })
            .collect();
        let scale = 1.0 + phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for j in 0..sc.n_tanks() * r {
            worst = worst.max((phi[j] - t[j]) / scale);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// tiny conic programs and their brute-force oracles

/// What the oracle knows about a generated program.
#[derive(Debug, Clone)]
pub enum Truth {
    Optimal(f64),
    Infeasible,
}

/// A convex region in the plane described by membership, with a known
/// interior point, used by the ray oracle.
pub struct PlaneCase {
    pub program: ConicProgram,
    /// Objective as a function of `(x, y)` after eliminating extra columns.
    pub cost: [f64; 2],
    pub cost0: f64,
    pub interior: [f64; 2],
    pub member: Box<dyn Fn(f64, f64) -> bool>,
}

/// Largest `t ≥ 0` with `p + t d` in the region (bisection).
fn ray_extent(member: &dyn Fn(f64, f64) -> bool, p: [f64; 2], d: [f64; 2]) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while member(p[0] + hi * d[0], p[1] + hi * d[1]) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if member(p[0] + mid * d[0], p[1] + mid * d[1]) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    lo
}

/// Minimum of a linear cost over a compact convex region with a known
/// interior point, by scanning boundary rays and refining around the best.
pub fn ray_oracle(case: &PlaneCase) -> f64 {
    let p = case.interior;
    let f = |theta: f64| {
        let d = [theta.cos(), theta.sin()];
        let t = ray_extent(&*case.member, p, d);
        case.cost0 + case.cost[0] * (p[0] + t * d[0]) + case.cost[1] * (p[1] + t * d[1])
    };
    let n = 3600;
    let tau = std::f64::consts::TAU;
    let (mut best_k, mut best) = (0, f64::INFINITY);
    for k in 0..n {
        let v = f(tau * k as f64 / n as f64);
        if v < best {
            best = v;
            best_k = k;
        }
    }
    // golden section on the bracketing arc
    let (mut a, mut b) = (tau * (best_k as f64 - 1.0) / n as f64, tau * (best_k as f64 + 1.0) / n as f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    best.min(fc).min(fd)
}

fn var(pb: &mut ProgramBuilder) -> Affine {
    Affine::var(pb.add_var(None))
}

/// A random feasible, bounded program in two free columns, optionally with
/// a third column pinned by an equality row. Constraints: a box, random
/// half-planes, random discs and a random hyperbolic row, all containing a
/// random interior point.
pub fn random_plane_case(rng: &mut impl Rng) -> PlaneCase {
    let mut pb = ProgramBuilder::new();
    let x = var(&mut pb);
    let y = var(&mut pb);
    let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let bound = 3.0;
    let mut checks: Vec<Box<dyn Fn(f64, f64) -> bool>> = Vec::new();
    for (e, v) in [(x.clone(), 0), (y.clone(), 1)] {
        pb.add_cone(ConeRow::nonneg(Affine::constant(bound) - e.clone()), RowTag::Other);
        pb.add_cone(ConeRow::nonneg(e + Affine::constant(bound)), RowTag::Other);
        checks.push(Box::new(move |a, b| [a, b][v].abs() <= bound));
    }
    for _ in 0..rng.random_range(0..4) {
        let (a0, a1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rhs = a0 * p[0] + a1 * p[1] + rng.random_range(0.05..1.0);
        pb.add_cone(
            ConeRow::nonneg(Affine::constant(rhs) - x.clone() * a0 - y.clone() * a1),
            RowTag::Other,
        );
        checks.push(Box::new(move |u, v| a0 * u + a1 * v <= rhs));
    }
    for _ in 0..rng.random_range(0..3) {
        let c = [p[0] + rng.random_range(-1.0..1.0), p[1] + rng.random_range(-1.0..1.0)];
        let r = ((p[0] - c[0]).hypot(p[1] - c[1])) + rng.random_range(0.1..1.5);
        pb.add_cone(
            ConeRow::soc(
                Affine::constant(r),
                vec![x.clone() - Affine::constant(c[0]), y.clone() - Affine::constant(c[1])],
            ),
            RowTag::Other,
        );
        checks.push(Box::new(move |u, v| (u - c[0]).hypot(v - c[1]) <= r));
    }
    if rng.random_bool(0.5) {
        // (y + s)² ≤ (x + s')·(k) style: w² ≤ u·v with u = x + α, v = β, w = y − p_y
        let alpha = -p[0] + rng.random_range(0.5..2.0);
        let beta = rng.random_range(0.5..3.0);
        let py = p[1];
        pb.add_cone(
            ConeRow::hyperbolic(
                y.clone() - Affine::constant(py),
                x.clone() + Affine::constant(alpha),
                Affine::constant(beta),
            ),
            RowTag::Other,
        );
        checks.push(Box::new(move |u, v| u + alpha >= 0.0 && (v - py) * (v - py) <= (u + alpha) * beta));
    }
    let mut cost = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let mut cost0 = 0.0;
    pb.add_cost_expr(&(x.clone() * cost[0] + y.clone() * cost[1]), 1.0);
    if rng.random_bool(0.5) {
        // z = g·(x, y) + γ through an equality row, with ‖(x, y) − q‖ ≤ z
        let z = var(&mut pb);
        let g = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        let q = [p[0] + rng.random_range(-0.5..0.5), p[1] + rng.random_range(-0.5..0.5)];
        let gamma = (p[0] - q[0]).hypot(p[1] - q[1]) - g[0] * p[0] - g[1] * p[1] + rng.random_range(0.2..1.5);
        pb.add_eq(
            z.clone() - x.clone() * g[0] - y.clone() * g[1] - Affine::constant(gamma),
            RowTag::Other,
        );
        pb.add_cone(
            ConeRow::soc(
                z.clone(),
                vec![x.clone() - Affine::constant(q[0]), y.clone() - Affine::constant(q[1])],
            ),
            RowTag::Other,
        );
        checks.push(Box::new(move |u, v| (u - q[0]).hypot(v - q[1]) <= g[0] * u + g[1] * v + gamma));
        let wz = rng.random_range(-1.0..1.0);
        pb.add_cost_expr(&(z * wz), 1.0);
        cost[0] += wz * g[0];
        cost[1] += wz * g[1];
        cost0 += wz * gamma;
    }
    PlaneCase {
        program: pb.build(),
        cost,
        cost0,
        interior: p,
        member: Box::new(move |u, v| checks.iter().all(|c| c(u, v))),
    }
}

/// A random bounded LP in three columns with a vertex-enumeration oracle.
pub fn random_lp(rng: &mut impl Rng) -> (ConicProgram, f64) {
    let n = 3;
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for i in 0..n {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        rows.push((e, 2.0));
        e[i] = -1.0;
        rows.push((e, 2.0));
    }
    let p: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    for _ in 0..rng.random_range(1..5) {
        let a: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let rhs = a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + rng.random_range(0.05..1.0);
        rows.push((a, rhs));
    }
    let c: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let mut pb = ProgramBuilder::new();
    let v: Vec<Affine> = (0..n).map(|_| var(&mut pb)).collect();
    for k in 0..n {
        pb.add_cost_expr(&(v[k].clone() * c[k]), 1.0);
    }
    for (a, rhs) in &rows {
        let mut e = Affine::constant(*rhs);
        for k in 0..n {
            e = e - v[k].clone() * a[k];
        }
        pb.add_cone(ConeRow::nonneg(e), RowTag::Other);
    }
    // vertex enumeration
    let mut best = f64::INFINITY;
    let m = rows.len();
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let mat = nalgebra::Matrix3::from_rows(&[
                    nalgebra::RowVector3::from(rows[i].0),
                    nalgebra::RowVector3::from(rows[j].0),
                    nalgebra::RowVector3::from(rows[k].0),
                ]);
                let Some(inv) = mat.try_inverse() else { continue };
                if mat.determinant().abs() < 1e-9 {
                    continue;
                }
                let xv = inv * nalgebra::Vector3::new(rows[i].1, rows[j].1, rows[k].1);
                let feasible = rows
                    .iter()
                    .all(|(a, rhs)| a[0] * xv[0] + a[1] * xv[1] + a[2] * xv[2] <= rhs + 1e-9);
                if feasible {
                    best = best.min(c[0] * xv[0] + c[1] * xv[1] + c[2] * xv[2]);
                }
            }
        }
    }
    (pb.build(), best)
}

/// Two discs with disjoint closures (infeasible by construction).
pub fn random_disjoint_discs(rng: &mut impl Rng) -> ConicProgram {
    let mut pb = ProgramBuilder::new();
    let x = var(&mut pb);
    let y = var(&mut pb);
    pb.add_cost_expr(&(x.clone() * rng.random_range(-1.0..1.0) + y.clone()), 1.0);
    let c1 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (r1, r2) = (rng.random_range(0.3..1.0), rng.random_range(0.3..1.0));
    let dist = r1 + r2 + rng.random_range(0.05..1.0);
    let c2 = [c1[0] + dist * angle.cos(), c1[1] + dist * angle.sin()];
    for (c, r) in [(c1, r1), (c2, r2)] {
        pb.add_cone(
            ConeRow::soc(
                Affine::constant(r),
                vec![x.clone() - Affine::constant(c[0]), y.clone() - Affine::constant(c[1])],
            ),
            RowTag::Other,
        );
    }
    pb.build()
}
