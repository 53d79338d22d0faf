//! Scenarios: a validated, unit-resolved problem instance, loaded from the
//! TOML schema in [`config`].

pub mod config;
pub mod influent;
pub mod presets;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::discretize::{Boundary, TimeGrid};
use crate::error::{Error, Result, ValidationErrors};
use crate::exactness::ExactnessOptions;
use crate::kinetics::{Biomass, BiomassProfile, GrowthModel, KineticsSpec, TankKinetics};
use crate::network::{NetworkSchedule, TankNetwork};
use crate::program::{Allocation, ConstraintSet, ObjectiveSpec, UpperBound};
use crate::solver::SolverOptions;
use config::{
    BiomassConfig, BoundaryConfig, Config, ModeConfig, ObjectiveConfig, ObjectiveKind, ReactionConfig, TotalsSource,
    UnitSystem,
};

/// Largest accepted horizon.
pub const MAX_TAU: usize = 100_000;
pub const MAX_TANKS: usize = 256;
pub const MAX_STATES: usize = 64;
pub const MAX_REACTIONS: usize = 64;
/// Largest accepted `s·m`; certificate matrices are dense `ms × ms`.
pub const MAX_LIFTED: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Transient,
    SteadyState,
}

/// Influent concentrations per step (`ms` entries each). Entries that are
/// allocated by a constraint are decision variables and their values here
/// are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Influent {
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub state_names: Vec<String>,
    pub reaction_names: Vec<String>,
    pub network: NetworkSchedule,
    pub kinetics: KineticsSpec,
    pub grid: TimeGrid,
    pub boundary: Boundary,
    pub objective: ObjectiveSpec,
    pub constraints: ConstraintSet,
    pub influent: Influent,
    pub solver: SolverOptions,
    pub exactness: ExactnessOptions,
    /// Remarks raised while resolving the config (unit conversions,
    /// truncated weight vectors).
    pub notes: Vec<String>,
    /// Source config, when loaded from a file.
    pub config: Option<Config>,
}

fn flow_factor(unit: &str) -> Option<f64> {
    match unit {
        "m3/s" => Some(86_400.0),
        "m3/h" => Some(24.0),
        "m3/day" | "m3/d" => Some(1.0),
        _ => None,
    }
}

/// Units of the step per day; the step in days is `delta / factor`.
fn time_factor(unit: &str) -> Option<f64> {
    match unit {
        "min" => Some(1440.0),
        "h" => Some(24.0),
        "day" | "d" => Some(1.0),
        _ => None,
    }
}

fn rate_factor(unit: &str) -> Option<f64> {
    match unit {
        "1/day" | "1/d" => Some(1.0),
        "1/h" => Some(24.0),
        _ => None,
    }
}

/// Expands a weight table given per tank or as one shared row, dropping
/// trailing zero entries beyond `width` (with a note) and rejecting nonzero
/// ones.
fn weight_rows(
    rows: &[Vec<f64>],
    s: usize,
    width: usize,
    loc: &str,
    errs: &mut ValidationErrors,
    notes: &mut Vec<String>,
) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = match rows.len() {
        1 => vec![rows[0].clone(); s],
        n if n == s => rows.to_vec(),
        n => {
            errs.push(loc, format!("expected 1 or {s} rows, found {n}"));
            return vec![vec![0.0; width]; s];
        }
    };
    let mut truncated = false;
    let out = rows
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            if row.len() > width {
                if row[width..].iter().all(|v| *v == 0.0) {
                    truncated = true;
                    row.truncate(width);
                } else {
                    errs.push(
                        format!("{loc}[{i}]"),
                        format!("{} entries for {width} columns; extra entries must be zero", row.len()),
                    );
                }
            } else if row.len() < width {
                errs.push(format!("{loc}[{i}]"), format!("expected {width} entries, found {}", row.len()));
            }
            row
        })
        .collect();
    if truncated {
        notes.push(format!(
            "{loc}: rows longer than {width} entries were truncated to the first {width} (extra entries were zero)"
        ));
    }
    out
}

struct Resolver<'a> {
    cfg: &'a Config,
    base: &'a Path,
    errs: ValidationErrors,
    notes: Vec<String>,
    states: HashMap<&'a str, usize>,
}

impl<'a> Resolver<'a> {
    fn state(&mut self, name: &str, loc: &str) -> usize {
        match self.states.get(name) {
            Some(&k) => k,
            None => {
                self.errs.push(loc, format!("unknown state {name:?}"));
                0
            }
        }
    }

    fn read(&mut self, rel: &str, loc: &str) -> Option<influent::Table> {
        let path = self.base.join(rel);
        match std::fs::read_to_string(&path).map_err(Error::from).and_then(|t| influent::read_table(&t)) {
            Ok(t) => Some(t),
            Err(e) => {
                self.errs.push(loc, format!("{}: {e}", path.display()));
                None
            }
        }
    }

    fn reaction(
        &mut self,
        rc: &ReactionConfig,
        loc: &str,
        rate: f64,
        profiles: &HashMap<String, BiomassProfile>,
    ) -> GrowthModel {
        match rc {
            ReactionConfig::Monod {
                mu,
                k,
                substrate,
                biomass,
                biomass_state,
            } => {
                let substrate = self.state(substrate, &format!("{loc}.substrate"));
                let biomass = match (biomass, biomass_state) {
                    (Some(p), None) => match profiles.get(p) {
                        Some(prof) => Biomass::Profile(prof.clone()),
                        None => {
                            self.errs.push(format!("{loc}.biomass"), format!("unknown biomass profile {p:?}"));
                            Biomass::Profile(BiomassProfile::Constant(0.0))
                        }
                    },
                    (None, Some(st)) => Biomass::State(self.state(st, &format!("{loc}.biomass-state"))),
                    _ => {
                        self.errs.push(loc, "Monod growth needs exactly one of biomass or biomass-state");
                        Biomass::Profile(BiomassProfile::Constant(0.0))
                    }
                };
                GrowthModel::Monod {
                    mu: mu * rate,
                    k_m: *k,
                    substrate,
                    biomass,
                }
            }
            ReactionConfig::Contois { mu, k, substrate, biomass } => GrowthModel::Contois {
                mu: mu * rate,
                k_c: *k,
                substrate: self.state(substrate, &format!("{loc}.substrate")),
                biomass: self.state(biomass, &format!("{loc}.biomass")),
            },
            ReactionConfig::NonInteractive { a, b } => GrowthModel::NonInteractive {
                a: Box::new(self.reaction(a, &format!("{loc}.a"), rate, profiles)),
                b: Box::new(self.reaction(b, &format!("{loc}.b"), rate, profiles)),
            },
            ReactionConfig::GeometricInteractive { a, b } => GrowthModel::GeometricInteractive {
                a: Box::new(self.reaction(a, &format!("{loc}.a"), rate, profiles)),
                b: Box::new(self.reaction(b, &format!("{loc}.b"), rate, profiles)),
            },
        }
    }

    fn objective(&mut self, oc: &ObjectiveConfig, loc: &str, s: usize, m: usize, r: usize) -> ObjectiveSpec {
        let unused = |this: &mut Self, present: bool, field: &str| {
            if present {
                this.errs.push(format!("{loc}.{field}"), format!("not used by objective kind {:?}", oc.kind));
            }
        };
        match oc.kind {
            ObjectiveKind::SubstrateOutflow => {
                unused(self, oc.sigma.is_some(), "sigma");
                unused(self, oc.capture.is_some(), "capture");
                unused(self, oc.matrix.is_some() || oc.diagonal.is_some() || oc.target.is_some(), "matrix");
                unused(self, oc.term.is_some(), "term");
                let rows = oc.eta.clone().unwrap_or_else(|| {
                    self.errs.push(format!("{loc}.eta"), "substrate-outflow needs eta");
                    vec![vec![0.0; m]]
                });
                let eta = weight_rows(&rows, s, m, &format!("{loc}.eta"), &mut self.errs, &mut self.notes);
                ObjectiveSpec::SubstrateOutflow { eta }
            }
            ObjectiveKind::BiogasMax => {
                unused(self, oc.eta.is_some(), "eta");
                unused(self, oc.matrix.is_some() || oc.diagonal.is_some() || oc.target.is_some(), "matrix");
                unused(self, oc.term.is_some(), "term");
                let rows = oc.sigma.clone().unwrap_or_else(|| {
                    self.errs.push(format!("{loc}.sigma"), "biogas-max needs sigma");
                    vec![vec![0.0; r]]
                });
                let sigma = weight_rows(&rows, s, r, &format!("{loc}.sigma"), &mut self.errs, &mut self.notes);
                self.notes.push(format!(
                    "{loc}: sigma weights are read per reaction (r entries per tank), since they multiply the rates T_i"
                ));
                ObjectiveSpec::BiogasMax {
                    sigma,
                    capture: oc.capture.clone().unwrap_or_else(|| (0..s).collect()),
                }
            }
            ObjectiveKind::Setpoint => {
                unused(self, oc.eta.is_some(), "eta");
                unused(self, oc.sigma.is_some() || oc.capture.is_some(), "sigma");
                unused(self, oc.term.is_some(), "term");
                let n = s * m;
                let a = match (&oc.matrix, &oc.diagonal) {
                    (Some(rows), None) => {
                        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                            self.errs.push(format!("{loc}.matrix"), format!("expected {n} rows of {n} entries"));
                            DMatrix::zeros(n, n)
                        } else {
                            DMatrix::from_fn(n, n, |i, j| rows[i][j])
                        }
                    }
                    (None, Some(d)) => {
                        if d.len() != n {
                            self.errs.push(format!("{loc}.diagonal"), format!("expected {n} entries"));
                            DMatrix::zeros(n, n)
                        } else {
                            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))
                        }
                    }
                    _ => {
                        self.errs.push(loc, "setpoint needs exactly one of matrix or diagonal");
                        DMatrix::zeros(n, n)
                    }
                };
                let target = oc.target.clone().unwrap_or_else(|| {
                    self.errs.push(format!("{loc}.target"), "setpoint needs a target");
                    vec![0.0; n]
                });
                ObjectiveSpec::SetpointTracking { a, target }
            }
            ObjectiveKind::Composite => {
                let terms = oc.term.clone().unwrap_or_default();
                if terms.is_empty() {
                    self.errs.push(format!("{loc}.term"), "composite needs at least one term");
                }
                ObjectiveSpec::Composite(
                    terms
                        .iter()
                        .enumerate()
                        .map(|(k, t)| {
                            let tl = format!("{loc}.term[{k}]");
                            if t.kind == ObjectiveKind::Composite {
                                self.errs.push(&tl, "composite terms cannot nest");
                            }
                            (t.weight.unwrap_or(1.0), self.objective(t, &tl, s, m, r))
                        })
                        .collect(),
                )
            }
        }
    }
}

impl Scenario {
    /// A transient scenario on a constant network with zero initial state,
    /// zero influent and a zero objective.
    pub fn minimal(net: TankNetwork, kinetics: KineticsSpec, tau: usize, delta: f64) -> Result<Self> {
        let s = net.n_tanks();
        let m = kinetics.m;
        Ok(Scenario {
            name: "scenario".into(),
            mode: Mode::Transient,
            state_names: (0..m).map(|e| format!("x{e}")).collect(),
            reaction_names: (0..kinetics.r).map(|j| format!("r{j}")).collect(),
            network: NetworkSchedule::constant(net)?,
            grid: TimeGrid::new(tau, delta)?,
            boundary: Boundary::Initial(vec![0.0; s * m]),
            objective: ObjectiveSpec::SubstrateOutflow {
                eta: vec![vec![0.0; m]; s],
            },
            constraints: ConstraintSet::default(),
            influent: Influent {
                values: vec![vec![0.0; s * m]; tau],
            },
            kinetics,
            solver: SolverOptions::default(),
            exactness: ExactnessOptions::default(),
            notes: Vec::new(),
            config: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::from_toml(&text, &base)
    }

    /// Parses and resolves a scenario; relative file references resolve
    /// against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        Self::from_config(cfg, base)
    }

    /// Canonical TOML of the source config.
    pub fn to_toml(&self) -> Result<String> {
        match &self.config {
            Some(c) => Ok(toml::to_string(c)?),
            None => Err(Error::invalid("scenario", "built in code; there is no config to emit")),
        }
    }

    pub fn n_tanks(&self) -> usize {
        self.network.n_tanks()
    }

    /// Number of steps of the program (1 in steady state).
    pub fn steps(&self) -> usize {
        match self.mode {
            Mode::Transient => self.grid.tau,
            Mode::SteadyState => 1,
        }
    }

    pub fn from_config(cfg: Config, base: &Path) -> Result<Self> {
        let mut rs = Resolver {
            cfg: &cfg,
            base,
            errs: ValidationErrors::default(),
            notes: Vec::new(),
            states: HashMap::new(),
        };
        let c = rs.cfg;

        // dimensions and caps
        let s = c.network.tank.len();
        let m = c.states.len();
        if s == 0 || s > MAX_TANKS {
            rs.errs.push("network.tank", format!("between 1 and {MAX_TANKS} tanks required, found {s}"));
        }
        if m == 0 || m > MAX_STATES {
            rs.errs.push("states", format!("between 1 and {MAX_STATES} states required, found {m}"));
        }
        if s * m > MAX_LIFTED {
            rs.errs.push("states", format!("tanks × states is {}, the limit is {MAX_LIFTED}", s * m));
        }
        for (k, name) in c.states.iter().enumerate() {
            if name.is_empty() || c.states[..k].contains(name) {
                rs.errs.push(format!("states[{k}]"), "state names must be nonempty and unique");
            }
            rs.states.insert(name.as_str(), k);
        }
        let r = if c.reactions.is_empty() {
            c.kinetics.tank.first().map_or(0, |t| t.reaction.len())
        } else {
            c.reactions.len()
        };
        if r > MAX_REACTIONS {
            rs.errs.push("reactions", format!("at most {MAX_REACTIONS} reactions, found {r}"));
        }
        let reaction_names: Vec<String> = if c.reactions.is_empty() {
            (0..r).map(|j| format!("r{j}")).collect()
        } else {
            c.reactions.clone()
        };
        let tau = c.horizon.tau;
        if tau == 0 || tau > MAX_TAU {
            rs.errs.push("horizon.tau", format!("between 1 and {MAX_TAU} steps required, found {tau}"));
        }
        if !rs.errs.is_empty() {
            return Err(Error::Validation(rs.errs));
        }
        let mode = match c.mode {
            ModeConfig::Transient => Mode::Transient,
            ModeConfig::SteadyState => Mode::SteadyState,
        };
        let steps = match mode {
            Mode::Transient => tau,
            Mode::SteadyState => 1,
        };

        // units
        let physical = c.units == UnitSystem::Physical;
        let pick = |errs: &mut ValidationErrors, f: Option<f64>, loc: &str, unit: &str| match f {
            Some(v) => {
                if physical {
                    v
                } else {
                    1.0
                }
            }
            None => {
                errs.push(loc, format!("unknown unit {unit:?}"));
                1.0
            }
        };
        let qf = pick(&mut rs.errs, flow_factor(&c.network.flow_unit), "network.flow-unit", &c.network.flow_unit);
        let tf = pick(
            &mut rs.errs,
            time_factor(&c.horizon.delta_unit),
            "horizon.delta-unit",
            &c.horizon.delta_unit,
        );
        let rf = pick(
            &mut rs.errs,
            rate_factor(&c.kinetics.rate_unit),
            "kinetics.rate-unit",
            &c.kinetics.rate_unit,
        );
        if physical && (qf != 1.0 || tf != 1.0 || rf != 1.0) {
            rs.notes.push(format!(
                "units: flows ×{qf} ({} to m3/day), step ÷{tf} ({} to days), rates ×{rf} ({} to 1/day)",
                c.network.flow_unit, c.horizon.delta_unit, c.kinetics.rate_unit
            ));
        }
        if !physical {
            rs.notes.push("units: paper convention, all numbers used as written".into());
        }

        // network
        let volumes: Vec<f64> = c.network.tank.iter().map(|t| t.volume).collect();
        let mk_net = |errs: &mut ValidationErrors,
                      loc: &str,
                      inflow: Vec<f64>,
                      outflow: Vec<f64>,
                      flows: &[config::FlowConfig],
                      diff: &[config::DiffusionConfig]| {
            let mut net = TankNetwork::isolated(volumes.clone(), inflow, outflow);
            for (k, f) in flows.iter().enumerate() {
                if f.from >= s || f.to >= s {
                    errs.push(format!("{loc}.flow[{k}]"), format!("tank index out of range (s = {s})"));
                } else {
                    net.flows[(f.from, f.to)] += f.rate * qf;
                }
            }
            for (k, d) in diff.iter().enumerate() {
                if d.a >= s || d.b >= s {
                    errs.push(format!("{loc}.diffusion[{k}]"), format!("tank index out of range (s = {s})"));
                } else {
                    net.diffusion[(d.a, d.b)] += d.rate * qf;
                    if d.a != d.b {
                        net.diffusion[(d.b, d.a)] += d.rate * qf;
                    }
                }
            }
            net
        };
        let mut snapshots = vec![(
            1,
            mk_net(
                &mut rs.errs,
                "network",
                c.network.tank.iter().map(|t| t.inflow * qf).collect(),
                c.network.tank.iter().map(|t| t.outflow * qf).collect(),
                &c.network.flow,
                &c.network.diffusion,
            ),
        )];
        for (k, snap) in c.network.snapshot.iter().enumerate() {
            let loc = format!("network.snapshot[{k}]");
            if snap.inflow.len() != s || snap.outflow.len() != s {
                rs.errs.push(&loc, format!("inflow and outflow need {s} entries"));
                continue;
            }
            let net = mk_net(
                &mut rs.errs,
                &loc,
                snap.inflow.iter().map(|v| v * qf).collect(),
                snap.outflow.iter().map(|v| v * qf).collect(),
                &snap.flow,
                &snap.diffusion,
            );
            snapshots.push((snap.start, net));
        }
        let network = match NetworkSchedule::new(snapshots) {
            Ok(n) => Some(n),
            Err(Error::Validation(v)) => {
                rs.errs.extend(v);
                None
            }
            Err(e) => return Err(e),
        };

        // horizon
        let delta = c.horizon.delta / tf;
        let grid = match TimeGrid::new(steps, if mode == Mode::SteadyState { 1.0 } else { delta }) {
            Ok(g) => Some(g),
            Err(_) => {
                rs.errs.push("horizon.delta", "step must be positive and finite");
                None
            }
        };
        let boundary = match (c.horizon.boundary, mode) {
            (BoundaryConfig::Periodic, Mode::Transient) => {
                if !c.horizon.initial.is_empty() {
                    rs.errs.push("horizon.initial", "a periodic boundary takes no initial state");
                }
                Boundary::Periodic
            }
            _ => {
                let rows = if c.horizon.initial.is_empty() {
                    vec![vec![0.0; m]]
                } else {
                    c.horizon.initial.clone()
                };
                let rows = match rows.len() {
                    1 => vec![rows[0].clone(); s],
                    n if n == s => rows,
                    n => {
                        rs.errs.push("horizon.initial", format!("expected 1 or {s} rows, found {n}"));
                        vec![vec![0.0; m]; s]
                    }
                };
                let mut x0 = Vec::with_capacity(s * m);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != m {
                        rs.errs.push(format!("horizon.initial[{i}]"), format!("expected {m} entries"));
                    }
                    if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        rs.errs.push(format!("horizon.initial[{i}]"), "entries must be finite and nonnegative");
                    }
                    x0.extend(row.iter().copied().chain(std::iter::repeat(0.0)).take(m));
                }
                Boundary::Initial(x0)
            }
        };

        // biomass profiles
        let mut profiles: HashMap<String, BiomassProfile> = HashMap::new();
        for (k, b) in c.biomass.iter().enumerate() {
            let loc = format!("biomass[{k}]");
            let prof = match b {
                BiomassConfig::Constant { value, .. } => BiomassProfile::Constant(*value),
                BiomassConfig::Sinusoid {
                    mean,
                    amplitude,
                    cycles,
                    phase,
                    ..
                } => BiomassProfile::Series(
                    (1..=tau)
                        .map(|n| {
                            mean + amplitude
                                * (2.0 * std::f64::consts::PI * cycles * n as f64 / tau as f64 + phase).sin()
                        })
                        .map(|v| if v.abs() < 1e-9 * mean.abs().max(1.0) { 0.0 } else { v })
                        .collect(),
                ),
                BiomassConfig::Series { values, .. } => {
                    if values.len() < tau && mode == Mode::Transient {
                        rs.errs.push(&loc, format!("series has {} values for {tau} steps", values.len()));
                    }
                    if values.is_empty() {
                        rs.errs.push(&loc, "series is empty");
                        continue;
                    }
                    BiomassProfile::Series(values.clone())
                }
            };
            if profiles.insert(b.name().to_string(), prof).is_some() {
                rs.errs.push(&loc, format!("duplicate biomass name {:?}", b.name()));
            }
        }

        // kinetics
        let tank_cfgs: Vec<&config::TankKineticsConfig> = if c.kinetics.shared {
            if c.kinetics.tank.len() != 1 {
                rs.errs.push("kinetics.tank", "shared kinetics need exactly one tank entry");
            }
            c.kinetics.tank.iter().take(1).cycle().take(s).collect()
        } else {
            if c.kinetics.tank.len() != s && !(c.kinetics.tank.is_empty() && r == 0) {
                rs.errs.push("kinetics.tank", format!("expected {s} tank entries, found {}", c.kinetics.tank.len()));
            }
            c.kinetics.tank.iter().collect()
        };
        let mut tanks = Vec::with_capacity(s);
        for i in 0..s {
            let Some(tc) = tank_cfgs.get(i) else {
                tanks.push(TankKinetics {
                    reactions: Vec::new(),
                    kappa: DMatrix::zeros(m, r),
                });
                continue;
            };
            let loc = if c.kinetics.shared {
                "kinetics.tank[0]".to_string()
            } else {
                format!("kinetics.tank[{i}]")
            };
            let mut kappa = DMatrix::zeros(m, r);
            if tc.kappa.len() != m || tc.kappa.iter().any(|row| row.len() != r) {
                rs.errs.push(format!("{loc}.kappa"), format!("expected {m} rows of {r} entries"));
            } else {
                for (e, row) in tc.kappa.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        match v.resolve() {
                            Ok(x) => kappa[(e, j)] = x,
                            Err(msg) => rs.errs.push(format!("{loc}.kappa[{e}][{j}]"), msg),
                        }
                    }
                }
            }
            let reactions = tc
                .reaction
                .iter()
                .enumerate()
                .map(|(j, rc)| rs.reaction(rc, &format!("{loc}.reaction[{j}]"), rf, &profiles))
                .collect();
            tanks.push(TankKinetics { reactions, kappa });
        }
        let kinetics = KineticsSpec { m, r, tanks };
        rs.errs.extend(kinetics.validate(tau));

        // objective
        let objective = rs.objective(&c.objective, "objective", s, m, r);
        objective.validate(s, m, r, "objective", &mut rs.errs);

        // influent
        let mut fixed = match c.influent.values.len() {
            0 => vec![vec![0.0; m]; s],
            1 => vec![c.influent.values[0].clone(); s],
            n if n == s => c.influent.values.clone(),
            n => {
                rs.errs.push("influent.values", format!("expected 1 or {s} rows, found {n}"));
                vec![vec![0.0; m]; s]
            }
        };
        for (i, row) in fixed.iter_mut().enumerate() {
            if row.len() != m {
                rs.errs.push(format!("influent.values[{i}]"), format!("expected {m} entries"));
                row.resize(m, 0.0);
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                rs.errs.push(format!("influent.values[{i}]"), "entries must be finite and nonnegative");
            }
        }
        let flat: Vec<f64> = fixed.concat();
        let mut values = vec![flat; steps];
        if let Some(path) = &c.influent.csv {
            if let Some(table) = rs.read(path, "influent.csv") {
                if table.rows() < steps {
                    rs.errs.push("influent.csv", format!("{} rows for {steps} steps", table.rows()));
                }
                for (name, col) in table.names.iter().zip(&table.columns) {
                    let parsed = name.strip_prefix("xin:").and_then(|rest| {
                        let (t, st) = rest.split_once(':')?;
                        Some((t.parse::<usize>().ok()?, rs.states.get(st).copied()?))
                    });
                    match parsed {
                        Some((t, e)) if t < s => {
                            for (n, row) in values.iter_mut().enumerate() {
                                if let Some(v) = col.get(n) {
                                    row[t * m + e] = *v;
                                }
                            }
                        }
                        _ if name == "step" => {}
                        _ => rs.errs.push("influent.csv", format!("unrecognized column {name:?}")),
                    }
                }
            }
        }

        // totals
        let mut totals: HashMap<String, Vec<f64>> = HashMap::new();
        if let Some(tc) = &c.influent.totals {
            for (k, sc) in tc.series.iter().enumerate() {
                for (l, msg) in influent::check_series(sc, &format!("influent.totals.series[{k}]")) {
                    rs.errs.push(l, msg);
                }
            }
            let series: Vec<(String, Vec<f64>)> = match tc.source {
                TotalsSource::Synthetic => influent::synth_totals(tc, tau),
                TotalsSource::Values => tc.series.iter().map(|s| (s.name.clone(), s.values.clone())).collect(),
                TotalsSource::Csv => match &tc.path {
                    None => {
                        rs.errs.push("influent.totals.path", "csv source needs a path");
                        Vec::new()
                    }
                    Some(p) => match rs.read(p, "influent.totals.path") {
                        Some(table) => tc
                            .series
                            .iter()
                            .map(|s| match table.column(&s.name) {
                                Some(col) => (s.name.clone(), col.to_vec()),
                                None => {
                                    rs.errs.push("influent.totals.path", format!("no column {:?}", s.name));
                                    (s.name.clone(), Vec::new())
                                }
                            })
                            .collect(),
                        None => Vec::new(),
                    },
                },
            };
            for (name, v) in series {
                if v.len() < steps {
                    rs.errs.push("influent.totals", format!("series {name:?} has {} values for {steps} steps", v.len()));
                }
                if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    rs.errs.push("influent.totals", format!("series {name:?} must be finite and nonnegative"));
                }
                totals.insert(name, v);
            }
        }

        // constraints
        let mut constraints = ConstraintSet::default();
        for (k, ub) in c.constraints.upper_bound.iter().enumerate() {
            let entry = rs.state(&ub.state, &format!("constraints.upper-bound[{k}].state"));
            constraints.upper_bounds.push(UpperBound {
                entry,
                value: ub.value,
                tanks: ub.tanks.clone(),
            });
        }
        for (k, al) in c.constraints.allocation.iter().enumerate() {
            let loc = format!("constraints.allocation[{k}]");
            let entry = rs.state(&al.state, &format!("{loc}.state"));
            let series = match totals.get(&al.source) {
                Some(v) => v.iter().copied().take(steps).collect(),
                None => {
                    rs.errs.push(format!("{loc}.source"), format!("no influent totals series {:?}", al.source));
                    vec![0.0; steps]
                }
            };
            constraints.allocations.push(Allocation { entry, totals: series });
        }
        constraints.validate(s, m, steps, &mut rs.errs);

        rs.errs.into_result()?;
        let notes = rs.notes;
        Ok(Scenario {
            name: cfg.name.clone(),
            mode,
            state_names: cfg.states.clone(),
            reaction_names,
            network: network.expect("validated"),
            kinetics,
            grid: grid.expect("validated"),
            boundary,
            objective,
            constraints,
            influent: Influent { values },
            solver: cfg.solver.clone(),
            exactness: cfg.exactness.clone(),
            notes,
            config: Some(cfg),
        })
    }

    /// Allocated totals `Ξ_e(n)` by state entry.
    pub fn totals(&self) -> Vec<(usize, &[f64])> {
        self.constraints
            .allocations
            .iter()
            .map(|a| (a.entry, a.totals.as_slice()))
            .collect()
    }
}
