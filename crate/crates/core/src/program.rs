//! Assembly of the relaxed transient and steady-state programs.
//!
//! Per step the program carries the state `ξ(n)`, the relaxed rates `T(n)`,
//! the influent entries that are decision variables, composite-kinetics
//! auxiliaries and one epigraph variable per setpoint term. Rows are the
//! dynamics, the allocation equalities, the kinetics cones `T ≤ φ(ξ)`,
//! nonnegativity of `ξ`, `T` and free influent, and the state upper bounds.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::conic::{Affine, ConeRow, ConicProgram, ProgramBuilder, Quantity, RowTag, VarId, VarTag};
use crate::discretize::{dynamics_rows, Boundary, StepHandles};
use crate::error::{Error, Result, ValidationErrors};
use crate::kinetics::GrowthModel;
use crate::network::NetworkSchedule;
use crate::scenario::{Mode, Scenario};
use crate::solver::{Solution, Status};

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    /// `Σ_n Σ_i Q_i^out(n) η_iᵀ ξ_i(n)`
    SubstrateOutflow { eta: Vec<Vec<f64>> },
    /// `−Σ_n Σ_{i ∈ capture} V_i σ_iᵀ T_i(n)`, with `σ_i` over reactions.
    BiogasMax { sigma: Vec<Vec<f64>>, capture: Vec<usize> },
    /// `Σ_n (ξ(n) − ξ̄)ᵀ A (ξ(n) − ξ̄)`
    SetpointTracking { a: DMatrix<f64>, target: Vec<f64> },
    /// Weighted sum; weights must be nonnegative.
    Composite(Vec<(f64, ObjectiveSpec)>),
}

impl ObjectiveSpec {
    pub fn validate(&self, s: usize, m: usize, r: usize, loc: &str, errs: &mut ValidationErrors) {
        let check_rows = |rows: &[Vec<f64>], width: usize, name: &str, errs: &mut ValidationErrors| {
            if rows.len() != s {
                errs.push(format!("{loc}.{name}"), format!("expected {s} per-tank vectors, found {}", rows.len()));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != width {
                    errs.push(format!("{loc}.{name}[{i}]"), format!("expected {width} entries, found {}", row.len()));
                }
                if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    errs.push(format!("{loc}.{name}[{i}]"), "weights must be finite and nonnegative");
                }
            }
        };
        match self {
            ObjectiveSpec::SubstrateOutflow { eta } => check_rows(eta, m, "eta", errs),
            ObjectiveSpec::BiogasMax { sigma, capture } => {
                check_rows(sigma, r, "sigma", errs);
                for &i in capture {
                    if i >= s {
                        errs.push(format!("{loc}.capture"), format!("tank {i} out of range"));
                    }
                }
            }
            ObjectiveSpec::SetpointTracking { a, target } => {
                let n = s * m;
                if a.shape() != (n, n) {
                    errs.push(format!("{loc}.matrix"), format!("expected a {n}x{n} matrix"));
                    return;
                }
                if target.len() != n {
                    errs.push(format!("{loc}.target"), format!("expected {n} entries, found {}", target.len()));
                }
                if a.iter().any(|v| !v.is_finite()) || target.iter().any(|v| !v.is_finite()) {
                    errs.push(loc.to_string(), "entries must be finite");
                    return;
                }
                let asym = (a - a.transpose()).amax();
                if asym > 1e-12 * (1.0 + a.amax()) {
                    errs.push(format!("{loc}.matrix"), "matrix must be symmetric");
                } else if SymmetricEigen::new(a.clone()).eigenvalues.min() < -1e-10 {
                    errs.push(format!("{loc}.matrix"), "matrix must be positive semidefinite");
                }
            }
            ObjectiveSpec::Composite(terms) => {
                for (k, (w, t)) in terms.iter().enumerate() {
                    if !(w.is_finite() && *w >= 0.0) {
                        errs.push(format!("{loc}.term[{k}].weight"), "weights must be finite and nonnegative");
                    }
                    t.validate(s, m, r, &format!("{loc}.term[{k}]"), errs);
                }
            }
        }
    }

    /// True when the objective has no setpoint term.
    pub fn is_linear(&self) -> bool {
        match self {
            ObjectiveSpec::SetpointTracking { .. } => false,
            ObjectiveSpec::Composite(terms) => terms.iter().all(|(_, t)| t.is_linear()),
            _ => true,
        }
    }

    /// Linear coefficients `(f_ξ, f_φ)` at a step, ignoring setpoint terms.
    pub fn linear_terms(&self, network: &NetworkSchedule, m: usize, r: usize, step: usize) -> (Vec<f64>, Vec<f64>) {
        let s = network.n_tanks();
        let mut fx = vec![0.0; s * m];
        let mut fp = vec![0.0; s * r];
        self.add_linear(network, m, r, step, 1.0, &mut fx, &mut fp);
        (fx, fp)
    }

    #[allow(clippy::too_many_arguments)]
    fn add_linear(&self, network: &NetworkSchedule, m: usize, r: usize, step: usize, w: f64, fx: &mut [f64], fp: &mut [f64]) {
        match self {
            ObjectiveSpec::SubstrateOutflow { eta } => {
                let net = network.at(step);
                for (i, row) in eta.iter().enumerate() {
                    for (e, v) in row.iter().enumerate() {
                        fx[i * m + e] += w * net.outflow_rates[i] * v;
                    }
                }
            }
            ObjectiveSpec::BiogasMax { sigma, capture } => {
                let vols = network.volumes();
                for &i in capture {
                    for (j, v) in sigma[i].iter().enumerate() {
                        fp[i * r + j] -= w * vols[i] * v;
                    }
                }
            }
            ObjectiveSpec::SetpointTracking { .. } => {}
            ObjectiveSpec::Composite(terms) => {
                for (wk, t) in terms {
                    t.add_linear(network, m, r, step, w * wk, fx, fp);
                }
            }
        }
    }

    /// Weighted setpoint terms `(w, A, ξ̄)`.
    pub fn quadratic_terms(&self) -> Vec<(f64, &DMatrix<f64>, &[f64])> {
        match self {
            ObjectiveSpec::SetpointTracking { a, target } => vec![(1.0, a, target.as_slice())],
            ObjectiveSpec::Composite(terms) => terms
                .iter()
                .flat_map(|(w, t)| t.quadratic_terms().into_iter().map(move |(wq, a, x)| (w * wq, a, x)))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Objective value of a trajectory (`xi[k]`, `rates[k]` at step `k + 1`).
    pub fn value(&self, network: &NetworkSchedule, m: usize, r: usize, xi: &[Vec<f64>], rates: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (k, (x, t)) in xi.iter().zip(rates).enumerate() {
            let (fx, fp) = self.linear_terms(network, m, r, k + 1);
            total += crate::sparse::dot(&fx, x) + crate::sparse::dot(&fp, t);
            for (w, a, target) in self.quadratic_terms() {
                let d = nalgebra::DVector::from_iterator(x.len(), x.iter().zip(target).map(|(p, q)| p - q));
                total += w * d.dot(&(a * &d));
            }
        }
        total
    }
}

/// Per-step gradients `(∇F_ξ, ∇F_φ)` of the objective at a trajectory.
pub fn objective_gradients(
    spec: &ObjectiveSpec,
    network: &NetworkSchedule,
    m: usize,
    r: usize,
    xi: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut gx = Vec::with_capacity(xi.len());
    let mut gp = Vec::with_capacity(xi.len());
    for (k, x) in xi.iter().enumerate() {
        let (mut fx, fp) = spec.linear_terms(network, m, r, k + 1);
        for (w, a, target) in spec.quadratic_terms() {
            let d = nalgebra::DVector::from_iterator(x.len(), x.iter().zip(target).map(|(p, q)| p - q));
            let g = a * d * (2.0 * w);
            for (f, v) in fx.iter_mut().zip(g.iter()) {
                *f += v;
            }
        }
        gx.push(fx);
        gp.push(fp);
    }
    (gx, gp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperBound {
    pub entry: usize,
    pub value: f64,
    /// Tanks the bound applies to; `None` means all tanks.
    pub tanks: Option<Vec<usize>>,
}

/// Flow-weighted influent allocation: `Σ_i (Q_i^in / Q^in_total) ξ_i,e^in(n) = Ξ_e(n)`.
/// Every tank's influent entry `e` becomes a decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub entry: usize,
    /// One total per step (a single value in steady state).
    pub totals: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub upper_bounds: Vec<UpperBound>,
    pub allocations: Vec<Allocation>,
}

impl ConstraintSet {
    pub fn validate(&self, s: usize, m: usize, steps: usize, errs: &mut ValidationErrors) {
        for (k, ub) in self.upper_bounds.iter().enumerate() {
            let loc = format!("constraints.upper-bound[{k}]");
            if ub.entry >= m {
                errs.push(&loc, format!("state entry {} out of range", ub.entry));
            }
            if !ub.value.is_finite() {
                errs.push(&loc, "bound must be finite");
            }
            for &t in ub.tanks.iter().flatten() {
                if t >= s {
                    errs.push(&loc, format!("tank {t} out of range"));
                }
            }
        }
        let mut seen = vec![false; m];
        for (k, al) in self.allocations.iter().enumerate() {
            let loc = format!("constraints.allocation[{k}]");
            if al.entry >= m {
                errs.push(&loc, format!("state entry {} out of range", al.entry));
                continue;
            }
            if seen[al.entry] {
                errs.push(&loc, "entry allocated twice");
            }
            seen[al.entry] = true;
            if al.totals.len() != steps {
                errs.push(&loc, format!("expected {steps} totals, found {}", al.totals.len()));
            }
            if al.totals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                errs.push(&loc, "totals must be finite and nonnegative");
            }
        }
    }

    /// Influent entries that are decision variables.
    pub fn free_entries(&self, m: usize) -> Vec<bool> {
        let mut free = vec![false; m];
        for al in &self.allocations {
            if al.entry < m {
                free[al.entry] = true;
            }
        }
        free
    }

    pub fn is_empty(&self) -> bool {
        self.upper_bounds.is_empty() && self.allocations.is_empty()
    }
}

/// Column and row bookkeeping of a built program.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramLayout {
    pub mode: Mode,
    pub s: usize,
    pub m: usize,
    pub r: usize,
    /// `xi[k]` holds the state columns of step `k + 1`.
    pub xi: Vec<Vec<VarId>>,
    pub rates: Vec<Vec<VarId>>,
    /// Influent columns; `None` for entries fixed at assembly time.
    pub influent: Vec<Vec<Option<VarId>>>,
    /// Fixed influent values used at assembly time.
    pub influent_values: Vec<Vec<f64>>,
    /// Composite-kinetics auxiliaries per step and `(tank, reaction)`, in
    /// allocation order.
    pub aux: Vec<Vec<Vec<VarId>>>,
    /// Epigraph columns per step, one per setpoint term.
    pub epigraph: Vec<Vec<VarId>>,
    /// First equality row of each step's dynamics block (`ms` rows).
    pub dynamics_rows: Vec<usize>,
    /// Factor between a dynamics row and `V̂⁻¹` times the balance it encodes:
    /// `Δ` for transient rows, 1 for steady-state rows.
    pub row_scale: f64,
    /// Fixed initial state, when the boundary is an initial condition.
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BuiltProgram {
    pub program: ConicProgram,
    pub layout: ProgramLayout,
}

/// A solved program mapped back to trajectories. Row `k` of every per-step
/// table belongs to step `k + 1` (the single row of a steady-state run is
/// the operating point).
#[derive(Debug, Clone)]
pub struct SolvedTrajectory {
    pub status: Status,
    pub objective: f64,
    pub initial: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
    pub influent: Vec<Vec<f64>>,
    /// Multipliers of the balance constraints, in the sign convention of the
    /// Lagrangian `F + Σρᵀ(T − φ) + Σλᵀ(balance)`.
    pub lambda: Vec<Vec<f64>>,
    /// Multipliers of the kinetics cones, `ρ ≥ 0`.
    pub rho: Vec<Vec<f64>>,
    pub solution: Solution,
}

struct Assembler<'a> {
    sc: &'a Scenario,
    pb: ProgramBuilder,
    layout: ProgramLayout,
    factors: Vec<(f64, DMatrix<f64>, &'a [f64])>,
}

impl<'a> Assembler<'a> {
    fn new(sc: &'a Scenario, steps: usize, row_scale: f64) -> Result<Self> {
        let (s, m, r) = (sc.network.n_tanks(), sc.kinetics.m, sc.kinetics.r);
        if sc.kinetics.n_tanks() != s {
            return Err(Error::Dimension(format!(
                "kinetics describe {} tanks, network has {s}",
                sc.kinetics.n_tanks()
            )));
        }
        if sc.influent.values.len() != steps || sc.influent.values.iter().any(|v| v.len() != s * m) {
            return Err(Error::Dimension(format!(
                "influent must have {steps} rows of {} entries",
                s * m
            )));
        }
        for (i, tank) in sc.kinetics.tanks.iter().enumerate() {
            for (j, rx) in tank.reactions.iter().enumerate() {
                if !rx.is_cone_representable() {
                    return Err(Error::UnsupportedKinetics(format!(
                        "tank {i}, reaction {j}: Monod growth with variable biomass has no cone representation"
                    )));
                }
            }
        }
        let factors = sc
            .objective
            .quadratic_terms()
            .into_iter()
            .map(|(w, a, target)| (w, psd_factor(a), target))
            .collect();
        Ok(Assembler {
            sc,
            pb: ProgramBuilder::new(),
            layout: ProgramLayout {
                mode: sc.mode,
                s,
                m,
                r,
                xi: Vec::new(),
                rates: Vec::new(),
                influent: Vec::new(),
                influent_values: sc.influent.values.clone(),
                aux: Vec::new(),
                epigraph: Vec::new(),
                dynamics_rows: Vec::new(),
                row_scale,
                initial: None,
            },
            factors,
        })
    }

    fn tag(quantity: Quantity, tank: usize, index: usize, step: usize) -> Option<VarTag> {
        Some(VarTag {
            quantity,
            tank,
            index,
            step,
        })
    }

    /// Adds the columns of one step and returns affine handles
    /// `(state, rates, influent)`.
    fn add_step(&mut self, step: usize, tag_step: usize) -> (Vec<Affine>, Vec<Affine>, Vec<Affine>) {
        let (s, m, r) = (self.layout.s, self.layout.m, self.layout.r);
        let xi: Vec<VarId> = (0..s * m)
            .map(|k| self.pb.add_var(Self::tag(Quantity::State, k / m, k % m, tag_step)))
            .collect();
        let rates: Vec<VarId> = (0..s * r)
            .map(|k| self.pb.add_var(Self::tag(Quantity::Rate, k / r, k % r, tag_step)))
            .collect();
        let free = self.sc.constraints.free_entries(m);
        let net = self.sc.network.at(step);
        let influent: Vec<Option<VarId>> = (0..s * m)
            .map(|k| {
                let (i, e) = (k / m, k % m);
                (free[e] && net.inflow_rates[i] > 0.0)
                    .then(|| self.pb.add_var(Self::tag(Quantity::Influent, i, e, tag_step)))
            })
            .collect();
        let fixed = &self.sc.influent.values[step - 1];
        let h_xi: Vec<Affine> = xi.iter().map(|&v| Affine::var(v)).collect();
        let h_t: Vec<Affine> = rates.iter().map(|&v| Affine::var(v)).collect();
        let h_in: Vec<Affine> = influent
            .iter()
            .zip(fixed)
            .map(|(v, &c)| match v {
                Some(v) => Affine::var(*v),
                None => Affine::constant(c),
            })
            .collect();
        self.layout.xi.push(xi);
        self.layout.rates.push(rates);
        self.layout.influent.push(influent);
        (h_xi, h_t, h_in)
    }

    /// Kinetics cones, nonnegativity, bounds, allocation rows and objective
    /// terms of one step.
    fn add_step_rows(&mut self, step: usize, tag_step: usize, xi: &[Affine], t: &[Affine], xin: &[Affine]) -> Result<()> {
        let (s, m, r) = (self.layout.s, self.layout.m, self.layout.r);
        let sc = self.sc;

        // kinetics
        let mut aux_step = Vec::with_capacity(s * r);
        for i in 0..s {
            for (j, rx) in sc.kinetics.tanks[i].reactions.iter().enumerate() {
                let mut aux = Vec::new();
                let pb = &mut self.pb;
                let mut alloc = || {
                    let v = pb.add_var(Self::tag(Quantity::Aux, i, j, tag_step));
                    aux.push(v);
                    v
                };
                let rows = rx.soc_rows(&xi[i * m..(i + 1) * m], &t[i * r + j], step, &mut alloc)?;
                for row in rows {
                    self.pb.add_cone(
                        row,
                        RowTag::Kinetics {
                            step: tag_step,
                            tank: i,
                            reaction: j,
                        },
                    );
                }
                aux_step.push(aux);
            }
        }
        self.layout.aux.push(aux_step);

        for h in t {
            self.pb.add_cone(ConeRow::nonneg(h.clone()), RowTag::RateNonneg);
        }
        for h in xi {
            self.pb.add_cone(ConeRow::nonneg(h.clone()), RowTag::StateNonneg);
        }
        for h in xin.iter().filter(|h| !h.is_constant()) {
            self.pb.add_cone(ConeRow::nonneg(h.clone()), RowTag::InfluentNonneg);
        }
        for ub in &sc.constraints.upper_bounds {
            let tanks: Vec<usize> = match &ub.tanks {
                Some(t) => t.clone(),
                None => (0..s).collect(),
            };
            for i in tanks {
                self.pb.add_cone(
                    ConeRow::nonneg(Affine::constant(ub.value) - xi[i * m + ub.entry].clone()),
                    RowTag::UpperBound {
                        step: tag_step,
                        tank: i,
                        entry: ub.entry,
                    },
                );
            }
        }
        let net = sc.network.at(step);
        let q_total: f64 = net.inflow_rates.iter().sum();
        for al in &sc.constraints.allocations {
            let mut row = Affine::constant(-al.totals[step - 1]);
            if q_total > 0.0 {
                for i in 0..s {
                    row.add_scaled(&xin[i * m + al.entry], net.inflow_rates[i] / q_total);
                }
            }
            self.pb.add_eq(
                row,
                RowTag::Allocation {
                    step: tag_step,
                    entry: al.entry,
                },
            );
        }

        // objective
        let (fx, fp) = sc.objective.linear_terms(&sc.network, m, r, step);
        for (h, c) in xi.iter().zip(&fx) {
            if *c != 0.0 {
                self.pb.add_cost_expr(h, *c);
            }
        }
        for (h, c) in t.iter().zip(&fp) {
            if *c != 0.0 {
                self.pb.add_cost_expr(h, *c);
            }
        }
        let mut epi = Vec::new();
        for (w, l, target) in &self.factors {
            let e = self.pb.add_var(Self::tag(Quantity::Epigraph, 0, epi.len(), tag_step));
            epi.push(e);
            self.pb.add_cost(e, *w);
            // ‖(2L(ξ − ξ̄), t − 1)‖ ≤ t + 1  ⇔  ‖L(ξ − ξ̄)‖² ≤ t
            let mut tail: Vec<Affine> = (0..l.nrows())
                .map(|row| {
                    let mut a = Affine::constant(0.0);
                    for (k, h) in xi.iter().enumerate() {
                        let c = l[(row, k)];
                        if c != 0.0 {
                            a.add_scaled(&(h.clone() - Affine::constant(target[k])), 2.0 * c);
                        }
                    }
                    a
                })
                .collect();
            tail.push(Affine::var(e) - Affine::constant(1.0));
            self.pb.add_cone(
                ConeRow::soc(Affine::var(e) + Affine::constant(1.0), tail),
                RowTag::Epigraph { step: tag_step },
            );
        }
        self.layout.epigraph.push(epi);
        Ok(())
    }
}

/// `L` with `LᵀL = A`, dropping null directions.
fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > 1e-14 * top.max(1e-300))
        .collect();
    let n = a.nrows();
    let mut l = DMatrix::zeros(keep.len(), n);
    for (row, &k) in keep.iter().enumerate() {
        let sq = eig.eigenvalues[k].sqrt();
        for c in 0..n {
            l[(row, c)] = sq * eig.eigenvectors[(c, k)];
        }
    }
    l
}

/// The relaxed transient program.
pub fn build_transient(sc: &Scenario) -> Result<BuiltProgram> {
    if sc.mode != Mode::Transient {
        return Err(Error::Dimension("scenario is not transient".into()));
    }
    let tau = sc.grid.tau;
    let mut asm = Assembler::new(sc, tau, sc.grid.delta)?;
    let ms = asm.layout.s * asm.layout.m;
    let mut handles = Vec::with_capacity(tau);
    for n in 1..=tau {
        handles.push(asm.add_step(n, n));
    }
    let initial: Vec<Affine> = match &sc.boundary {
        Boundary::Initial(x0) => {
            if x0.len() != ms {
                return Err(Error::Dimension(format!(
                    "initial condition has {} entries, expected {ms}",
                    x0.len()
                )));
            }
            asm.layout.initial = Some(x0.clone());
            x0.iter().map(|&v| Affine::constant(v)).collect()
        }
        Boundary::Periodic => handles[tau - 1].0.clone(),
    };
    for n in 1..=tau {
        let previous = if n == 1 { &initial } else { &handles[n - 2].0 };
        let (xi, t, xin) = &handles[n - 1];
        let rows = dynamics_rows(
            &sc.network,
            &sc.kinetics,
            &sc.grid,
            n,
            &StepHandles {
                previous,
                state: xi,
                rates: t,
                influent: xin,
            },
        )?;
        asm.layout.dynamics_rows.push(asm.pb.n_eq());
        for (row, tag) in rows {
            asm.pb.add_eq(row, tag);
        }
        asm.add_step_rows(n, n, xi, t, xin)?;
    }
    Ok(BuiltProgram {
        program: asm.pb.build(),
        layout: asm.layout,
    })
}

/// The relaxed steady-state program: `0 = V̂KT + N̂ξ + Ĉξ_in`, scaled by `V̂⁻¹`.
pub fn build_steady_state(sc: &Scenario) -> Result<BuiltProgram> {
    if !sc.network.is_constant() {
        return Err(Error::SteadyState(
            "a time-varying network schedule has no single operating point".into(),
        ));
    }
    let mut asm = Assembler::new(sc, 1, 1.0)?;
    let (s, m, r) = (asm.layout.s, asm.layout.m, asm.layout.r);
    let (xi, t, xin) = asm.add_step(1, 0);
    let mats = sc.network.matrices_at(1);
    let vols = sc.network.volumes();
    asm.layout.dynamics_rows.push(asm.pb.n_eq());
    for i in 0..s {
        let kappa = &sc.kinetics.tanks[i].kappa;
        for e in 0..m {
            let mut row = Affine::constant(0.0);
            for j in 0..r {
                if kappa[(e, j)] != 0.0 {
                    row.add_scaled(&t[i * r + j], -kappa[(e, j)]);
                }
            }
            for k in 0..s {
                if mats.n[(i, k)] != 0.0 {
                    row.add_scaled(&xi[k * m + e], -mats.n[(i, k)] / vols[i]);
                }
            }
            if mats.c[i] != 0.0 {
                row.add_scaled(&xin[i * m + e], -mats.c[i] / vols[i]);
            }
            asm.pb.add_eq(row, RowTag::Dynamics { step: 0, tank: i, entry: e });
        }
    }
    asm.add_step_rows(1, 0, &xi, &t, &xin)?;
    Ok(BuiltProgram {
        program: asm.pb.build(),
        layout: asm.layout,
    })
}

pub fn build(sc: &Scenario) -> Result<BuiltProgram> {
    match sc.mode {
        Mode::Transient => build_transient(sc),
        Mode::SteadyState => build_steady_state(sc),
    }
}

/// One vector per step.
pub type PerStep = Vec<Vec<f64>>;

impl ProgramLayout {
    pub fn steps(&self) -> usize {
        self.xi.len()
    }

    /// Maps a program vector back to `(ξ, T, ξ_in)` per step.
    pub fn unpack(&self, x: &[f64]) -> (PerStep, PerStep, PerStep) {
        let get = |ids: &Vec<VarId>| ids.iter().map(|v| x[v.0]).collect::<Vec<f64>>();
        let xi = self.xi.iter().map(get).collect();
        let rates = self.rates.iter().map(get).collect();
        let influent = self
            .influent
            .iter()
            .zip(&self.influent_values)
            .map(|(ids, fixed)| {
                ids.iter()
                    .zip(fixed)
                    .map(|(v, &c)| v.map_or(c, |v| x[v.0]))
                    .collect()
            })
            .collect();
        (xi, rates, influent)
    }

    /// Builds a program vector from a trajectory, filling composite
    /// auxiliaries with the child rates and epigraph columns with the
    /// setpoint values. The inverse of [`ProgramLayout::unpack`] on the
    /// primary columns.
    pub fn pack(
        &self,
        sc: &Scenario,
        n_vars: usize,
        xi: &[Vec<f64>],
        rates: &[Vec<f64>],
        influent: &[Vec<f64>],
    ) -> Vec<f64> {
        let mut x = vec![0.0; n_vars];
        let m = self.m;
        let quad = sc.objective.quadratic_terms();
        for k in 0..self.steps() {
            let step = if self.mode == Mode::Transient { k + 1 } else { 1 };
            for (v, val) in self.xi[k].iter().zip(&xi[k]) {
                x[v.0] = *val;
            }
            for (v, val) in self.rates[k].iter().zip(&rates[k]) {
                x[v.0] = *val;
            }
            for (v, val) in self.influent[k].iter().zip(&influent[k]) {
                if let Some(v) = v {
                    x[v.0] = *val;
                }
            }
            let mut slot = 0;
            for i in 0..self.s {
                let state = &xi[k][i * m..(i + 1) * m];
                for rx in &sc.kinetics.tanks[i].reactions {
                    let mut vals = Vec::new();
                    aux_values(rx, state, step, &mut vals);
                    for (v, val) in self.aux[k][slot].iter().zip(vals) {
                        x[v.0] = val;
                    }
                    slot += 1;
                }
            }
            for (e, (_, a, target)) in self.epigraph[k].iter().zip(&quad) {
                let d = nalgebra::DVector::from_iterator(xi[k].len(), xi[k].iter().zip(*target).map(|(p, q)| p - q));
                x[e.0] = d.dot(&(*a * &d));
            }
        }
        x
    }

    /// Maps a solver solution to trajectories and multipliers.
    pub fn extract(&self, sc: &Scenario, prog: &ConicProgram, sol: &Solution) -> SolvedTrajectory {
        let (xi, rates, influent) = self.unpack(&sol.x);
        let (s, m) = (self.s, self.m);
        let vols = sc.network.volumes();
        let lambda: Vec<Vec<f64>> = self
            .dynamics_rows
            .iter()
            .map(|&start| {
                (0..s * m)
                    .map(|k| -self.row_scale / vols[k / m] * sol.y.get(start + k).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();

        // ρ = (Gᵀz) on each rate column, restricted to its kinetics cones
        let offsets = prog.cone_offsets();
        let mut row_cone = vec![0usize; prog.n_cone_rows()];
        for (c, w) in offsets.windows(2).enumerate() {
            row_cone[w[0]..w[1]].fill(c);
        }
        let rho = self
            .rates
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|v| {
                        let g = &prog.g;
                        (g.colptr[v.0]..g.colptr[v.0 + 1])
                            .filter(|&k| matches!(prog.cone_tags[row_cone[g.rowval[k]]], RowTag::Kinetics { .. }))
                            .map(|k| g.nzval[k] * sol.z.get(g.rowval[k]).copied().unwrap_or(0.0))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let initial = match (&self.initial, self.mode) {
            (Some(x0), _) => x0.clone(),
            (None, Mode::Transient) => xi.last().cloned().unwrap_or_default(),
            (None, Mode::SteadyState) => Vec::new(),
        };
        SolvedTrajectory {
            status: sol.status,
            objective: sol.pcost,
            initial,
            xi,
            rates,
            influent,
            lambda,
            rho,
            solution: sol.clone(),
        }
    }
}

/// Values of composite auxiliaries in allocation order (`T^a`, `T^b`, then
/// the children's own auxiliaries).
fn aux_values(model: &GrowthModel, state: &[f64], step: usize, out: &mut Vec<f64>) {
    match model {
        GrowthModel::NonInteractive { a, b } | GrowthModel::GeometricInteractive { a, b } => {
            out.push(a.evaluate_rate(state, step));
            out.push(b.evaluate_rate(state, step));
            aux_values(a, state, step, out);
            aux_values(b, state, step, out);
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{Biomass, BiomassProfile, KineticsSpec};
    use crate::network::TankNetwork;
    use crate::scenario::Scenario;
    use crate::solver::{solve, SolverOptions};

    fn single_tank(kinetics: KineticsSpec, tau: usize, objective: ObjectiveSpec) -> Scenario {
        let m = kinetics.m;
        let net = TankNetwork::isolated(vec![1.0], vec![1.0], vec![1.0]);
        let mut sc = Scenario::minimal(net, kinetics, tau, 0.1).unwrap();
        sc.objective = objective;
        sc.influent.values = vec![vec![1.0; m]; tau];
        sc.boundary = Boundary::Initial(vec![0.5; m]);
        sc
    }

    fn monod() -> KineticsSpec {
        KineticsSpec::uniform(
            1,
            vec![GrowthModel::Monod {
                mu: 2.0,
                k_m: 1.0,
                substrate: 0,
                biomass: Biomass::Profile(BiomassProfile::Constant(1.0)),
            }],
            DMatrix::from_column_slice(2, 1, &[-1.0, 0.5]),
        )
    }

    #[test]
    fn column_count_for_one_monod_tank() {
        let sc = single_tank(monod(), 1, ObjectiveSpec::SubstrateOutflow { eta: vec![vec![1.0, 0.0]] });
        let built = build_transient(&sc).unwrap();
        // m + r primary columns (influent fixed), no auxiliaries
        assert_eq!(built.program.n_vars, 2 + 1);
        let mut sc = sc;
        sc.constraints.allocations.push(Allocation {
            entry: 0,
            totals: vec![1.0],
        });
        sc.constraints.allocations.push(Allocation {
            entry: 1,
            totals: vec![1.0],
        });
        let built = build_transient(&sc).unwrap();
        assert_eq!(built.program.n_vars, 2 + 1 + 2);
    }

    #[test]
    fn setpoint_adds_one_epigraph_per_step() {
        let tau = 3;
        let base = single_tank(monod(), tau, ObjectiveSpec::SubstrateOutflow { eta: vec![vec![1.0, 0.0]] });
        let lin = build_transient(&base).unwrap().program;
        let mut sc = base.clone();
        sc.objective = ObjectiveSpec::SetpointTracking {
            a: DMatrix::identity(2, 2),
            target: vec![0.2, 0.3],
        };
        let quad = build_transient(&sc).unwrap().program;
        assert_eq!(quad.n_vars, lin.n_vars + tau);
        assert_eq!(quad.cones.len(), lin.cones.len() + tau);
    }

    #[test]
    fn linear_program_without_reactions_matches_closed_form() {
        // V = 1, N = −1, C = 1, Δ = 0.1: ξ(n) = (ξ(n−1) + 0.1 ξ_in) / 1.1
        let kin = KineticsSpec::none(1, 1);
        let tau = 4;
        let sc = single_tank(kin, tau, ObjectiveSpec::SubstrateOutflow { eta: vec![vec![1.0]] });
        let built = build_transient(&sc).unwrap();
        assert!(built.program.cones.iter().all(|c| c.kind == crate::conic::ConeKind::Nonneg));
        let sol = solve(&built.program, &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        let traj = built.layout.extract(&sc, &built.program, &sol);
        let mut x = 0.5;
        let mut total = 0.0;
        for n in 0..tau {
            x = (x + 0.1) / 1.1;
            assert!((traj.xi[n][0] - x).abs() < 1e-7);
            total += x;
        }
        assert!((traj.objective - total).abs() < 1e-7);
    }

    #[test]
    fn steady_state_without_reactions_is_a_linear_solve() {
        // two tanks in series: N = [[−2, 0], [1, −1]] with Q_12 = 1, Q_1^out = 1
        let mut net = TankNetwork::isolated(vec![1.0, 2.0], vec![2.0, 0.0], vec![1.0, 1.0]);
        net.flows[(0, 1)] = 1.0;
        let kin = KineticsSpec::none(2, 1);
        let mut sc = Scenario::minimal(net, kin, 1, 1.0).unwrap();
        sc.mode = Mode::SteadyState;
        sc.influent.values = vec![vec![3.0, 0.0]];
        sc.objective = ObjectiveSpec::SubstrateOutflow {
            eta: vec![vec![1.0], vec![1.0]],
        };
        let built = build_steady_state(&sc).unwrap();
        let sol = solve(&built.program, &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        let traj = built.layout.extract(&sc, &built.program, &sol);
        let mats = sc.network.matrices_at(1);
        let rhs = -(mats.c.component_mul(&nalgebra::DVector::from_vec(vec![3.0, 0.0])));
        let expect = mats.n.clone().lu().solve(&rhs).unwrap();
        for i in 0..2 {
            assert!((traj.xi[0][i] - expect[i]).abs() < 1e-7, "{:?} vs {expect}", traj.xi[0]);
        }
    }

    #[test]
    fn washout_point_is_feasible_in_steady_state() {
        let mut sc = single_tank(monod(), 1, ObjectiveSpec::SubstrateOutflow { eta: vec![vec![1.0, 0.0]] });
        sc.mode = Mode::SteadyState;
        sc.influent.values = vec![vec![0.0, 0.0]];
        let built = build_steady_state(&sc).unwrap();
        let x = vec![0.0; built.program.n_vars];
        assert!(crate::sparse::inf_norm(&built.program.eq_residual(&x)) == 0.0);
        assert!(built.program.min_cone_margin(&x) >= 0.0);
        assert_eq!(built.program.objective(&x), 0.0);
    }

    #[test]
    fn steady_state_rejects_schedules() {
        let a = TankNetwork::isolated(vec![1.0], vec![1.0], vec![1.0]);
        let b = TankNetwork::isolated(vec![1.0], vec![2.0], vec![2.0]);
        let mut sc = Scenario::minimal(a.clone(), KineticsSpec::none(1, 1), 2, 1.0).unwrap();
        sc.network = NetworkSchedule::new(vec![(1, a), (2, b)]).unwrap();
        sc.mode = Mode::SteadyState;
        assert!(matches!(build_steady_state(&sc), Err(Error::SteadyState(_))));
    }

    #[test]
    fn variable_biomass_monod_is_rejected() {
        let kin = KineticsSpec::uniform(
            1,
            vec![GrowthModel::Monod {
                mu: 1.0,
                k_m: 1.0,
                substrate: 0,
                biomass: Biomass::State(1),
            }],
            DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
        );
        let sc = single_tank(kin, 1, ObjectiveSpec::SubstrateOutflow { eta: vec![vec![1.0, 0.0]] });
        assert!(matches!(build_transient(&sc), Err(Error::UnsupportedKinetics(_))));
    }

    #[test]
    fn gradients_of_each_family() {
        let net = NetworkSchedule::constant(TankNetwork::isolated(vec![2.0, 3.0], vec![1.0, 1.0], vec![0.5, 4.0])).unwrap();
        let eta = ObjectiveSpec::SubstrateOutflow {
            eta: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        };
        let (gx, gp) = objective_gradients(&eta, &net, 2, 1, &[vec![0.0; 4]]);
        assert_eq!(gx[0], vec![0.5, 0.0, 4.0, 0.0]);
        assert_eq!(gp[0], vec![0.0, 0.0]);

        let bio = ObjectiveSpec::BiogasMax {
            sigma: vec![vec![1.0], vec![2.0]],
            capture: vec![1],
        };
        let (gx, gp) = objective_gradients(&bio, &net, 2, 1, &[vec![0.0; 4]]);
        assert_eq!(gx[0], vec![0.0; 4]);
        assert_eq!(gp[0], vec![0.0, -6.0]);

        let target = vec![1.0, 2.0, 3.0, 4.0];
        let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.5 });
        let sp = ObjectiveSpec::SetpointTracking { a, target: target.clone() };
        let (gx, _) = objective_gradients(&sp, &net, 2, 1, &[target]);
        assert!(gx[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pack_and_unpack_are_inverse_on_primary_columns() {
        let sc = single_tank(monod(), 3, ObjectiveSpec::SubstrateOutflow { eta: vec![vec![1.0, 0.0]] });
        let built = build_transient(&sc).unwrap();
        let xi = vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]];
        let rates = vec![vec![0.01], vec![0.02], vec![0.03]];
        let infl = sc.influent.values.clone();
        let x = built.layout.pack(&sc, built.program.n_vars, &xi, &rates, &infl);
        let (a, b, c) = built.layout.unpack(&x);
        assert_eq!((a, b, c), (xi, rates, infl));
    }
}
