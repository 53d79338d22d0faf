//! Primal-dual interior-point solver for programs in the form of
//! [`ConicProgram`]: linear equalities plus a product of nonnegative
//! orthants and second-order cones.
//!
//! The method works on the homogeneous self-dual embedding, so infeasible
//! and unbounded programs end with a certificate instead of diverging.
//! Each iteration uses Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector step; the reduced KKT system is factored by a sparse
//! quasi-definite `LDLᵀ` with a fixed fill-reducing ordering. The solver is
//! deterministic: identical inputs give bitwise-identical iterates.

mod cones;
mod ipm;
mod ldl;
mod presolve;

use serde::{Deserialize, Serialize};

use crate::conic::ConicProgram;
use crate::sparse::{dot, inf_norm};

pub use cones::{Block, ConeSet, Scaling};
pub use ldl::LdlFactor;
pub use presolve::{presolve, PresolveReport, Presolved};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative primal and dual residual tolerance.
    pub feas_tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Ruiz equilibration of the constraint matrices.
    pub equilibrate: bool,
    pub presolve: bool,
    /// Static diagonal regularization of the KKT matrix.
    pub static_reg: f64,
    pub refine_steps: usize,
    /// Fraction of the step to the cone boundary taken each iteration.
    pub step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            equilibrate: true,
            presolve: true,
            static_reg: 1e-8,
            refine_steps: 10,
            step_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
    NumericalFailure,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIterations => "max-iterations",
            Status::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

/// Statistics of one interior-point iterate, measured on the original
/// (unscaled) program at `(x, y, z, s) / τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub pcost: f64,
    pub dcost: f64,
    /// Relative primal residual.
    pub pres: f64,
    /// Relative dual residual.
    pub dres: f64,
    /// `sᵀz`
    pub complementarity: f64,
    /// `pcost − dcost − xᵀr_x + yᵀr_y + zᵀr_z`, which equals `sᵀz ≥ 0` by
    /// weak duality whatever the residuals are.
    pub duality_slack: f64,
    pub tau: f64,
    pub kappa: f64,
    pub mu: f64,
    pub sigma: f64,
    pub step: f64,
    /// Pivots replaced by dynamic regularization in this iteration.
    pub regularized_pivots: usize,
    /// Relative residual of the refined `τ` direction solve.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    /// Equality multipliers (Lagrangian `cᵀx + yᵀ(Ax − b) + zᵀ(Gx − h)`).
    pub y: Vec<f64>,
    /// Cone multipliers, in the dual cone.
    pub z: Vec<f64>,
    /// Cone slack `h − Gx`.
    pub s: Vec<f64>,
    pub pcost: f64,
    pub dcost: f64,
    pub pres: f64,
    pub dres: f64,
    pub iterations: usize,
    pub records: Vec<IterationRecord>,
    pub presolve: PresolveReport,
}

impl Solution {
    pub fn gap(&self) -> f64 {
        (self.pcost - self.dcost).abs()
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.pcost.abs().max(self.dcost.abs()).max(1.0)
    }
}

pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> Solution {
    if opts.presolve {
        let pre = presolve(prog);
        if let Some(msg) = &pre.report.infeasible {
            log::info!("presolve: {msg}");
            return Solution {
                status: Status::Infeasible,
                x: vec![0.0; prog.n_vars],
                y: vec![0.0; prog.n_eq()],
                z: vec![0.0; prog.n_cone_rows()],
                s: prog.h.clone(),
                pcost: f64::NAN,
                dcost: f64::NAN,
                pres: f64::NAN,
                dres: f64::NAN,
                iterations: 0,
                records: Vec::new(),
                presolve: pre.report.clone(),
            };
        }
        if !pre.is_trivial() {
            let mut sol = ipm::run(&pre.program, opts);
            let (x, y) = pre.restore(prog, &sol.x, &sol.y, &sol.z);
            sol.x = x;
            sol.y = y;
            sol.s = prog.cone_slack(&sol.x);
            sol.presolve = pre.report;
            return sol;
        }
    }
    ipm::run(prog, opts)
}

/// Residuals of a primal-dual pair, in infinity norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// `max(‖Ax − b‖, cone violation of h − Gx)`
    pub primal: f64,
    /// `max(‖c + Aᵀy + Gᵀz‖, dual cone violation of z)`
    pub dual: f64,
    /// `|(h − Gx)ᵀz|`
    pub complementarity: f64,
    /// `|pcost − dcost|`
    pub gap: f64,
    /// Same four measures divided by the matching data scale.
    pub relative: [f64; 4],
    /// All relative measures ≤ 1e-7.
    pub pass: bool,
}

pub const KKT_PASS_TOL: f64 = 1e-7;

pub fn verify_kkt(prog: &ConicProgram, x: &[f64], y: &[f64], z: &[f64]) -> KktReport {
    let cones = ConeSet::new(&prog.cones);
    let s = prog.cone_slack(x);
    let eq = inf_norm(&prog.eq_residual(x));
    let primal = eq.max((-cones.min_eig(&s)).max(0.0));
    let mut rx = prog.c.clone();
    prog.a.tmul_vec_acc(y, &mut rx, 1.0);
    prog.g.tmul_vec_acc(z, &mut rx, 1.0);
    let dual = inf_norm(&rx).max((-cones.min_eig(z)).max(0.0));
    let complementarity = dot(&s, z).abs();
    let pcost = prog.objective(x);
    let dcost = -dot(&prog.b, y) - dot(&prog.h, z) + prog.c0;
    let gap = (pcost - dcost).abs();
    let pscale = 1.0f64.max(inf_norm(&prog.b)).max(inf_norm(&prog.h));
    let dscale = 1.0f64.max(inf_norm(&prog.c));
    let oscale = 1.0f64.max(pcost.abs()).max(dcost.abs());
    let relative = [primal / pscale, dual / dscale, complementarity / oscale, gap / oscale];
    let pass = relative.iter().all(|&v| v <= KKT_PASS_TOL);
    KktReport {
        primal,
        dual,
        complementarity,
        gap,
        relative,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{Affine, ConeRow, ProgramBuilder, RowTag};

    #[test]
    fn one_variable_lp() {
        let mut pb = ProgramBuilder::new();
        let x = pb.add_var(None);
        pb.add_cost(x, 1.0);
        pb.add_cone(ConeRow::nonneg(Affine::var(x) - Affine::constant(1.0)), RowTag::Other);
        let prog = pb.build();
        let sol = solve(&prog, &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.z[0] - 1.0).abs() < 1e-7);
        let exact = verify_kkt(&prog, &[1.0], &[], &[1.0]);
        assert_eq!((exact.primal, exact.dual, exact.complementarity, exact.gap), (0.0, 0.0, 0.0, 0.0));
        let perturbed = verify_kkt(&prog, &[1.0 - 1e-3], &[], &[1.0]);
        assert!((perturbed.primal - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn norm_of_a_constant() {
        let mut pb = ProgramBuilder::new();
        let t = pb.add_var(None);
        pb.add_cost(t, 1.0);
        pb.add_cone(
            ConeRow::soc(Affine::var(t), vec![Affine::constant(1.0), Affine::constant(1.0)]),
            RowTag::Other,
        );
        let prog = pb.build();
        let sol = solve(&prog, &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 2f64.sqrt()).abs() < 1e-7);
        assert!(verify_kkt(&prog, &sol.x, &sol.y, &sol.z).pass);
    }

    #[test]
    fn degenerate_face() {
        let mut pb = ProgramBuilder::new();
        let x = pb.add_var(None);
        let y = pb.add_var(None);
        pb.add_cost(x, 1.0);
        pb.add_cost(y, 1.0);
        pb.add_eq(Affine::var(x) + Affine::var(y) - Affine::constant(1.0), RowTag::Other);
        pb.add_cone(ConeRow::nonneg(Affine::var(x)), RowTag::Other);
        pb.add_cone(ConeRow::nonneg(Affine::var(y)), RowTag::Other);
        let sol = solve(&pb.build(), &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.pcost - 1.0).abs() < 1e-8);
        assert!(sol.gap() <= 1e-8);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x ≥ 1, x ≤ 0
        let mut pb = ProgramBuilder::new();
        let x = pb.add_var(None);
        pb.add_cost(x, 1.0);
        pb.add_cone(ConeRow::nonneg(Affine::var(x) - Affine::constant(1.0)), RowTag::Other);
        pb.add_cone(ConeRow::nonneg(-Affine::var(x)), RowTag::Other);
        assert_eq!(solve(&pb.build(), &SolverOptions::default()).status, Status::Infeasible);

        // min −x, x ≥ 0
        let mut pb = ProgramBuilder::new();
        let x = pb.add_var(None);
        pb.add_cost(x, -1.0);
        pb.add_cone(ConeRow::nonneg(Affine::var(x)), RowTag::Other);
        assert_eq!(solve(&pb.build(), &SolverOptions::default()).status, Status::Unbounded);
    }

    #[test]
    fn iterates_respect_weak_duality_and_runs_are_deterministic() {
        let mut pb = ProgramBuilder::new();
        let x = pb.add_var(None);
        let y = pb.add_var(None);
        let t = pb.add_var(None);
        pb.add_cost(t, 1.0);
        pb.add_cost(x, -0.3);
        pb.add_eq(Affine::var(x) + Affine::var(y) - Affine::constant(2.0), RowTag::Other);
        pb.add_cone(
            ConeRow::soc(Affine::var(t), vec![Affine::var(x) - Affine::constant(1.0), Affine::var(y)]),
            RowTag::Other,
        );
        pb.add_cone(ConeRow::nonneg(Affine::var(x)), RowTag::Other);
        let prog = pb.build();
        let a = solve(&prog, &SolverOptions::default());
        let b = solve(&prog, &SolverOptions::default());
        assert_eq!(a.status, Status::Optimal);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.x, b.x);
        assert_eq!(a.z, b.z);
        for rec in &a.records {
            let scale = 1.0 + rec.pcost.abs() + rec.dcost.abs();
            assert!(rec.duality_slack >= -1e-12 * scale, "{rec:?}");
        }
    }
}
