//! Forward simulation of the unrelaxed dynamics.
//!
//! Each implicit Euler step solves `F(ξ) = 0` for the step residual of
//! [`crate::discretize::step_residual`] with `T = φ(ξ)`, by Newton's method
//! with a backtracking line search on `‖F‖∞`. Trial points are clipped to
//! the nonnegative orthant, where the kinetics are defined.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::discretize::{step_residual, TimeGrid};
use crate::error::{Error, Result};
use crate::kinetics::KineticsSpec;
use crate::network::{kron_lift, NetworkSchedule};
use crate::scenario::Scenario;
use crate::sparse::inf_norm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Converged when `‖F‖∞ ≤ tol (1 + ‖ξ‖∞)`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-11,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub initial: Vec<f64>,
    /// `xi[k]` is the state after step `k + 1`.
    pub xi: Vec<Vec<f64>>,
    /// `φ(ξ)` at each step.
    pub rates: Vec<Vec<f64>>,
    pub steps: Vec<StepReport>,
}

/// Either one implicit Euler step (`inertia = 1`) or the steady-state
/// balance (`inertia = 0`, `Δ = 1`).
struct Balance<'a> {
    schedule: &'a NetworkSchedule,
    spec: &'a KineticsSpec,
    grid: TimeGrid,
    step: usize,
    previous: &'a [f64],
    influent: &'a [f64],
    inertia: f64,
    /// `(Δ/V̂) N̂` for the Jacobian.
    flow: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl<'a> Balance<'a> {
    fn new(
        schedule: &'a NetworkSchedule,
        spec: &'a KineticsSpec,
        grid: TimeGrid,
        step: usize,
        previous: &'a [f64],
        influent: &'a [f64],
        inertia: f64,
    ) -> Self {
        let m = spec.m;
        let mut flow = kron_lift(&schedule.matrices_at(step).n, m).to_dense();
        for (row, v) in schedule.lifted_volumes(m).iter().enumerate() {
            flow.row_mut(row).scale_mut(grid.delta / v);
        }
        Balance {
            schedule,
            spec,
            grid,
            step,
            previous,
            influent,
            inertia,
            flow,
            k: spec.k_dense(),
        }
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let rates = self.spec.rates(x, self.step);
        let mut f = step_residual(
            self.schedule,
            self.spec,
            &self.grid,
            self.step,
            self.previous,
            x,
            &rates,
            self.influent,
        );
        if self.inertia != 1.0 {
            for ((fi, xi), pi) in f.iter_mut().zip(x).zip(self.previous) {
                *fi -= (1.0 - self.inertia) * (xi - pi);
            }
        }
        f
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let jac = self.spec.jacobian(x, self.step).to_dense();
        DMatrix::<f64>::identity(n, n) * self.inertia - &self.flow - &self.k * jac * self.grid.delta
    }

    fn solve(&self, guess: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, StepReport)> {
        let mut x: Vec<f64> = guess.iter().map(|v| v.max(0.0)).collect();
        let mut f = self.residual(&x);
        let mut norm = inf_norm(&f);
        for iter in 0..=opts.max_iter {
            if norm <= opts.tol * (1.0 + inf_norm(&x)) {
                return Ok((
                    x,
                    StepReport {
                        step: self.step,
                        iterations: iter,
                        residual: norm,
                    },
                ));
            }
            if iter == opts.max_iter {
                break;
            }
            let dx = self
                .jacobian(&x)
                .lu()
                .solve(&(-DVector::from_vec(f.clone())))
                .ok_or_else(|| Error::Singular(format!("Newton matrix at step {}", self.step)))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let mut clipped = 0;
                let trial: Vec<f64> = x
                    .iter()
                    .zip(dx.iter())
                    .map(|(a, d)| {
                        let v = a + t * d;
                        if v < -1e-12 {
                            clipped += 1;
                        }
                        v.max(0.0)
                    })
                    .collect();
                if clipped > 0 {
                    log::debug!("step {}: {clipped} negative Newton iterates projected to 0", self.step);
                }
                let ft = self.residual(&trial);
                let nt = inf_norm(&ft);
                if nt < norm || nt <= opts.tol * (1.0 + inf_norm(&trial)) {
                    x = trial;
                    f = ft;
                    norm = nt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::Newton {
            step: self.step,
            residual: norm,
        })
    }
}

/// Solves one implicit Euler step from `previous` with the given influent,
/// starting Newton at `guess`.
#[allow(clippy::too_many_arguments)]
pub fn implicit_step(
    schedule: &NetworkSchedule,
    spec: &KineticsSpec,
    grid: &TimeGrid,
    step: usize,
    previous: &[f64],
    influent: &[f64],
    guess: &[f64],
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, StepReport)> {
    Balance::new(schedule, spec, *grid, step, previous, influent, 1.0).solve(guess, opts)
}

/// Integrates the unrelaxed dynamics from `initial` with one influent vector
/// per step.
pub fn forward_simulate(
    sc: &Scenario,
    initial: &[f64],
    influent: &[Vec<f64>],
    opts: &NewtonOptions,
) -> Result<Simulation> {
    let ms = sc.n_tanks() * sc.kinetics.m;
    if initial.len() != ms || influent.iter().any(|v| v.len() != ms) {
        return Err(Error::Dimension(format!(
            "simulation needs {ms}-entry initial state and influent vectors"
        )));
    }
    let mut prev = initial.to_vec();
    let mut out = Simulation {
        initial: initial.to_vec(),
        xi: Vec::with_capacity(influent.len()),
        rates: Vec::with_capacity(influent.len()),
        steps: Vec::with_capacity(influent.len()),
    };
    for (k, xin) in influent.iter().enumerate() {
        let step = k + 1;
        let (x, rep) = implicit_step(&sc.network, &sc.kinetics, &sc.grid, step, &prev, xin, &prev, opts)?;
        out.rates.push(sc.kinetics.rates(&x, step));
        out.steps.push(rep);
        out.xi.push(x.clone());
        prev = x;
    }
    Ok(out)
}

/// A nonnegative root of the steady-state balance
/// `N̂ξ + Cξ_in + V̂Kφ(ξ) = 0`, by Newton from `guess`.
pub fn find_steady_state(sc: &Scenario, influent: &[f64], guess: &[f64], opts: &NewtonOptions) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(1, 1.0)?;
    let zeros = vec![0.0; guess.len()];
    // with inertia 0 the `previous` term cancels; pass zeros for clarity
    Balance::new(&sc.network, &sc.kinetics, grid, 1, &zeros, influent, 0.0)
        .solve(guess, opts)
        .map(|(x, _)| x)
}
