//! Time grid and the implicit Euler dynamics rows.
//!
//! For step `n` and tank `i`, state entry `e`, the continuous balance
//! `V(ξ(n) − ξ(n−1))/Δ = V K T(n) + N(n) ξ(n) + C(n) ξ_in(n)` is emitted
//! divided by `V_i/Δ`, so every row is in concentration units:
//!
//! ```text
//! ξ_ie(n) − ξ_ie(n−1) − Δ Σ_j κ_i[e,j] T_ij(n)
//!     − (Δ/V_i) Σ_k N_ik(n) ξ_ke(n) − (Δ/V_i) C_ii(n) ξin_ie(n) = 0
//! ```

use crate::conic::{Affine, RowTag};
use crate::error::{Error, Result, ValidationErrors};
use crate::kinetics::KineticsSpec;
use crate::network::NetworkSchedule;

/// Finite-difference scheme for the time derivative. Only implicit Euler is
/// implemented; the enum is the extension point for other schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    ImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    /// Number of steps; steps are numbered `1..=tau`.
    pub tau: usize,
    /// Step length in days.
    pub delta: f64,
    pub scheme: Scheme,
}

impl TimeGrid {
    pub fn new(tau: usize, delta: f64) -> Result<Self> {
        let mut errs = ValidationErrors::default();
        if tau == 0 {
            errs.push("horizon.tau", "must be at least 1");
        }
        if !(delta > 0.0 && delta.is_finite()) {
            errs.push("horizon.delta", "must be positive and finite");
        }
        errs.into_result()?;
        Ok(TimeGrid {
            tau,
            delta,
            scheme: Scheme::ImplicitEuler,
        })
    }

    pub fn steps(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.tau
    }
}

/// How `ξ(0)` is bound.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// `ξ(0) = ξ₀`, stacked by tank.
    Initial(Vec<f64>),
    /// `ξ(0) = ξ(τ)`
    Periodic,
}

/// Affine handles for the quantities of one step.
#[derive(Debug, Clone, Copy)]
pub struct StepHandles<'a> {
    /// `ξ(n − 1)`, `ms` entries.
    pub previous: &'a [Affine],
    /// `ξ(n)`, `ms` entries.
    pub state: &'a [Affine],
    /// `T(n)`, `rs` entries.
    pub rates: &'a [Affine],
    /// `ξ_in(n)`, `ms` entries.
    pub influent: &'a [Affine],
}

fn check_dims(step: usize, s: usize, spec: &KineticsSpec, lens: [(&str, usize, usize); 4]) -> Result<()> {
    if spec.n_tanks() != s {
        return Err(Error::Dimension(format!(
            "step {step}: kinetics describe {} tanks, network has {s}",
            spec.n_tanks()
        )));
    }
    for (block, got, want) in lens {
        if got != want {
            return Err(Error::Dimension(format!(
                "step {step}, block {block}: expected {want} entries, got {got}"
            )));
        }
    }
    Ok(())
}

/// The `ms` dynamics rows of step `n`, each as `expr = 0`.
pub fn dynamics_rows(
    schedule: &NetworkSchedule,
    spec: &KineticsSpec,
    grid: &TimeGrid,
    step: usize,
    h: &StepHandles<'_>,
) -> Result<Vec<(Affine, RowTag)>> {
    let (s, m, r) = (schedule.n_tanks(), spec.m, spec.r);
    check_dims(
        step,
        s,
        spec,
        [
            ("previous state", h.previous.len(), s * m),
            ("state", h.state.len(), s * m),
            ("rates", h.rates.len(), s * r),
            ("influent", h.influent.len(), s * m),
        ],
    )?;
    let mats = schedule.matrices_at(step);
    let vols = schedule.volumes();
    let delta = grid.delta;
    let mut rows = Vec::with_capacity(s * m);
    for i in 0..s {
        let scale = delta / vols[i];
        let kappa = &spec.tanks[i].kappa;
        for e in 0..m {
            let mut row = h.state[i * m + e].clone() - h.previous[i * m + e].clone();
            for j in 0..r {
                let k = kappa[(e, j)];
                if k != 0.0 {
                    row.add_scaled(&h.rates[i * r + j], -delta * k);
                }
            }
            for k in 0..s {
                let nik = mats.n[(i, k)];
                if nik != 0.0 {
                    row.add_scaled(&h.state[k * m + e], -scale * nik);
                }
            }
            let c = mats.c[i];
            if c != 0.0 {
                row.add_scaled(&h.influent[i * m + e], -scale * c);
            }
            rows.push((row, RowTag::Dynamics { step, tank: i, entry: e }));
        }
    }
    Ok(rows)
}

/// Numeric residual of the step-`n` rows (same scaling as [`dynamics_rows`]).
#[allow(clippy::too_many_arguments)]
pub fn step_residual(
    schedule: &NetworkSchedule,
    spec: &KineticsSpec,
    grid: &TimeGrid,
    step: usize,
    previous: &[f64],
    state: &[f64],
    rates: &[f64],
    influent: &[f64],
) -> Vec<f64> {
    let (s, m, r) = (schedule.n_tanks(), spec.m, spec.r);
    let mats = schedule.matrices_at(step);
    let vols = schedule.volumes();
    let delta = grid.delta;
    let mut out = vec![0.0; s * m];
    for i in 0..s {
        let scale = delta / vols[i];
        let kappa = &spec.tanks[i].kappa;
        for e in 0..m {
            let mut v = state[i * m + e] - previous[i * m + e];
            for j in 0..r {
                v -= delta * kappa[(e, j)] * rates[i * r + j];
            }
            for k in 0..s {
                v -= scale * mats.n[(i, k)] * state[k * m + e];
            }
            v -= scale * mats.c[i] * influent[i * m + e];
            out[i * m + e] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::VarId;
    use crate::network::TankNetwork;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vars(start: usize, n: usize) -> Vec<Affine> {
        (start..start + n).map(|k| Affine::var(VarId(k))).collect()
    }

    #[test]
    fn single_tank_row() {
        let net = TankNetwork::isolated(vec![1.0], vec![1.0], vec![1.0]);
        let sched = NetworkSchedule::constant(net).unwrap();
        let spec = KineticsSpec::none(1, 1);
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let (prev, state, infl) = (vars(0, 1), vars(1, 1), vars(2, 1));
        let rows = dynamics_rows(
            &sched,
            &spec,
            &grid,
            1,
            &StepHandles {
                previous: &prev,
                state: &state,
                rates: &[],
                influent: &infl,
            },
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0].0;
        assert_eq!(row.coef(VarId(1)), 2.0);
        assert_eq!(row.coef(VarId(0)), -1.0);
        assert_eq!(row.coef(VarId(2)), -1.0);
        assert_eq!(row.constant, 0.0);
    }

    #[test]
    fn no_drivers_conserves_state() {
        let net = TankNetwork::isolated(vec![2.0, 3.0], vec![0.0; 2], vec![0.0; 2]);
        let sched = NetworkSchedule::constant(net).unwrap();
        let spec = KineticsSpec::none(2, 2);
        let grid = TimeGrid::new(3, 0.5).unwrap();
        let prev = [1.0, 2.0, 3.0, 4.0];
        let res = step_residual(&sched, &spec, &grid, 1, &prev, &prev, &[], &[0.0; 4]);
        assert!(res.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_rows_use_the_active_snapshot() {
        let a = TankNetwork::isolated(vec![1.0], vec![1.0], vec![1.0]);
        let mut b = a.clone();
        b.inflow_rates[0] = 3.0;
        let sched = NetworkSchedule::new(vec![(1, a), (2, b)]).unwrap();
        let spec = KineticsSpec::none(1, 1);
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let (prev, state, infl) = (vars(0, 1), vars(1, 1), vars(2, 1));
        let h = StepHandles {
            previous: &prev,
            state: &state,
            rates: &[],
            influent: &infl,
        };
        let r1 = dynamics_rows(&sched, &spec, &grid, 1, &h).unwrap();
        let r2 = dynamics_rows(&sched, &spec, &grid, 2, &h).unwrap();
        assert_eq!(r1[0].0.coef(VarId(2)), -1.0);
        assert_eq!(r2[0].0.coef(VarId(2)), -3.0);
    }

    #[test]
    fn dimension_mismatch_names_the_block() {
        let net = TankNetwork::isolated(vec![1.0], vec![1.0], vec![1.0]);
        let sched = NetworkSchedule::constant(net).unwrap();
        let spec = KineticsSpec::none(1, 2);
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let (prev, state, infl) = (vars(0, 2), vars(2, 1), vars(4, 2));
        let err = dynamics_rows(
            &sched,
            &spec,
            &grid,
            1,
            &StepHandles {
                previous: &prev,
                state: &state,
                rates: &[],
                influent: &infl,
            },
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("step 1") && err.contains("block state"), "{err}");
    }

    #[test]
    fn rows_match_numeric_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut net = TankNetwork::isolated(vec![2.0, 1.5], vec![0.3, 0.0], vec![0.0, 0.4]);
        net.flows[(0, 1)] = 0.3;
        net.diffusion[(0, 1)] = 0.1;
        net.diffusion[(1, 0)] = 0.1;
        let sched = NetworkSchedule::constant(net).unwrap();
        let kappa = DMatrix::from_row_slice(2, 1, &[-2.0, 1.0]);
        let spec = KineticsSpec::uniform(
            2,
            vec![crate::kinetics::GrowthModel::Contois {
                mu: 1.0,
                k_c: 1.0,
                substrate: 0,
                biomass: 1,
            }],
            kappa,
        );
        let grid = TimeGrid::new(1, 0.25).unwrap();
        let x: Vec<f64> = (0..14).map(|_| rng.random_range(0.0..3.0)).collect();
        let (prev, state, rates, infl) = (vars(0, 4), vars(4, 4), vars(8, 2), vars(10, 4));
        let rows = dynamics_rows(
            &sched,
            &spec,
            &grid,
            1,
            &StepHandles {
                previous: &prev,
                state: &state,
                rates: &rates,
                influent: &infl,
            },
        )
        .unwrap();
        let numeric = step_residual(&sched, &spec, &grid, 1, &x[0..4], &x[4..8], &x[8..10], &x[10..14]);
        for (k, (row, _)) in rows.iter().enumerate() {
            assert!((row.eval(&x) - numeric[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn total_mass_is_nonincreasing_without_inputs() {
        // Linear steps (V/Δ − N) ξ(n) = (V/Δ) ξ(n−1) on outflow-connected
        // networks: the V-weighted total mass never grows.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let s = rng.random_range(1..5);
            let mut net = TankNetwork::isolated(
                (0..s).map(|_| rng.random_range(0.5..3.0)).collect(),
                vec![0.0; s],
                vec![0.0; s],
            );
            net.outflow_rates[s - 1] = rng.random_range(0.1..2.0);
            for i in 0..s - 1 {
                net.flows[(i, i + 1)] = rng.random_range(0.1..2.0);
            }
            if s > 1 {
                net.diffusion[(0, s - 1)] = 0.2;
                net.diffusion[(s - 1, 0)] = 0.2;
            }
            let sched = NetworkSchedule::constant(net.clone()).unwrap();
            let mats = sched.matrices_at(1);
            let delta = rng.random_range(0.01..1.0);
            let v = DMatrix::from_diagonal(&DVector::from_vec(net.volumes.clone()));
            let lhs = &v / delta - &mats.n;
            let lu = lhs.lu();
            let mut xi = DVector::from_fn(s, |_, _| rng.random_range(0.0..5.0));
            let mass = |x: &DVector<f64>| (0..s).map(|i| net.volumes[i] * x[i].abs()).sum::<f64>();
            for _ in 0..20 {
                let next = lu.solve(&(&v * &xi / delta)).unwrap();
                assert!(mass(&next) <= mass(&xi) * (1.0 + 1e-12));
                assert!(next.iter().all(|&c| c >= -1e-12));
                xi = next;
            }
        }
    }
}
