mod common;

use bioconvex::exactness::residual_exactness;
use bioconvex::simulate::{find_steady_state, forward_simulate, NewtonOptions};
use bioconvex::solver::Status;

#[test]
fn exact_transient_solutions_replay_through_the_simulator() {
    for sc in common::transient_suite() {
        let traj = common::solve_scenario(&sc);
        assert_eq!(traj.status, Status::Optimal, "{}", sc.name);
        let steps: Vec<usize> = (1..=traj.xi.len()).collect();
        assert!(residual_exactness(&sc.kinetics, &traj.xi, &traj.rates, &steps, 1e-6).all_exact, "{}", sc.name);
        let sim = forward_simulate(&sc, &traj.initial, &traj.influent, &NewtonOptions::default()).unwrap();
        for (k, (a, b)) in sim.xi.iter().zip(&traj.xi).enumerate() {
            let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-6, "{} step {}: {d:e}", sc.name, k + 1);
        }
    }
}

#[test]
fn steady_solutions_are_roots_of_the_balance() {
    for sc in common::steady_suite() {
        let traj = common::solve_scenario(&sc);
        let guess: Vec<f64> = traj.xi[0].iter().map(|v| v * 1.05 + 0.01).collect();
        let root = find_steady_state(&sc, &traj.influent[0], &guess, &NewtonOptions::default()).unwrap();
        let d = root.iter().zip(&traj.xi[0]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-6, "{}: {d:e}", sc.name);
    }
}

#[test]
fn simulation_rates_follow_the_kinetics() {
    let sc = common::transient_suite().remove(1);
    let influent = sc.influent.values.clone();
    let initial = match &sc.boundary {
        bioconvex::discretize::Boundary::Initial(x) => x.clone(),
        _ => unreachable!(),
    };
    let sim = forward_simulate(&sc, &initial, &influent, &NewtonOptions::default()).unwrap();
    let m = sc.kinetics.m;
    for (k, (x, t)) in sim.xi.iter().zip(&sim.rates).enumerate() {
        let phi = sc.kinetics.tanks.iter().enumerate().flat_map(|(i, tank)| {
            let xs = &x[i * m..(i + 1) * m];
            tank.reactions.iter().map(move |rx| common::rate(rx, xs, k + 1))
        });
        for (j, (p, t)) in phi.zip(t).enumerate() {
            assert!((p - t).abs() <= 1e-12 * (1.0 + p.abs()), "step {} rate {j}: {p} vs {t}", k + 1);
        }
    }
    assert!(sim.steps.iter().all(|s| s.residual <= 1e-9));
}
