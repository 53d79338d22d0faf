//! Exact cone-membership sampling and finite-difference Jacobians.

use bioconvex::conic::{Affine, ConeKind, ConeRow, VarId};
use bioconvex::kinetics::GrowthModel;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::Rng;

fn inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub type Q = BigRational;

pub fn q(v: f64) -> Q {
    Q::from_float(v).expect("finite")
}

pub fn eval_q(a: &Affine, col: &[Q]) -> Q {
    a.terms.iter().fold(q(a.constant), |acc, (v, c)| acc + q(*c) * &col[v.0])
}

/// Exact membership: `head ≥ 0` and `head² ≥ ‖tail‖²` for second-order
/// rows, every entry `≥ 0` for nonnegative rows.
pub fn row_holds(row: &ConeRow, col: &[Q]) -> bool {
    let c: Vec<Q> = row.components.iter().map(|a| eval_q(a, col)).collect();
    match row.kind {
        ConeKind::Nonneg => c.iter().all(|v| !v.is_negative()),
        ConeKind::Soc => {
            let tail = c[1..].iter().fold(Q::zero(), |acc, v| acc + v * v);
            !c[0].is_negative() && &c[0] * &c[0] >= tail
        }
    }
}

pub fn rows_of(model: &GrowthModel, m: usize, step: usize) -> Vec<ConeRow> {
    // columns: state (m), T, then auxiliaries
    let state: Vec<Affine> = (0..m).map(|i| Affine::var(VarId(i))).collect();
    let t = Affine::var(VarId(m));
    let mut next = m + 1;
    model
        .soc_rows(&state, &t, step, &mut || {
            next += 1;
            VarId(next - 1)
        })
        .expect("cone representable")
}

/// Exact largest rate a single-row (Monod or Contois) model accepts at `x`.
/// Along `T` the row reads `head(T)² − ‖tail(T)‖² = βT + γ` with
/// `head(T) = e₀ + d₀T`; `γ ≥ 0` because `T = 0` is always accepted.
pub fn sup_rate(model: &GrowthModel, m: usize, x: &[Q], step: usize) -> Q {
    let rows = rows_of(model, m, step);
    assert!(rows.len() == 1 && rows[0].kind == ConeKind::Soc, "nested composites are not sampled");
    let mut col = x.to_vec();
    col.push(Q::zero());
    let e: Vec<Q> = rows[0].components.iter().map(|a| eval_q(a, &col)).collect();
    let d: Vec<Q> = rows[0].components.iter().map(|a| q(a.coef(VarId(m)))).collect();
    let alpha = d.iter().skip(1).fold(&d[0] * &d[0], |acc, v| acc - v * v);
    assert!(alpha.is_zero(), "T enters one factor of the hyperbolic row");
    let beta = e.iter().zip(&d).skip(1).fold(&e[0] * &d[0], |acc, (a, b)| acc - a * b) * Q::from_integer(2.into());
    let gamma = e.iter().skip(1).fold(&e[0] * &e[0], |acc, v| acc - v * v);
    assert!(d[0].is_negative() && !beta.is_positive() && !gamma.is_negative());
    let by_head = -&e[0] / &d[0];
    if beta.is_zero() {
        return by_head;
    }
    let by_square = -gamma / beta;
    by_square.min(by_head)
}

/// Auxiliary rates in the order `soc_rows` allocates them, each at the
/// exact largest value its child row accepts.
pub fn witness(model: &GrowthModel, m: usize, x: &[Q], step: usize) -> Vec<Q> {
    match model {
        GrowthModel::NonInteractive { a, b } | GrowthModel::GeometricInteractive { a, b } => {
            vec![sup_rate(a, m, x, step), sup_rate(b, m, x, step)]
        }
        _ => Vec::new(),
    }
}

/// Number of disagreements between exact cone feasibility and `T ≤ φ`
/// outside a 1e-9 band, over `samples` random points.
pub fn soc_disagreements(model: &GrowthModel, m: usize, step: usize, samples: usize, rng: &mut impl Rng) -> usize {
    let rows = rows_of(model, m, step);
    let mut bad = 0;
    let mut done = 0;
    while done < samples {
        let x: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..100.0) })
            .collect();
        let phi = super::rate(model, &x, step);
        let t_val = match rng.random_range(0..3) {
            0 => rng.random_range(0.0..(2.0 * phi + 1.0)),
            1 => (phi + rng.random_range(-1e-6..1e-6)).max(0.0),
            _ => (phi * (1.0 + rng.random_range(-1e-3..1e-3))).max(0.0),
        };
        if (t_val - phi).abs() <= 1e-9 {
            continue;
        }
        done += 1;
        let xq: Vec<Q> = x.iter().map(|v| q(*v)).collect();
        let mut col = xq.clone();
        col.push(q(t_val));
        col.extend(witness(model, m, &xq, step));
        let feasible = rows.iter().all(|r| row_holds(r, &col));
        if feasible != (t_val <= phi) {
            bad += 1;
        }
    }
    bad
}

pub fn fd_gradient(model: &GrowthModel, x: &[f64], step: usize) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + x[i].abs());
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (super::rate(model, &a, step) - super::rate(model, &b, step)) / (2.0 * h)
        })
        .collect()
}

/// Worst relative Jacobian error over 100 smooth random points.
pub fn jacobian_error(model: &GrowthModel, m: usize, rng: &mut impl Rng) -> f64 {
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..100.0)).collect();
        let step = rng.random_range(1..=10);
        if let GrowthModel::NonInteractive { a, b } = model {
            let (ra, rb) = (super::rate(a, &x, step), super::rate(b, &x, step));
            if (ra - rb).abs() <= 1e-3 * (1.0 + ra.max(rb)) {
                continue;
            }
        }
        let g = model.gradient(&x, step);
        if g.flagged {
            continue;
        }
        done += 1;
        let fd = fd_gradient(model, &x, step);
        let d: Vec<f64> = g.values.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(inf(&d) / inf(&g.values).max(1e-12));
    }
    worst
}

