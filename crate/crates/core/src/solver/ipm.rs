//! The interior-point iteration on the homogeneous self-dual embedding
//!
//! ```text
//! Aᵀy + Gᵀz + cτ = 0,   Ax − bτ = 0,   Gx + s − hτ = 0,
//! cᵀx + bᵀy + hᵀz + κ = 0,   (s, z) ∈ K × K,   τ, κ ≥ 0.
//! ```
//!
//! A solution with `τ > 0` gives an optimal point `(x, y, z, s)/τ`; one with
//! `κ > 0` certifies primal or dual infeasibility.

use super::cones::{Block, ConeSet, Scaling};
use super::ldl::LdlFactor;
use super::{IterationRecord, PresolveReport, Solution, SolverOptions, Status};
use crate::conic::ConicProgram;
use crate::sparse::{dot, inf_norm, CscMatrix};

/// The equilibrated program and its scaling vectors: the solver works on
/// `Ã = E_A A D`, `G̃ = E_G G D`, `b̃ = E_A b`, `h̃ = E_G h`, `c̃ = D c`.
struct Scaled {
    a: CscMatrix,
    g: CscMatrix,
    b: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    e_a: Vec<f64>,
    e_g: Vec<f64>,
}

fn equilibrate(prog: &ConicProgram, cones: &ConeSet, enabled: bool) -> Scaled {
    let (n, p, m) = (prog.n_vars, prog.n_eq(), prog.n_cone_rows());
    let mut d = vec![1.0; n];
    let mut e_a = vec![1.0; p];
    let mut e_g = vec![1.0; m];
    let mut a = prog.a.clone();
    let mut g = prog.g.clone();
    if enabled {
        let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
        for _ in 0..15 {
            let ca = a.col_inf_norms();
            let cg = g.col_inf_norms();
            let dc: Vec<f64> = (0..n).map(|j| 1.0 / clamp(ca[j].max(cg[j])).sqrt()).collect();
            let ra: Vec<f64> = a.row_inf_norms().into_iter().map(|v| 1.0 / clamp(v).sqrt()).collect();
            let rg_raw = g.row_inf_norms();
            let mut rg = vec![1.0; m];
            for b in &cones.blocks {
                match *b {
                    Block::Lp { start, len } => {
                        for k in start..start + len {
                            rg[k] = 1.0 / clamp(rg_raw[k]).sqrt();
                        }
                    }
                    Block::Soc { start, len } => {
                        let mx = rg_raw[start..start + len].iter().fold(0.0f64, |a, &v| a.max(v));
                        rg[start..start + len].fill(1.0 / clamp(mx).sqrt());
                    }
                }
            }
            a.scale(&ra, &dc);
            g.scale(&rg, &dc);
            for j in 0..n {
                d[j] *= dc[j];
            }
            for i in 0..p {
                e_a[i] *= ra[i];
            }
            for k in 0..m {
                e_g[k] *= rg[k];
            }
        }
    }
    Scaled {
        b: prog.b.iter().zip(&e_a).map(|(v, e)| v * e).collect(),
        h: prog.h.iter().zip(&e_g).map(|(v, e)| v * e).collect(),
        c: prog.c.iter().zip(&d).map(|(v, e)| v * e).collect(),
        a,
        g,
        d,
        e_a,
        e_g,
    }
}

/// The scaled KKT matrix `[[δI, Aᵀ, (W⁻¹G)ᵀ], [A, −δI, 0], [W⁻¹G, 0, −(1 + δ)I]]`.
///
/// Eliminating `W²` from the cone block in favour of `W⁻¹G` keeps the
/// conditioning of the factored matrix at that of `W` rather than `W²`, which
/// matters once second-order iterates approach the boundary.  The system
/// [`Kkt::solve`] presents to callers is still the unscaled one with `−W²`.
struct Kkt {
    n: usize,
    p: usize,
    m: usize,
    values: Vec<f64>,
    /// Per column of `G`, the rows of `W⁻¹G` that can be nonzero (closed
    /// under second-order blocks) and their value indices.
    wg: Vec<Vec<(usize, usize)>>,
    factor: LdlFactor,
    /// Relative residual `‖r‖∞ / (1 + ‖rhs‖∞)` of the last solve, measured on
    /// the unregularized scaled matrix.
    last_residual: std::cell::Cell<f64>,
}

impl Kkt {
    fn new(sc: &Scaled, cones: &ConeSet, delta: f64) -> Self {
        let (n, p, m) = (sc.c.len(), sc.b.len(), sc.h.len());
        let mut block_of = vec![0..0; m];
        for b in &cones.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for k in start..start + len {
                        block_of[k] = k..k + 1;
                    }
                }
                Block::Soc { start, len } => block_of[start..start + len].fill(start..start + len),
            }
        }
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            entries.push((j, j));
            values.push(delta);
        }
        for (i, j, v) in sc.a.triplets() {
            entries.push((j, n + i));
            values.push(v);
        }
        let mut wg = Vec::with_capacity(n);
        for j in 0..n {
            let mut rows: Vec<usize> = (sc.g.colptr[j]..sc.g.colptr[j + 1])
                .flat_map(|q| block_of[sc.g.rowval[q]].clone())
                .collect();
            rows.sort_unstable();
            rows.dedup();
            let col = rows
                .into_iter()
                .map(|k| {
                    entries.push((j, n + p + k));
                    values.push(0.0);
                    (k, values.len() - 1)
                })
                .collect();
            wg.push(col);
        }
        for i in 0..p {
            entries.push((n + i, n + i));
            values.push(-delta);
        }
        for k in 0..m {
            entries.push((n + p + k, n + p + k));
            values.push(-1.0 - delta);
        }
        let signs: Vec<f64> = (0..n + p + m).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let factor = LdlFactor::analyze(n + p + m, &entries, &signs);
        let mut kkt = Kkt {
            n,
            p,
            m,
            values,
            wg,
            factor,
            last_residual: std::cell::Cell::new(0.0),
        };
        kkt.set_scaling(sc, cones, None);
        kkt
    }

    /// Writes `W⁻¹G` (or `G` when `w` is `None`) into the matrix.
    fn set_scaling(&mut self, sc: &Scaled, cones: &ConeSet, w: Option<&Scaling>) {
        let mut col = vec![0.0; self.m];
        for j in 0..self.n {
            for q in sc.g.colptr[j]..sc.g.colptr[j + 1] {
                col[sc.g.rowval[q]] = sc.g.nzval[q];
            }
            let scaled = match w {
                Some(w) => w.apply(cones, &col, true),
                None => col.clone(),
            };
            for &(k, at) in &self.wg[j] {
                self.values[at] = scaled[k];
                col[k] = 0.0;
            }
        }
    }

    fn factor(&mut self) -> bool {
        self.factor.factor(&self.values)
    }

    /// Applies the unregularized scaled matrix.
    fn apply(&self, sc: &Scaled, cones: &ConeSet, w: Option<&Scaling>, v: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let (vx, vy, vz) = (&v[..n], &v[n..n + p], &v[n + p..]);
        let winv = |u: &[f64]| match w {
            Some(w) => w.apply(cones, u, true),
            None => u.to_vec(),
        };
        let mut out = vec![0.0; n + p + self.m];
        let (ox, rest) = out.split_at_mut(n);
        sc.a.tmul_vec_acc(vy, ox, 1.0);
        sc.g.tmul_vec_acc(&winv(vz), ox, 1.0);
        let (oy, oz) = rest.split_at_mut(p);
        sc.a.mul_vec_acc(vx, oy, 1.0);
        for ((o, g), z) in oz.iter_mut().zip(winv(&sc.g.mul_vec(vx))).zip(vz) {
            *o = g - z;
        }
        out
    }

    /// Solves the scaled system for `(dx, dy, W dz)` given the right-hand
    /// side `(r_x, r_y, W⁻¹ r_z)`, refining against the unregularized matrix
    /// and keeping the iterate with the smallest residual.  Callers work in
    /// the scaled `z` coordinates throughout, since converting back and forth
    /// through `W` and `W⁻¹` costs `cond(W)` in accuracy.
    // The negated comparisons also stop on a NaN residual.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn solve(&self, sc: &Scaled, cones: &ConeSet, w: Option<&Scaling>, rhs: &[f64], steps: usize) -> Vec<f64> {
        let residual = |x: &[f64]| -> Vec<f64> {
            let kx = self.apply(sc, cones, w, x);
            rhs.iter().zip(&kx).map(|(a, b)| a - b).collect()
        };
        let mut x = rhs.to_vec();
        self.factor.solve(&mut x);
        let rhs_norm = inf_norm(rhs);
        let mut r = residual(&x);
        let mut rn = inf_norm(&r);
        for _ in 0..steps {
            if !(rn > 1e-14 * (1.0 + rhs_norm)) {
                break;
            }
            self.factor.solve(&mut r);
            let trial: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
            let r_trial = residual(&trial);
            let rn_trial = inf_norm(&r_trial);
            if !(rn_trial < rn) {
                break;
            }
            x = trial;
            r = r_trial;
            rn = rn_trial;
        }
        self.last_residual.set(rn / (1.0 + rhs_norm));
        x
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Metrics {
    pcost: f64,
    dcost: f64,
    pres: f64,
    dres: f64,
    complementarity: f64,
    duality_slack: f64,
    optimal: bool,
    infeasible: bool,
    unbounded: bool,
}

/// Unscaled `(x, y, z, s)` of an iterate, not divided by `τ`.
fn unscale(sc: &Scaled, it: &Iterate) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        it.x.iter().zip(&sc.d).map(|(v, d)| v * d).collect(),
        it.y.iter().zip(&sc.e_a).map(|(v, e)| v * e).collect(),
        it.z.iter().zip(&sc.e_g).map(|(v, e)| v * e).collect(),
        it.s.iter().zip(&sc.e_g).map(|(v, e)| v / e).collect(),
    )
}

fn metrics(prog: &ConicProgram, sc: &Scaled, it: &Iterate, opts: &SolverOptions) -> Metrics {
    let (x, y, z, s) = unscale(sc, it);
    let t = it.tau;
    let xh: Vec<f64> = x.iter().map(|v| v / t).collect();
    let yh: Vec<f64> = y.iter().map(|v| v / t).collect();
    let zh: Vec<f64> = z.iter().map(|v| v / t).collect();
    let sh: Vec<f64> = s.iter().map(|v| v / t).collect();
    let mut rx = prog.c.clone();
    prog.a.tmul_vec_acc(&yh, &mut rx, 1.0);
    prog.g.tmul_vec_acc(&zh, &mut rx, 1.0);
    let ry = prog.eq_residual(&xh);
    let mut rz = prog.g.mul_vec(&xh);
    for k in 0..rz.len() {
        rz[k] += sh[k] - prog.h[k];
    }
    let pscale = 1.0f64.max(inf_norm(&prog.b)).max(inf_norm(&prog.h));
    let dscale = 1.0f64.max(inf_norm(&prog.c));
    let pres = inf_norm(&ry).max(inf_norm(&rz)) / pscale;
    let dres = inf_norm(&rx) / dscale;
    let pcost = dot(&prog.c, &xh) + prog.c0;
    let dcost = -dot(&prog.b, &yh) - dot(&prog.h, &zh) + prog.c0;
    let complementarity = dot(&sh, &zh);
    let duality_slack = pcost - dcost - dot(&xh, &rx) + dot(&yh, &ry) + dot(&zh, &rz);
    let oscale = 1.0f64.max(pcost.abs()).max(dcost.abs());
    let optimal = pres <= opts.feas_tol
        && dres <= opts.feas_tol
        && (pcost - dcost).abs() <= opts.gap_tol * oscale
        && complementarity.abs() <= opts.gap_tol * oscale;

    // certificates use the raw (not τ-normalized) directions
    let mut infeasible = false;
    let mut unbounded = false;
    if it.kappa > it.tau {
        let hzby = dot(&prog.b, &y) + dot(&prog.h, &z);
        if hzby < 0.0 {
            let mut aty = vec![0.0; prog.n_vars];
            prog.a.tmul_vec_acc(&y, &mut aty, 1.0);
            prog.g.tmul_vec_acc(&z, &mut aty, 1.0);
            infeasible = inf_norm(&aty) / -hzby <= opts.feas_tol;
        }
        let cx = dot(&prog.c, &x);
        if cx < 0.0 {
            let ax = prog.a.mul_vec(&x);
            let mut gxs = prog.g.mul_vec(&x);
            for k in 0..gxs.len() {
                gxs[k] += s[k];
            }
            unbounded = inf_norm(&ax).max(inf_norm(&gxs)) / -cx <= opts.feas_tol;
        }
    }
    Metrics {
        pcost,
        dcost,
        pres,
        dres,
        complementarity,
        duality_slack,
        optimal,
        infeasible,
        unbounded,
    }
}

fn finish(prog: &ConicProgram, sc: &Scaled, it: &Iterate, m: &Metrics, status: Status, iterations: usize, records: Vec<IterationRecord>) -> Solution {
    let (x, y, z, s) = unscale(sc, it);
    let div = match status {
        Status::Infeasible | Status::Unbounded => 1.0,
        _ => it.tau,
    };
    let nrm = |v: Vec<f64>| v.into_iter().map(|e| e / div).collect::<Vec<f64>>();
    let (pcost, dcost) = match status {
        Status::Infeasible => (f64::INFINITY, f64::INFINITY),
        Status::Unbounded => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        _ => (m.pcost, m.dcost),
    };
    let _ = prog;
    Solution {
        status,
        x: nrm(x),
        y: nrm(y),
        z: nrm(z),
        s: nrm(s),
        pcost,
        dcost,
        pres: m.pres,
        dres: m.dres,
        iterations,
        records,
        presolve: PresolveReport::default(),
    }
}

pub(super) fn run(prog: &ConicProgram, opts: &SolverOptions) -> Solution {
    let cones = ConeSet::new(&prog.cones);
    let sc = equilibrate(prog, &cones, opts.equilibrate);
    let (n, p, m) = (prog.n_vars, prog.n_eq(), prog.n_cone_rows());
    let mut kkt = Kkt::new(&sc, &cones, opts.static_reg);
    let e = cones.identity();

    let mut it = Iterate {
        x: vec![0.0; n],
        y: vec![0.0; p],
        z: vec![0.0; m],
        s: vec![0.0; m],
        tau: 1.0,
        kappa: 1.0,
    };
    let mut records = Vec::new();

    if !kkt.factor() {
        let mt = metrics(prog, &sc, &it, opts);
        return finish(prog, &sc, &it, &mt, Status::NumericalFailure, 0, records);
    }
    // primal start: least-squares fit of Gx ≈ h subject to Ax = b
    let mut rhs = vec![0.0; n + p + m];
    rhs[n..n + p].copy_from_slice(&sc.b);
    rhs[n + p..].copy_from_slice(&sc.h);
    let sol = kkt.solve(&sc, &cones, None, &rhs, opts.refine_steps);
    it.x.copy_from_slice(&sol[..n]);
    it.s = sol[n + p..].iter().map(|v| -v).collect();
    cones.shift_interior(&mut it.s);
    // dual start: minimum-norm z with Aᵀy + Gᵀz = −c
    let mut rhs = vec![0.0; n + p + m];
    for j in 0..n {
        rhs[j] = -sc.c[j];
    }
    let sol = kkt.solve(&sc, &cones, None, &rhs, opts.refine_steps);
    it.y.copy_from_slice(&sol[n..n + p]);
    it.z.copy_from_slice(&sol[n + p..]);
    cones.shift_interior(&mut it.z);

    let degree = cones.degree as f64 + 1.0;
    let mut last_step = 0.0;
    let mut last_sigma = 0.0;
    let mut last_reg = 0;
    let mut last_residual = 0.0;
    let mut stalls = 0;
    for iter in 0..=opts.max_iter {
        let mt = metrics(prog, &sc, &it, opts);
        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / degree;
        let rec = IterationRecord {
            iter,
            pcost: mt.pcost,
            dcost: mt.dcost,
            pres: mt.pres,
            dres: mt.dres,
            complementarity: mt.complementarity,
            duality_slack: mt.duality_slack,
            tau: it.tau,
            kappa: it.kappa,
            mu,
            sigma: last_sigma,
            step: last_step,
            regularized_pivots: last_reg,
            kkt_residual: last_residual,
        };
        log::debug!(
            "iter {:3} pcost {:+.9e} dcost {:+.9e} pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e} kappa {:.2e} step {:.3}",
            rec.iter,
            rec.pcost,
            rec.dcost,
            rec.pres,
            rec.dres,
            rec.complementarity,
            rec.tau,
            rec.kappa,
            rec.step
        );
        records.push(rec);
        if !(mt.pcost.is_finite() || mt.infeasible || mt.unbounded) || !mu.is_finite() {
            return finish(prog, &sc, &it, &mt, Status::NumericalFailure, iter, records);
        }
        if mt.optimal {
            return finish(prog, &sc, &it, &mt, Status::Optimal, iter, records);
        }
        if mt.infeasible {
            return finish(prog, &sc, &it, &mt, Status::Infeasible, iter, records);
        }
        if mt.unbounded {
            return finish(prog, &sc, &it, &mt, Status::Unbounded, iter, records);
        }
        if iter == opts.max_iter {
            return finish(prog, &sc, &it, &mt, Status::MaxIterations, iter, records);
        }

        // residuals of the embedding
        let mut r_x = vec![0.0; n];
        sc.a.tmul_vec_acc(&it.y, &mut r_x, 1.0);
        sc.g.tmul_vec_acc(&it.z, &mut r_x, 1.0);
        for j in 0..n {
            r_x[j] += sc.c[j] * it.tau;
        }
        let mut r_y = sc.a.mul_vec(&it.x);
        for i in 0..p {
            r_y[i] -= sc.b[i] * it.tau;
        }
        let mut r_z = sc.g.mul_vec(&it.x);
        for k in 0..m {
            r_z[k] += it.s[k] - sc.h[k] * it.tau;
        }
        let r_tau = dot(&sc.c, &it.x) + dot(&sc.b, &it.y) + dot(&sc.h, &it.z) + it.kappa;

        let Some(w) = Scaling::new(&cones, &it.s, &it.z) else {
            return finish(prog, &sc, &it, &mt, Status::NumericalFailure, iter, records);
        };

        // direction for τ
        let mut rhs1 = vec![0.0; n + p + m];
        for j in 0..n {
            rhs1[j] = -sc.c[j];
        }
        rhs1[n..n + p].copy_from_slice(&sc.b);
        let h_scaled = w.apply(&cones, &sc.h, true);
        let rz_scaled = w.apply(&cones, &r_z, true);
        rhs1[n + p..].copy_from_slice(&h_scaled);
        kkt.set_scaling(&sc, &cones, Some(&w));
        if !kkt.factor() {
            return finish(prog, &sc, &it, &mt, Status::NumericalFailure, iter, records);
        }
        let d1 = kkt.solve(&sc, &cones, Some(&w), &rhs1, opts.refine_steps);
        last_reg = kkt.factor.regularized;
        last_residual = kkt.last_residual.get();
        let lambda = &w.lambda;
        // bᵀdy + hᵀdz evaluated as (W⁻¹h)ᵀ(W dz)
        let lin = |d: &[f64]| dot(&sc.c, &d[..n]) + dot(&sc.b, &d[n..n + p]) + dot(&h_scaled, &d[n + p..]);
        let denom = lin(&d1) - it.kappa / it.tau;

        // solves the linearized system for targets (t_s, t_κ) and residual weight
        let direction = |ts: &[f64], tk: f64, weight: f64| {
            let v = cones.inv_circ(lambda, ts);
            let mut rhs2 = vec![0.0; n + p + m];
            for j in 0..n {
                rhs2[j] = -weight * r_x[j];
            }
            for i in 0..p {
                rhs2[n + i] = -weight * r_y[i];
            }
            for k in 0..m {
                rhs2[n + p + k] = -weight * rz_scaled[k] - v[k];
            }
            let d2 = kkt.solve(&sc, &cones, Some(&w), &rhs2, opts.refine_steps);
            let dtau = (-weight * r_tau - tk / it.tau - lin(&d2)) / denom;
            let mut d: Vec<f64> = d2.iter().zip(&d1).map(|(a, b)| a + dtau * b).collect();
            // ds from the linear equation G dx + ds − h dτ = −r_z: the
            // complementarity form W(v − W dz) carries the refinement error
            // multiplied by ‖W‖ into the primal residual
            let gdx = sc.g.mul_vec(&d[..n]);
            let ds: Vec<f64> = (0..m).map(|k| -weight * r_z[k] + sc.h[k] * dtau - gdx[k]).collect();
            let dz = w.apply(&cones, &d[n + p..], true);
            d[n + p..].copy_from_slice(&dz);
            let dkappa = (tk - it.kappa * dtau) / it.tau;
            (d, ds, dtau, dkappa)
        };
        let max_step = |d: &[f64], ds: &[f64], dtau: f64, dkappa: f64| {
            let mut a = cones.max_step(&it.s, ds, 1.0 / 0.0);
            a = a.min(cones.max_step(&it.z, &d[n + p..], f64::INFINITY));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // predictor
        let ll = cones.circ(lambda, lambda);
        let ts_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
        let tk_aff = -it.tau * it.kappa;
        let (d_a, ds_a, dtau_a, dkappa_a) = direction(&ts_aff, tk_aff, 1.0);
        let alpha_a = max_step(&d_a, &ds_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_a).powi(3).clamp(0.0, 1.0);

        // corrector
        let dz_a = &d_a[n + p..];
        let corr = cones.circ(&w.apply(&cones, &ds_a, true), &w.apply(&cones, dz_a, false));
        let ts: Vec<f64> = (0..m).map(|k| -ll[k] - corr[k] + sigma * mu * e[k]).collect();
        let tk = -it.tau * it.kappa - dtau_a * dkappa_a + sigma * mu;
        let (d, ds, dtau, dkappa) = direction(&ts, tk, 1.0 - sigma);
        let alpha = (opts.step_fraction * max_step(&d, &ds, dtau, dkappa)).min(1.0);

        if !(alpha.is_finite() && d.iter().all(|v| v.is_finite())) {
            return finish(prog, &sc, &it, &mt, Status::NumericalFailure, iter, records);
        }
        if alpha < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                return finish(prog, &sc, &it, &mt, Status::NumericalFailure, iter, records);
            }
        } else {
            stalls = 0;
        }
        for j in 0..n {
            it.x[j] += alpha * d[j];
        }
        for i in 0..p {
            it.y[i] += alpha * d[n + i];
        }
        for k in 0..m {
            it.z[k] += alpha * d[n + p + k];
            it.s[k] += alpha * ds[k];
        }
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
        last_step = alpha;
        last_sigma = sigma;
    }
    unreachable!("the loop returns at max_iter")
}
