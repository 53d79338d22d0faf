//! Structural presolve: fixes variables pinned by singleton equality rows,
//! drops empty rows, and drops exact duplicate rows. Removed rows get their
//! multipliers back from stationarity after the reduced program is solved.
//!
//! Dependency detection is structural (identical rows up to scale), not a
//! numerical rank test.

use crate::conic::ConicProgram;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct PresolveReport {
    /// `(column, value)` pairs fixed by singleton rows, in removal order.
    pub fixed: Vec<(usize, f64)>,
    /// Empty rows removed (right-hand side zero).
    pub empty_rows: Vec<usize>,
    /// Rows removed as scalar multiples of an earlier row.
    pub dependent_rows: Vec<usize>,
    /// Set when presolve alone proves the equalities inconsistent.
    pub infeasible: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Presolved {
    pub program: ConicProgram,
    pub report: PresolveReport,
    kept_cols: Vec<usize>,
    kept_rows: Vec<usize>,
    /// `(row, column)` of every singleton removal, in order.
    singletons: Vec<(usize, usize)>,
    n: usize,
    p: usize,
}

const TOL: f64 = 1e-12;

pub fn presolve(prog: &ConicProgram) -> Presolved {
    let n = prog.n_vars;
    let p = prog.n_eq();
    let at = prog.a.transpose(); // rows of A as columns
    let mut row_alive = vec![true; p];
    let mut col_alive = vec![true; n];
    let mut value = vec![0.0; n];
    let mut b = prog.b.clone();
    let mut report = PresolveReport::default();
    let mut singletons = Vec::new();

    // column lists of A for substitution
    let a = &prog.a;
    loop {
        let mut changed = false;
        for i in 0..p {
            if !row_alive[i] {
                continue;
            }
            let live: Vec<(usize, f64)> = (at.colptr[i]..at.colptr[i + 1])
                .map(|k| (at.rowval[k], at.nzval[k]))
                .filter(|&(j, v)| col_alive[j] && v != 0.0)
                .collect();
            match live.len() {
                0 => {
                    row_alive[i] = false;
                    if b[i].abs() > TOL * (1.0 + crate::sparse::inf_norm(&prog.b)) {
                        report.infeasible = Some(format!("equality row {i} reads 0 = {}", b[i]));
                    }
                    report.empty_rows.push(i);
                    changed = true;
                }
                1 => {
                    let (j, aij) = live[0];
                    let xj = b[i] / aij;
                    value[j] = xj;
                    col_alive[j] = false;
                    row_alive[i] = false;
                    for k in a.colptr[j]..a.colptr[j + 1] {
                        let r = a.rowval[k];
                        if row_alive[r] {
                            b[r] -= a.nzval[k] * xj;
                        }
                    }
                    report.fixed.push((j, xj));
                    singletons.push((i, j));
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }

    // exact duplicates (up to scale) among surviving rows
    let mut seen: std::collections::HashMap<Vec<(usize, u64)>, (usize, f64)> = Default::default();
    for i in 0..p {
        if !row_alive[i] {
            continue;
        }
        let live: Vec<(usize, f64)> = (at.colptr[i]..at.colptr[i + 1])
            .map(|k| (at.rowval[k], at.nzval[k]))
            .filter(|&(j, v)| col_alive[j] && v != 0.0)
            .collect();
        let lead = live[0].1;
        let key: Vec<(usize, u64)> = live.iter().map(|&(j, v)| (j, (v / lead).to_bits())).collect();
        match seen.get(&key) {
            Some(&(i0, lead0)) => {
                let expect = b[i0] / lead0 * lead;
                if (b[i] - expect).abs() > 1e-10 * (1.0 + b[i].abs()) {
                    report.infeasible = Some(format!("equality rows {i0} and {i} are parallel but inconsistent"));
                }
                row_alive[i] = false;
                report.dependent_rows.push(i);
            }
            None => {
                seen.insert(key, (i, lead));
            }
        }
    }

    let kept_cols: Vec<usize> = (0..n).filter(|&j| col_alive[j]).collect();
    let kept_rows: Vec<usize> = (0..p).filter(|&i| row_alive[i]).collect();
    let mut col_new = vec![usize::MAX; n];
    for (k, &j) in kept_cols.iter().enumerate() {
        col_new[j] = k;
    }
    let mut row_new = vec![usize::MAX; p];
    for (k, &i) in kept_rows.iter().enumerate() {
        row_new[i] = k;
    }
    let a_trip: Vec<_> = prog
        .a
        .triplets()
        .filter(|&(r, c, _)| row_alive[r] && col_alive[c])
        .map(|(r, c, v)| (row_new[r], col_new[c], v))
        .collect();
    let g_trip: Vec<_> = prog
        .g
        .triplets()
        .filter(|&(_, c, _)| col_alive[c])
        .map(|(r, c, v)| (r, col_new[c], v))
        .collect();
    let mut h = prog.h.clone();
    let mut c0 = prog.c0;
    for &(j, xj) in &report.fixed {
        for k in prog.g.colptr[j]..prog.g.colptr[j + 1] {
            h[prog.g.rowval[k]] -= prog.g.nzval[k] * xj;
        }
        c0 += prog.c[j] * xj;
    }
    let program = ConicProgram {
        n_vars: kept_cols.len(),
        c: kept_cols.iter().map(|&j| prog.c[j]).collect(),
        c0,
        a: CscMatrix::from_triplets(kept_rows.len(), kept_cols.len(), &a_trip),
        b: kept_rows.iter().map(|&i| b[i]).collect(),
        g: CscMatrix::from_triplets(prog.n_cone_rows(), kept_cols.len(), &g_trip),
        h,
        cones: prog.cones.clone(),
        var_tags: kept_cols.iter().map(|&j| prog.var_tags[j]).collect(),
        eq_tags: kept_rows.iter().map(|&i| prog.eq_tags[i]).collect(),
        cone_tags: prog.cone_tags.clone(),
    };
    Presolved {
        program,
        report,
        kept_cols,
        kept_rows,
        singletons,
        n,
        p,
    }
}

impl Presolved {
    pub fn is_trivial(&self) -> bool {
        self.singletons.is_empty() && self.kept_rows.len() == self.p
    }

    /// Maps a reduced primal-dual point back to the original program.
    pub fn restore(&self, original: &ConicProgram, x_red: &[f64], y_red: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; self.n];
        for (k, &j) in self.kept_cols.iter().enumerate() {
            x[j] = x_red[k];
        }
        for &(j, v) in &self.report.fixed {
            x[j] = v;
        }
        let mut y = vec![0.0; self.p];
        for (k, &i) in self.kept_rows.iter().enumerate() {
            y[i] = y_red[k];
        }
        // stationarity on each fixed column, last removal first:
        // c_j + Σ_r A_rj y_r + (Gᵀz)_j = 0 solved for the singleton row's y
        let gtz = original.g.tmul_vec(z);
        for &(i, j) in self.singletons.iter().rev() {
            let mut acc = original.c[j] + gtz[j];
            let mut aij = 0.0;
            for k in original.a.colptr[j]..original.a.colptr[j + 1] {
                let r = original.a.rowval[k];
                if r == i {
                    aij += original.a.nzval[k];
                } else {
                    acc += original.a.nzval[k] * y[r];
                }
            }
            y[i] = -acc / aij;
        }
        (x, y)
    }
}
