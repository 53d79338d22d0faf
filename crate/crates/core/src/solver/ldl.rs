//! Sparse `LDLᵀ` factorization of quasi-definite matrices.
//!
//! The matrix is supplied as its upper triangle in compressed-column form.
//! A fill-reducing permutation is computed once from the sparsity pattern;
//! numeric factorizations reuse the elimination tree and column counts.
//! Pivots whose sign disagrees with the expected inertia (or that are too
//! small) are replaced by a small value of the expected sign, which keeps
//! the factorization well defined on nearly singular systems; iterative
//! refinement against the unperturbed matrix removes the resulting error.

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// `perm[k]` is the original index of permuted position `k`.
    perm: Vec<usize>,
    /// Upper triangle of the permuted matrix.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// Position in `ax` of each input entry, in input order.
    slot: Vec<usize>,
    signs: Vec<f64>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    pub dynamic_eps: f64,
    pub dynamic_delta: f64,
    /// Number of pivots replaced in the last factorization.
    pub regularized: usize,
}

impl LdlFactor {
    /// Symbolic analysis. `entries` are `(row, col)` positions of the upper
    /// triangle (row ≤ col, duplicates allowed, every diagonal present);
    /// `signs[i]` is the expected sign of pivot `i`.
    pub fn analyze(n: usize, entries: &[(usize, usize)], signs: &[f64]) -> Self {
        let perm = fill_reducing_order(n, entries);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        // permuted upper triangle, with a slot map from input entries
        let mut cols: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (idx, &(r, c)) in entries.iter().enumerate() {
            debug_assert!(r <= c);
            let (pr, pc) = (iperm[r], iperm[c]);
            let (lo, hi) = if pr <= pc { (pr, pc) } else { (pc, pr) };
            cols[hi].push((lo, idx));
        }
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(entries.len());
        let mut slot = vec![0usize; entries.len()];
        for (c, col) in cols.iter_mut().enumerate() {
            col.sort_unstable();
            for &(r, idx) in col.iter() {
                if ai.len() > ap[c] && *ai.last().unwrap() == r {
                    slot[idx] = ai.len() - 1;
                } else {
                    slot[idx] = ai.len();
                    ai.push(r);
                }
            }
            ap[c + 1] = ai.len();
        }
        let ax = vec![0.0; ai.len()];
        let psigns: Vec<f64> = perm.iter().map(|&p| signs[p]).collect();

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &i0 in &ai[ap[j]..ap[j + 1]] {
                let mut i = i0;
                while i != j && work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        LdlFactor {
            n,
            perm,
            ap,
            ai,
            ax,
            slot,
            signs: psigns,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            dynamic_eps: 1e-13,
            dynamic_delta: 1e-7,
            regularized: 0,
        }
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization for entry values given in input order
    /// (duplicates are summed).
    pub fn factor(&mut self, values: &[f64]) -> bool {
        self.ax.fill(0.0);
        for (idx, &v) in values.iter().enumerate() {
            self.ax[self.slot[idx]] += v;
        }
        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.regularized = 0;
        for k in 0..n {
            let mut n_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] += self.ax[p];
                    continue;
                }
                y_vals[b] += self.ax[p];
                if !y_marked[b] {
                    y_marked[b] = true;
                    elim[0] = b;
                    let mut n_e = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[n_e] = next;
                        n_e += 1;
                        next = self.etree[next];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[n_y] = elim[n_e];
                        n_y += 1;
                    }
                }
            }
            for i in (0..n_y).rev() {
                let c = y_idx[i];
                let end = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..end {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[end] = k;
                let l = yc * self.dinv[c];
                self.lx[end] = l;
                self.d[k] -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            if self.signs[k] * self.d[k] <= self.dynamic_eps {
                self.d[k] = self.signs[k] * self.dynamic_delta;
                self.regularized += 1;
            }
            if !self.d[k].is_finite() {
                return false;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        true
    }

    /// Solves with the last factorization, in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}

/// Approximate minimum degree ordering of the symmetric pattern.
fn fill_reducing_order(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // diagonals are listed so the pattern never has fewer entries than columns
    let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
    for &(r, c) in entries {
        if r != c {
            cols[c].push(r);
            cols[r].push(c);
        }
    }
    let mut ap = Vec::with_capacity(n + 1);
    let mut ai = Vec::new();
    ap.push(0usize);
    for col in &mut cols {
        col.sort_unstable();
        col.dedup();
        ai.extend_from_slice(col);
        ap.push(ai.len());
    }
    match amd::order(n, &ap, &ai, &amd::Control::default()) {
        Ok((p, _, _)) => p,
        Err(_) => (0..n).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_random_quasi_definite_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n1 = rng.random_range(1..8);
            let n2 = rng.random_range(0..6);
            let n = n1 + n2;
            let mut dense = DMatrix::zeros(n, n);
            for i in 0..n1 {
                dense[(i, i)] = rng.random_range(0.5..2.0);
            }
            for i in n1..n {
                dense[(i, i)] = -rng.random_range(0.5..2.0);
            }
            for i in 0..n1 {
                for j in n1..n {
                    if rng.random_bool(0.5) {
                        let v = rng.random_range(-1.0..1.0);
                        dense[(i, j)] = v;
                        dense[(j, i)] = v;
                    }
                }
            }
            let mut entries = Vec::new();
            let mut vals = Vec::new();
            for j in 0..n {
                for i in 0..=j {
                    if dense[(i, j)] != 0.0 || i == j {
                        entries.push((i, j));
                        vals.push(dense[(i, j)]);
                    }
                }
            }
            let signs: Vec<f64> = (0..n).map(|i| if i < n1 { 1.0 } else { -1.0 }).collect();
            let mut f = LdlFactor::analyze(n, &entries, &signs);
            assert!(f.factor(&vals));
            assert_eq!(f.regularized, 0);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            let r = &dense * DVector::from_vec(x) - DVector::from_vec(b);
            assert!(r.amax() < 1e-10, "residual {}", r.amax());
        }
    }
}
