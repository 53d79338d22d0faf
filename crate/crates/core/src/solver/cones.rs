//! Cone algebra for the interior-point iteration: Jordan products, the
//! Nesterov-Todd scaling, and step lengths to the cone boundary.
//!
//! For the second-order cone the Jordan product is
//! `u ∘ v = (uᵀv, u₀v₁ + v₀u₁)` with identity `e = (1, 0, …, 0)`; for the
//! nonnegative orthant it is the elementwise product with `e = 1`.

use crate::conic::{Cone, ConeKind};
use crate::sparse::{dot, norm2};

/// A block of the cone product used internally. Consecutive orthant cones of
/// a program are merged into one `Lp` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Lp { start: usize, len: usize },
    Soc { start: usize, len: usize },
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        match *self {
            Block::Lp { start, len } | Block::Soc { start, len } => start..start + len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSet {
    pub blocks: Vec<Block>,
    pub dim: usize,
    /// Barrier degree: one per orthant entry, one per second-order cone.
    pub degree: usize,
}

impl ConeSet {
    pub fn new(cones: &[Cone]) -> Self {
        let mut blocks: Vec<Block> = Vec::new();
        let mut at = 0;
        let mut degree = 0;
        for cone in cones {
            match cone.kind {
                ConeKind::Nonneg => {
                    degree += cone.dim;
                    if let Some(Block::Lp { start, len }) = blocks.last_mut() {
                        if *start + *len == at {
                            *len += cone.dim;
                            at += cone.dim;
                            continue;
                        }
                    }
                    blocks.push(Block::Lp {
                        start: at,
                        len: cone.dim,
                    });
                }
                ConeKind::Soc => {
                    degree += 1;
                    blocks.push(Block::Soc {
                        start: at,
                        len: cone.dim,
                    });
                }
            }
            at += cone.dim;
        }
        ConeSet {
            blocks,
            dim: at,
            degree,
        }
    }

    /// The cone identity `e`.
    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        for b in &self.blocks {
            match *b {
                Block::Lp { start, len } => e[start..start + len].fill(1.0),
                Block::Soc { start, .. } => e[start] = 1.0,
            }
        }
        e
    }

    /// Smallest "eigenvalue" of `u` over all blocks (`u₀ − ‖u₁‖` for the
    /// second-order cone); positive iff `u` is interior.
    pub fn min_eig(&self, u: &[f64]) -> f64 {
        let mut out = f64::INFINITY;
        for b in &self.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for &v in &u[start..start + len] {
                        out = out.min(v);
                    }
                }
                Block::Soc { start, len } => {
                    out = out.min(u[start] - norm2(&u[start + 1..start + len]));
                }
            }
        }
        out
    }

    /// Moves `u` into the interior by adding a multiple of `e` when needed.
    pub fn shift_interior(&self, u: &mut [f64]) {
        let alpha = -self.min_eig(u);
        if alpha >= 0.0 {
            let e = self.identity();
            for (ui, ei) in u.iter_mut().zip(e) {
                *ui += (1.0 + alpha) * ei;
            }
        }
    }

    /// `u ∘ v`
    pub fn circ(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for k in start..start + len {
                        out[k] = u[k] * v[k];
                    }
                }
                Block::Soc { start, len } => {
                    let r = start..start + len;
                    out[start] = dot(&u[r.clone()], &v[r]);
                    for k in start + 1..start + len {
                        out[k] = u[start] * v[k] + v[start] * u[k];
                    }
                }
            }
        }
        out
    }

    /// `λ \ v`, the solution `x` of `λ ∘ x = v` (requires `λ` interior).
    pub fn inv_circ(&self, lambda: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for k in start..start + len {
                        out[k] = v[k] / lambda[k];
                    }
                }
                Block::Soc { start, len } => {
                    let l0 = lambda[start];
                    let l1 = &lambda[start + 1..start + len];
                    let v1 = &v[start + 1..start + len];
                    let det = l0 * l0 - dot(l1, l1);
                    let x0 = (l0 * v[start] - dot(l1, v1)) / det;
                    out[start] = x0;
                    for k in 1..len {
                        out[start + k] = (v1[k - 1] - x0 * l1[k - 1]) / l0;
                    }
                }
            }
        }
        out
    }

    /// Largest `α ≥ 0` (capped at `cap`) with `u + α du` in the cone.
    pub fn max_step(&self, u: &[f64], du: &[f64], cap: f64) -> f64 {
        let mut alpha = cap;
        for b in &self.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for k in start..start + len {
                        if du[k] < 0.0 {
                            alpha = alpha.min(-u[k] / du[k]);
                        }
                    }
                }
                Block::Soc { start, len } => {
                    let r = start..start + len;
                    alpha = alpha.min(soc_step(&u[r.clone()], &du[r]));
                }
            }
        }
        alpha.max(0.0)
    }
}

/// Largest step keeping `u + α du` in a second-order cone, for interior `u`.
fn soc_step(u: &[f64], du: &[f64]) -> f64 {
    let (u0, u1) = (u[0], &u[1..]);
    let (d0, d1) = (du[0], &du[1..]);
    // f(α) = aα² + 2bα + c, the cone determinant along the ray
    let a = d0 * d0 - dot(d1, d1);
    let b = u0 * d0 - dot(u1, d1);
    let c = u0 * u0 - dot(u1, u1);
    let mut alpha = f64::INFINITY;
    if d0 < 0.0 {
        alpha = -u0 / d0;
    }
    let disc = b * b - a * c;
    if a == 0.0 {
        if b < 0.0 {
            alpha = alpha.min(-c / (2.0 * b));
        }
    } else if disc >= 0.0 {
        let q = -(b + b.signum() * disc.sqrt());
        let roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
        for r in roots {
            if r > 0.0 {
                alpha = alpha.min(r);
            }
        }
    }
    alpha
}

/// Nesterov-Todd scaling `W` with `W z = W⁻¹ s = λ`.
#[derive(Debug, Clone, Default)]
pub struct Scaling {
    /// Orthant scalings `sqrt(s/z)` at orthant positions (unused elsewhere).
    pub lp_w: Vec<f64>,
    /// Per second-order block: `(η, w̄)` with `w̄₀² − ‖w̄₁‖² = 1`.
    pub soc: Vec<(f64, Vec<f64>)>,
    pub lambda: Vec<f64>,
}

impl Scaling {
    /// Computes the scaling at interior `s`, `z`; `None` when either point
    /// has left the interior.
    pub fn new(cones: &ConeSet, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut lp_w = vec![0.0; cones.dim];
        let mut soc = Vec::new();
        for b in &cones.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for k in start..start + len {
                        if !(s[k] > 0.0 && z[k] > 0.0) {
                            return None;
                        }
                        lp_w[k] = (s[k] / z[k]).sqrt();
                    }
                }
                Block::Soc { start, len } => {
                    let sb = &s[start..start + len];
                    let zb = &z[start..start + len];
                    let s_res = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
                    let z_res = zb[0] * zb[0] - dot(&zb[1..], &zb[1..]);
                    if !(s_res > 0.0 && z_res > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                        return None;
                    }
                    let (sn, zn) = (s_res.sqrt(), z_res.sqrt());
                    let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
                    let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
                    let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
                    let mut w = vec![0.0; len];
                    w[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                    for k in 1..len {
                        w[k] = (sbar[k] - zbar[k]) / (2.0 * gamma);
                    }
                    let eta = (s_res / z_res).sqrt().sqrt();
                    soc.push((eta, w));
                }
            }
        }
        let mut out = Scaling {
            lp_w,
            soc,
            lambda: Vec::new(),
        };
        out.lambda = out.apply(cones, z, false);
        if cones.min_eig(&out.lambda) > 0.0 {
            Some(out)
        } else {
            None
        }
    }

    /// `W v` (or `W⁻¹ v` when `inverse`).
    pub fn apply(&self, cones: &ConeSet, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; cones.dim];
        let mut k_soc = 0;
        for b in &cones.blocks {
            match *b {
                Block::Lp { start, len } => {
                    for k in start..start + len {
                        out[k] = if inverse { v[k] / self.lp_w[k] } else { v[k] * self.lp_w[k] };
                    }
                }
                Block::Soc { start, len } => {
                    let (eta, w) = &self.soc[k_soc];
                    k_soc += 1;
                    let sign = if inverse { -1.0 } else { 1.0 };
                    let scale = if inverse { 1.0 / eta } else { *eta };
                    let vb = &v[start..start + len];
                    let w1v1 = dot(&w[1..], &vb[1..]);
                    out[start] = scale * (w[0] * vb[0] + sign * w1v1);
                    let coef = sign * vb[0] + w1v1 / (1.0 + w[0]);
                    for k in 1..len {
                        out[start + k] = scale * (vb[k] + coef * w[k]);
                    }
                }
            }
        }
        out
    }
}
