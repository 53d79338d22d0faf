//! Standard-form conic programs.
//!
//! A program is
//!
//! ```text
//! minimize    cᵀx + c0
//! subject to  A x = b
//!             h − G x ∈ K
//! ```
//!
//! where `K` is a product of nonnegative orthants and second-order cones
//! `{ (t, u) : ‖u‖ ≤ t }`. Programs are assembled row by row from affine
//! expressions through [`ProgramBuilder`], which also records what every
//! column and row means so solutions can be mapped back to trajectories.

mod interchange;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

pub use interchange::{read_program, write_program};

use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// `Σ coef·x[var] + constant`
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Affine {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Affine {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        Affine {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    /// True when no variable has a nonzero coefficient.
    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn add_scaled(&mut self, other: &Affine, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.terms
            .extend(other.terms.iter().map(|&(v, c)| (v, c * scale)));
        self.constant += other.constant * scale;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// Coefficient of `v` after merging duplicate terms.
    pub fn coef(&self, v: VarId) -> f64 {
        self.terms
            .iter()
            .filter(|(w, _)| *w == v)
            .map(|&(_, c)| c)
            .sum()
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: Affine) -> Affine {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(mut self, rhs: f64) -> Affine {
        for t in &mut self.terms {
            t.1 *= rhs;
        }
        self.constant *= rhs;
        self
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self * -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Nonneg,
    /// `{ (t, u) : ‖u‖₂ ≤ t }`, head first.
    Soc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cone {
    pub kind: ConeKind,
    pub dim: usize,
}

impl Cone {
    pub fn nonneg(dim: usize) -> Self {
        Cone {
            kind: ConeKind::Nonneg,
            dim,
        }
    }

    pub fn soc(dim: usize) -> Self {
        Cone {
            kind: ConeKind::Soc,
            dim,
        }
    }

    /// Signed distance-like margin: ≥ 0 iff `v` lies in the cone.
    pub fn margin(&self, v: &[f64]) -> f64 {
        match self.kind {
            ConeKind::Nonneg => v.iter().fold(f64::INFINITY, |m, &x| m.min(x)),
            ConeKind::Soc => v[0] - crate::sparse::norm2(&v[1..]),
        }
    }
}

/// A cone membership constraint `(components…) ∈ K` on affine expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeRow {
    pub kind: ConeKind,
    pub components: Vec<Affine>,
}

impl ConeRow {
    /// `expr ≥ 0`
    pub fn nonneg(expr: Affine) -> Self {
        ConeRow {
            kind: ConeKind::Nonneg,
            components: vec![expr],
        }
    }

    /// `‖tail‖ ≤ head`
    pub fn soc(head: Affine, tail: Vec<Affine>) -> Self {
        let mut components = Vec::with_capacity(tail.len() + 1);
        components.push(head);
        components.extend(tail);
        ConeRow {
            kind: ConeKind::Soc,
            components,
        }
    }

    /// `w² ≤ u·v` with `u, v ≥ 0`, written as `‖(2w, u − v)‖ ≤ u + v`.
    pub fn hyperbolic(w: Affine, u: Affine, v: Affine) -> Self {
        ConeRow::soc(u.clone() + v.clone(), vec![w * 2.0, u - v])
    }

    pub fn cone(&self) -> Cone {
        Cone {
            kind: self.kind,
            dim: self.components.len(),
        }
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|a| a.eval(x)).collect()
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.cone().margin(&self.values(x))
    }

    pub fn is_satisfied(&self, x: &[f64]) -> bool {
        self.margin(x) >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    State,
    Rate,
    Influent,
    Aux,
    Epigraph,
}

impl Quantity {
    pub fn label(self) -> &'static str {
        match self {
            Quantity::State => "xi",
            Quantity::Rate => "T",
            Quantity::Influent => "xin",
            Quantity::Aux => "aux",
            Quantity::Epigraph => "epi",
        }
    }
}

/// What a program column means. `step` is 0 for steady-state programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarTag {
    pub quantity: Quantity,
    pub tank: usize,
    pub index: usize,
    pub step: usize,
}

impl fmt::Display for VarTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}@{}",
            self.quantity.label(),
            self.tank,
            self.index,
            self.step
        )
    }
}

/// What a row (equality) or cone block means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowTag {
    Dynamics { step: usize, tank: usize, entry: usize },
    Allocation { step: usize, entry: usize },
    Kinetics { step: usize, tank: usize, reaction: usize },
    StateNonneg,
    RateNonneg,
    InfluentNonneg,
    UpperBound { step: usize, tank: usize, entry: usize },
    Epigraph { step: usize },
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub c: Vec<f64>,
    pub c0: f64,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub g: CscMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
    pub var_tags: Vec<Option<VarTag>>,
    pub eq_tags: Vec<RowTag>,
    pub cone_tags: Vec<RowTag>,
}

impl ConicProgram {
    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    pub fn n_cone_rows(&self) -> usize {
        self.h.len()
    }

    /// First cone row of every cone block.
    pub fn cone_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.cones.len());
        let mut at = 0;
        for cone in &self.cones {
            offsets.push(at);
            at += cone.dim;
        }
        offsets
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        crate::sparse::dot(&self.c, x) + self.c0
    }

    /// `A x − b`
    pub fn eq_residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.a.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    /// `h − G x`, the cone slack.
    pub fn cone_slack(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.h.clone();
        self.g.mul_vec_acc(x, &mut s, -1.0);
        s
    }

    /// Smallest cone margin of `h − G x` over all blocks (≥ 0 when feasible).
    pub fn min_cone_margin(&self, x: &[f64]) -> f64 {
        let s = self.cone_slack(x);
        self.cones
            .iter()
            .zip(self.cone_offsets())
            .map(|(cone, off)| cone.margin(&s[off..off + cone.dim]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let mut errs = crate::ValidationErrors::default();
        if self.c.len() != self.n_vars || self.a.ncols != self.n_vars || self.g.ncols != self.n_vars {
            errs.push("program", "column counts disagree");
        }
        if self.a.nrows != self.b.len() {
            errs.push("program.A", "row count differs from b");
        }
        if self.g.nrows != self.h.len() {
            errs.push("program.G", "row count differs from h");
        }
        let cone_rows: usize = self.cones.iter().map(|c| c.dim).sum();
        if cone_rows != self.h.len() {
            errs.push("program.cones", format!("cones cover {cone_rows} rows, G has {}", self.h.len()));
        }
        for (k, cone) in self.cones.iter().enumerate() {
            if cone.dim == 0 || (cone.kind == ConeKind::Soc && cone.dim < 2) {
                errs.push(format!("program.cones[{k}]"), "invalid cone dimension");
            }
        }
        let finite = self.c.iter().chain(&self.b).chain(&self.h).chain(&self.a.nzval).chain(&self.g.nzval);
        if !finite.into_iter().all(|v| v.is_finite()) || !self.c0.is_finite() {
            errs.push("program", "non-finite data");
        }
        errs.into_result()
    }
}

/// Incrementally assembles a [`ConicProgram`].
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    var_tags: Vec<Option<VarTag>>,
    c: Vec<f64>,
    c0: f64,
    eq_rows: Vec<(Affine, RowTag)>,
    cone_rows: Vec<(ConeRow, RowTag)>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, tag: Option<VarTag>) -> VarId {
        self.var_tags.push(tag);
        self.c.push(0.0);
        VarId(self.var_tags.len() - 1)
    }

    pub fn n_vars(&self) -> usize {
        self.var_tags.len()
    }

    pub fn add_cost(&mut self, v: VarId, coef: f64) {
        self.c[v.0] += coef;
    }

    /// Adds the linear part of `expr` to the objective, constant included.
    pub fn add_cost_expr(&mut self, expr: &Affine, scale: f64) {
        for &(v, c) in &expr.terms {
            self.c[v.0] += scale * c;
        }
        self.c0 += scale * expr.constant;
    }

    /// `expr = 0`
    pub fn add_eq(&mut self, expr: Affine, tag: RowTag) {
        self.eq_rows.push((expr, tag));
    }

    pub fn add_cone(&mut self, row: ConeRow, tag: RowTag) {
        self.cone_rows.push((row, tag));
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn n_cones(&self) -> usize {
        self.cone_rows.len()
    }

    pub fn build(self) -> ConicProgram {
        let n = self.var_tags.len();
        let mut a_trip = Vec::new();
        let mut b = Vec::with_capacity(self.eq_rows.len());
        let mut eq_tags = Vec::with_capacity(self.eq_rows.len());
        for (i, (expr, tag)) in self.eq_rows.iter().enumerate() {
            a_trip.extend(expr.terms.iter().map(|&(v, c)| (i, v.0, c)));
            b.push(-expr.constant);
            eq_tags.push(*tag);
        }
        let mut g_trip = Vec::new();
        let mut h = Vec::new();
        let mut cones = Vec::with_capacity(self.cone_rows.len());
        let mut cone_tags = Vec::with_capacity(self.cone_rows.len());
        for (row, tag) in &self.cone_rows {
            for comp in &row.components {
                let i = h.len();
                g_trip.extend(comp.terms.iter().map(|&(v, c)| (i, v.0, -c)));
                h.push(comp.constant);
            }
            cones.push(row.cone());
            cone_tags.push(*tag);
        }
        ConicProgram {
            n_vars: n,
            c: self.c,
            c0: self.c0,
            a: CscMatrix::from_triplets(b.len(), n, &a_trip),
            b,
            g: CscMatrix::from_triplets(h.len(), n, &g_trip),
            h,
            cones,
            var_tags: self.var_tags,
            eq_tags,
            cone_tags,
        }
    }
}
