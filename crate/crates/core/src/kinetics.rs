//! Growth kinetics: rate evaluation, analytic Jacobians, and cone rows that
//! encode the relaxed kinetics `T ≤ φ(ξ)`.
//!
//! Monod (with exogenous biomass) and Contois rates both have the form
//! `φ = A·B / (A + B)` with `A, B` affine and nonnegative:
//!
//! * Contois: `A = μX`, `B = μS/k_C`
//! * Monod with biomass profile `X̄`: `A = μX̄`, `B = μX̄S/k_M`
//!
//! and `T ≤ AB/(A + B)` is equivalent to `A² ≤ (A − T)(A + B)` with both
//! factors nonnegative, which is a hyperbolic (rotated second-order cone)
//! constraint.

use nalgebra::DMatrix;

use crate::conic::{Affine, ConeRow, VarId};
use crate::error::{Error, Result, ValidationErrors};
use crate::sparse::CscMatrix;

/// Exogenous per-step biomass `X̄(n)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BiomassProfile {
    Constant(f64),
    /// `values[n - 1]` is the biomass at step `n`.
    Series(Vec<f64>),
}

impl BiomassProfile {
    /// Biomass at a 1-based step; step 0 (and steady state) reads step 1,
    /// steps past the end read the last value.
    pub fn at(&self, step: usize) -> f64 {
        match self {
            BiomassProfile::Constant(v) => *v,
            BiomassProfile::Series(vals) => {
                let i = step.max(1) - 1;
                vals[i.min(vals.len() - 1)]
            }
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            BiomassProfile::Constant(v) => std::slice::from_ref(v),
            BiomassProfile::Series(vals) => vals,
        }
    }
}

/// Where a Monod rate takes its biomass from.
#[derive(Debug, Clone, PartialEq)]
pub enum Biomass {
    Profile(BiomassProfile),
    /// Biomass is a state entry. The rate is then only quasiconcave and
    /// cannot be relaxed to a cone; it is still simulated.
    State(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GrowthModel {
    Monod {
        mu: f64,
        k_m: f64,
        substrate: usize,
        biomass: Biomass,
    },
    Contois {
        mu: f64,
        k_c: f64,
        substrate: usize,
        biomass: usize,
    },
    /// `min(φ_a, φ_b)`
    NonInteractive {
        a: Box<GrowthModel>,
        b: Box<GrowthModel>,
    },
    /// `sqrt(φ_a φ_b)`
    GeometricInteractive {
        a: Box<GrowthModel>,
        b: Box<GrowthModel>,
    },
}

/// Gradient of one rate with respect to its tank's state.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGradient {
    pub values: Vec<f64>,
    /// Set at points where the rate is not differentiable and a one-sided
    /// limit was returned instead.
    pub flagged: bool,
}

fn harmonic(a: f64, b: f64) -> f64 {
    let den = a + b;
    if den > 0.0 {
        a * b / den
    } else {
        0.0
    }
}

impl GrowthModel {
    pub fn validate(&self, m: usize, tau: usize, location: &str, errs: &mut ValidationErrors) {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self {
            GrowthModel::Monod {
                mu,
                k_m,
                substrate,
                biomass,
            } => {
                if !positive(*mu) {
                    errs.push(format!("{location}.mu"), "must be positive");
                }
                if !positive(*k_m) {
                    errs.push(format!("{location}.k"), "must be positive");
                }
                if *substrate >= m {
                    errs.push(format!("{location}.substrate"), "state index out of range");
                }
                match biomass {
                    Biomass::Profile(p) => {
                        if p.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                            errs.push(format!("{location}.biomass"), "profile values must be nonnegative");
                        }
                        if let BiomassProfile::Series(v) = p {
                            if v.len() < tau {
                                errs.push(
                                    format!("{location}.biomass"),
                                    format!("profile has {} values, horizon needs {tau}", v.len()),
                                );
                            }
                        }
                    }
                    Biomass::State(i) => {
                        if *i >= m {
                            errs.push(format!("{location}.biomass-state"), "state index out of range");
                        }
                    }
                }
            }
            GrowthModel::Contois {
                mu,
                k_c,
                substrate,
                biomass,
            } => {
                if !positive(*mu) {
                    errs.push(format!("{location}.mu"), "must be positive");
                }
                if !positive(*k_c) {
                    errs.push(format!("{location}.k"), "must be positive");
                }
                if *substrate >= m || *biomass >= m {
                    errs.push(location.to_string(), "state index out of range");
                } else if substrate == biomass {
                    errs.push(location.to_string(), "substrate and biomass must differ");
                }
            }
            GrowthModel::NonInteractive { a, b } | GrowthModel::GeometricInteractive { a, b } => {
                a.validate(m, tau, &format!("{location}.a"), errs);
                b.validate(m, tau, &format!("{location}.b"), errs);
            }
        }
    }

    /// Rate at a tank state (entries assumed nonnegative) and 1-based step.
    pub fn evaluate_rate(&self, state: &[f64], step: usize) -> f64 {
        match self {
            GrowthModel::Monod {
                mu,
                k_m,
                substrate,
                biomass,
            } => {
                let s = state[*substrate].max(0.0);
                let x = match biomass {
                    Biomass::Profile(p) => p.at(step),
                    Biomass::State(i) => state[*i].max(0.0),
                };
                mu * x * s / (k_m + s)
            }
            GrowthModel::Contois {
                mu,
                k_c,
                substrate,
                biomass,
            } => {
                let s = state[*substrate].max(0.0);
                let x = state[*biomass].max(0.0);
                harmonic(mu * x, mu * s / k_c)
            }
            GrowthModel::NonInteractive { a, b } => {
                a.evaluate_rate(state, step).min(b.evaluate_rate(state, step))
            }
            GrowthModel::GeometricInteractive { a, b } => {
                (a.evaluate_rate(state, step) * b.evaluate_rate(state, step)).sqrt()
            }
        }
    }

    pub fn gradient(&self, state: &[f64], step: usize) -> RateGradient {
        let m = state.len();
        let mut values = vec![0.0; m];
        let mut flagged = false;
        match self {
            GrowthModel::Monod {
                mu,
                k_m,
                substrate,
                biomass,
            } => {
                let s = state[*substrate].max(0.0);
                let den = k_m + s;
                match biomass {
                    Biomass::Profile(p) => {
                        values[*substrate] = mu * p.at(step) * k_m / (den * den);
                    }
                    Biomass::State(i) => {
                        let x = state[*i].max(0.0);
                        values[*substrate] += mu * x * k_m / (den * den);
                        values[*i] += mu * s / den;
                    }
                }
            }
            GrowthModel::Contois {
                mu,
                k_c,
                substrate,
                biomass,
            } => {
                let s = state[*substrate].max(0.0);
                let x = state[*biomass].max(0.0);
                let den = k_c * x + s;
                if den > 0.0 {
                    values[*substrate] = mu * k_c * x * x / (den * den);
                    values[*biomass] = mu * s * s / (den * den);
                } else {
                    // limit along the substrate axis (X = 0, S → 0+)
                    values[*biomass] = *mu;
                    flagged = true;
                }
            }
            GrowthModel::NonInteractive { a, b } => {
                let ra = a.evaluate_rate(state, step);
                let rb = b.evaluate_rate(state, step);
                let tie = (ra - rb).abs() <= 1e-12 * (1.0 + ra.abs().max(rb.abs()));
                let g = if ra <= rb { a.gradient(state, step) } else { b.gradient(state, step) };
                values = g.values;
                flagged = g.flagged || tie;
            }
            GrowthModel::GeometricInteractive { a, b } => {
                let ra = a.evaluate_rate(state, step);
                let rb = b.evaluate_rate(state, step);
                let g = (ra * rb).sqrt();
                if g > 0.0 {
                    let ga = a.gradient(state, step);
                    let gb = b.gradient(state, step);
                    for k in 0..m {
                        values[k] = (rb * ga.values[k] + ra * gb.values[k]) / (2.0 * g);
                    }
                    flagged = ga.flagged || gb.flagged;
                } else {
                    flagged = true;
                }
            }
        }
        RateGradient { values, flagged }
    }

    /// Cone rows whose feasible set, over nonnegative state and `T ≥ 0`,
    /// is exactly `T ≤ φ(state)`. `state` holds one affine handle per tank
    /// state entry. Composite models allocate two auxiliary rates through
    /// `aux` (first `T^a`, then `T^b`) before emitting their children's rows.
    pub fn soc_rows(
        &self,
        state: &[Affine],
        t: &Affine,
        step: usize,
        aux: &mut dyn FnMut() -> VarId,
    ) -> Result<Vec<ConeRow>> {
        match self {
            GrowthModel::Monod {
                mu,
                k_m,
                substrate,
                biomass,
            } => {
                let xbar = match biomass {
                    Biomass::Profile(p) => p.at(step),
                    Biomass::State(_) => {
                        return Err(Error::UnsupportedKinetics(
                            "Monod growth with variable biomass has no cone representation; \
                             supply an exogenous biomass profile"
                                .into(),
                        ))
                    }
                };
                let a = Affine::constant(mu * xbar);
                let b = state[*substrate].clone() * (mu * xbar / k_m);
                Ok(vec![harmonic_row(t, a, b)])
            }
            GrowthModel::Contois {
                mu,
                k_c,
                substrate,
                biomass,
            } => {
                let a = state[*biomass].clone() * *mu;
                let b = state[*substrate].clone() * (mu / k_c);
                Ok(vec![harmonic_row(t, a, b)])
            }
            GrowthModel::NonInteractive { a, b } => {
                let ta = Affine::var(aux());
                let tb = Affine::var(aux());
                let mut rows = a.soc_rows(state, &ta, step, aux)?;
                rows.extend(b.soc_rows(state, &tb, step, aux)?);
                rows.push(ConeRow::nonneg(ta - t.clone()));
                rows.push(ConeRow::nonneg(tb - t.clone()));
                Ok(rows)
            }
            GrowthModel::GeometricInteractive { a, b } => {
                let ta = Affine::var(aux());
                let tb = Affine::var(aux());
                let mut rows = a.soc_rows(state, &ta, step, aux)?;
                rows.extend(b.soc_rows(state, &tb, step, aux)?);
                rows.push(ConeRow::hyperbolic(t.clone(), ta, tb));
                Ok(rows)
            }
        }
    }

    /// True for models whose relaxation needs no variable biomass.
    pub fn is_cone_representable(&self) -> bool {
        match self {
            GrowthModel::Monod { biomass, .. } => matches!(biomass, Biomass::Profile(_)),
            GrowthModel::Contois { .. } => true,
            GrowthModel::NonInteractive { a, b } | GrowthModel::GeometricInteractive { a, b } => {
                a.is_cone_representable() && b.is_cone_representable()
            }
        }
    }
}

/// `T ≤ AB/(A + B)` as `A² ≤ (A − T)(A + B)`.
fn harmonic_row(t: &Affine, a: Affine, b: Affine) -> ConeRow {
    ConeRow::hyperbolic(a.clone(), a.clone() - t.clone(), a + b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TankKinetics {
    pub reactions: Vec<GrowthModel>,
    /// `m × r` stoichiometric matrix.
    pub kappa: DMatrix<f64>,
}

/// Kinetics of every tank; all tanks share the state dimension `m` and the
/// reaction count `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticsSpec {
    pub m: usize,
    pub r: usize,
    pub tanks: Vec<TankKinetics>,
}

/// Block-diagonal Jacobian of `φ`, one `r × m` block per tank.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub blocks: Vec<DMatrix<f64>>,
    /// `(tank, reaction)` pairs evaluated at nondifferentiable points.
    pub flagged: Vec<(usize, usize)>,
}

impl Jacobian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.blocks.len();
        let (r, m) = self.blocks.first().map_or((0, 0), |b| b.shape());
        let mut out = DMatrix::zeros(r * s, m * s);
        for (i, blk) in self.blocks.iter().enumerate() {
            out.view_mut((i * r, i * m), (r, m)).copy_from(blk);
        }
        out
    }

    pub fn to_sparse(&self) -> CscMatrix {
        CscMatrix::from_dense(&self.to_dense())
    }
}

impl KineticsSpec {
    /// A spec without reactions (`r = 0`).
    pub fn none(s: usize, m: usize) -> Self {
        KineticsSpec {
            m,
            r: 0,
            tanks: (0..s)
                .map(|_| TankKinetics {
                    reactions: Vec::new(),
                    kappa: DMatrix::zeros(m, 0),
                })
                .collect(),
        }
    }

    /// Same reactions and stoichiometry in every tank.
    pub fn uniform(s: usize, reactions: Vec<GrowthModel>, kappa: DMatrix<f64>) -> Self {
        KineticsSpec {
            m: kappa.nrows(),
            r: kappa.ncols(),
            tanks: (0..s)
                .map(|_| TankKinetics {
                    reactions: reactions.clone(),
                    kappa: kappa.clone(),
                })
                .collect(),
        }
    }

    pub fn n_tanks(&self) -> usize {
        self.tanks.len()
    }

    pub fn validate(&self, tau: usize) -> ValidationErrors {
        let mut errs = ValidationErrors::default();
        for (i, tank) in self.tanks.iter().enumerate() {
            let loc = format!("kinetics.tank[{i}]");
            if tank.reactions.len() != self.r {
                errs.push(&loc, format!("expected {} reactions, found {}", self.r, tank.reactions.len()));
            }
            if tank.kappa.shape() != (self.m, self.r) {
                errs.push(
                    format!("{loc}.kappa"),
                    format!("expected {}x{} stoichiometry", self.m, self.r),
                );
            }
            if tank.kappa.iter().any(|v| !v.is_finite()) {
                errs.push(format!("{loc}.kappa"), "entries must be finite");
            }
            for (j, model) in tank.reactions.iter().enumerate() {
                model.validate(self.m, tau, &format!("{loc}.reaction[{j}]"), &mut errs);
            }
        }
        errs
    }

    /// `φ(ξ)` stacked by tank.
    pub fn rates(&self, state: &[f64], step: usize) -> Vec<f64> {
        let m = self.m;
        self.tanks
            .iter()
            .enumerate()
            .flat_map(|(i, tank)| {
                let xi = &state[i * m..(i + 1) * m];
                tank.reactions.iter().map(move |rx| rx.evaluate_rate(xi, step))
            })
            .collect()
    }

    pub fn jacobian(&self, state: &[f64], step: usize) -> Jacobian {
        let m = self.m;
        let mut flagged = Vec::new();
        let blocks = self
            .tanks
            .iter()
            .enumerate()
            .map(|(i, tank)| {
                let xi = &state[i * m..(i + 1) * m];
                let mut blk = DMatrix::zeros(self.r, m);
                for (j, rx) in tank.reactions.iter().enumerate() {
                    let g = rx.gradient(xi, step);
                    if g.flagged {
                        flagged.push((i, j));
                    }
                    for (k, v) in g.values.into_iter().enumerate() {
                        blk[(j, k)] = v;
                    }
                }
                blk
            })
            .collect();
        Jacobian { blocks, flagged }
    }

    /// Block-diagonal stoichiometry `K` (`ms × rs`).
    pub fn k_dense(&self) -> DMatrix<f64> {
        let (m, r, s) = (self.m, self.r, self.tanks.len());
        let mut k = DMatrix::zeros(m * s, r * s);
        for (i, tank) in self.tanks.iter().enumerate() {
            k.view_mut((i * m, i * r), (m, r)).copy_from(&tank.kappa);
        }
        k
    }

    pub fn k_sparse(&self) -> CscMatrix {
        CscMatrix::from_dense(&self.k_dense())
    }
}
