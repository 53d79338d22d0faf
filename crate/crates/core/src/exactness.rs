//! Exactness of the relaxation: a-posteriori kinetics gaps and the
//! dual-multiplier certificates.
//!
//! With `V̂` the lifted volumes, `N̂(n)` the lifted network matrix, `K` the
//! block stoichiometry and `𝒥(n)` the kinetics Jacobian at the solved state,
//!
//! ```text
//! Ψ(n) = V̂⁻¹N̂(n)ᵀ + V̂⁻¹𝒥(n)ᵀKᵀV̂
//! Γ(n) = (I − ΔΨ(n))⁻¹
//! λ(τ) = ΔΓ(τ)V̂⁻¹g(τ),   λ(n) = ΔΓ(n)V̂⁻¹g(n) + Γ(n)λ(n + 1)
//! Ω(n) = −∇F_φ(n) − KᵀV̂λ(n)
//! ```
//!
//! where `g(n) = ∇F_ξ(n) + 𝒥(n)ᵀ∇F_φ(n)`. `Ω(n)` equals the kinetics
//! multiplier `ρ(n)` when the only side condition is a fixed initial state
//! and the influent is fixed, so `Ω(n) > 0` forces `T(n) = φ(ξ(n))`. In
//! steady state the multiplier is available in closed form:
//!
//! ```text
//! ρ = (I + KᵀV̂(N̂ᵀ)⁻¹𝒥ᵀ)⁻¹ (KᵀV̂(N̂ᵀ)⁻¹∇F_ξ − ∇F_φ)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::Boundary;
use crate::kinetics::KineticsSpec;
use crate::network::{is_outflow_connected, kron_lift, NetworkSchedule};
use crate::program::{objective_gradients, SolvedTrajectory};
use crate::scenario::{Mode, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct ExactnessOptions {
    /// Gap tolerance relative to `1 + ‖φ‖∞` per step.
    pub residual_tol: f64,
    /// A certificate is positive when its smallest entry exceeds this.
    pub margin: f64,
    /// Random states sampled for the steady-state matrix condition.
    pub samples: usize,
    /// Sampled states are uniform on `[0, sample-bound]`.
    pub sample_bound: f64,
    pub seed: u64,
}

impl Default for ExactnessOptions {
    fn default() -> Self {
        ExactnessOptions {
            residual_tol: 1e-6,
            margin: 1e-9,
            samples: 1000,
            sample_bound: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "verdict", content = "reason")]
pub enum Verdict {
    /// Every entry exceeds the margin.
    Positive,
    /// Some entry is below `−margin`.
    NotPositive,
    /// No entry is below `−margin` but some are within the margin of zero.
    Inconclusive,
    /// The certificate could not be evaluated.
    Indeterminate(String),
}

impl Verdict {
    fn from_min(min: f64, margin: f64) -> Self {
        if min > margin {
            Verdict::Positive
        } else if min < -margin {
            Verdict::NotPositive
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn is_positive(&self) -> bool {
        matches!(self, Verdict::Positive)
    }
}

// ---------------------------------------------------------------------------
// residual exactness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepGap {
    pub step: usize,
    /// `φ(ξ(n)) − T(n)` per reaction.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub min_gap: f64,
    /// `1 + ‖φ(ξ(n))‖∞`
    pub scale: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub tol: f64,
    pub steps: Vec<StepGap>,
    pub exact_steps: usize,
    pub all_exact: bool,
    /// Smallest gap; negative values mean `T` exceeds `φ` (solver error).
    pub min_gap: f64,
}

/// Kinetics gaps of a trajectory; `xi[k]`, `rates[k]` belong to step
/// `steps[k]` (the step selects the biomass profile value).
pub fn residual_exactness(
    spec: &KineticsSpec,
    xi: &[Vec<f64>],
    rates: &[Vec<f64>],
    steps: &[usize],
    tol: f64,
) -> ResidualReport {
    let mut out = Vec::with_capacity(xi.len());
    for ((x, t), &n) in xi.iter().zip(rates).zip(steps) {
        let phi = spec.rates(x, n);
        let gaps: Vec<f64> = phi.iter().zip(t).map(|(p, t)| p - t).collect();
        let max_gap = gaps.iter().copied().fold(0.0f64, f64::max);
        let min_gap = gaps.iter().copied().fold(0.0f64, f64::min);
        let scale = 1.0 + crate::sparse::inf_norm(&phi);
        out.push(StepGap {
            step: n,
            exact: max_gap <= tol * scale,
            gaps,
            max_gap,
            min_gap,
            scale,
        });
    }
    let exact_steps = out.iter().filter(|s| s.exact).count();
    ResidualReport {
        tol,
        all_exact: exact_steps == out.len(),
        exact_steps,
        min_gap: out.iter().map(|s| s.min_gap).fold(0.0, f64::min),
        steps: out,
    }
}

// ---------------------------------------------------------------------------
// Γ, Ψ, Ω

/// `Ψ = V̂⁻¹(N̂ᵀ + 𝒥ᵀKᵀV̂)`
pub fn psi(v: &DVector<f64>, n_hat: &DMatrix<f64>, k: &DMatrix<f64>, jac: &DMatrix<f64>) -> DMatrix<f64> {
    let vm = DMatrix::from_diagonal(v);
    let mut b = n_hat.transpose() + jac.transpose() * k.transpose() * &vm;
    for (i, vi) in v.iter().enumerate() {
        b.row_mut(i).scale_mut(1.0 / vi);
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEval {
    /// `(I − ΔΨ)⁻¹`
    pub gamma: DMatrix<f64>,
    /// `(1/Δ)(V̂/Δ − N̂ᵀ − 𝒥ᵀKᵀV̂)⁻¹V̂`
    pub unreduced: DMatrix<f64>,
    /// `I + ΔΨ(I − ΔΨ)⁻¹`
    pub push_through: DMatrix<f64>,
    /// Largest relative disagreement between the three forms.
    pub agreement: f64,
    /// 2-norm condition number of `I − ΔΨ`.
    pub cond: f64,
}

fn cond2(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-300)
}

/// All three forms of `Γ`; `None` when `I − ΔΨ` is numerically singular.
pub fn gamma(delta: f64, v: &DVector<f64>, n_hat: &DMatrix<f64>, k: &DMatrix<f64>, jac: &DMatrix<f64>) -> Option<GammaEval> {
    let ms = v.len();
    let p = psi(v, n_hat, k, jac);
    let id = DMatrix::<f64>::identity(ms, ms);
    let reduced = &id - &p * delta;
    let cond = cond2(&reduced);
    if !(cond.is_finite() && cond < 1e14) {
        return None;
    }
    let g = reduced.clone().lu().try_inverse()?;
    let vm = DMatrix::from_diagonal(v);
    let inner = &vm / delta - n_hat.transpose() - jac.transpose() * k.transpose() * &vm;
    let unreduced = inner.lu().try_inverse()? * &vm / delta;
    let push_through = &id + &p * delta * &g;
    let agreement = rel_diff(&g, &unreduced).max(rel_diff(&g, &push_through));
    Some(GammaEval {
        gamma: g,
        unreduced,
        push_through,
        agreement,
        cond,
    })
}

/// Eigenvalue range of the symmetric part of a matrix.
pub fn symmetric_range(a: &DMatrix<f64>) -> (f64, f64) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

/// `Ω(n)` from the displayed sum
/// `−∇F_φ(n) − ΔKᵀV̂ Σ_{k=n}^{τ} (Π_{l=n}^{k} Γ(l)) V̂⁻¹ g(k)`,
/// with each product accumulated left to right in increasing `l`.
pub fn omega_sum(
    delta: f64,
    v: &DVector<f64>,
    k: &DMatrix<f64>,
    gammas: &[DMatrix<f64>],
    g: &[DVector<f64>],
    f_phi: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let tau = gammas.len();
    let ms = v.len();
    let vinv_g: Vec<DVector<f64>> = g.iter().map(|gk| gk.component_div(v)).collect();
    let ktv = k.transpose() * DMatrix::from_diagonal(v);
    (0..tau)
        .map(|n| {
            let mut prod = DMatrix::<f64>::identity(ms, ms);
            let mut acc = DVector::<f64>::zeros(ms);
            for kk in n..tau {
                prod = &prod * &gammas[kk];
                acc += &prod * &vinv_g[kk];
            }
            -&f_phi[n] - &ktv * acc * delta
        })
        .collect()
}

/// `λ(n)` by the backward recursion, and `Ω(n) = −∇F_φ(n) − KᵀV̂λ(n)`.
pub fn omega_recursion(
    delta: f64,
    v: &DVector<f64>,
    k: &DMatrix<f64>,
    gammas: &[DMatrix<f64>],
    g: &[DVector<f64>],
    f_phi: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let tau = gammas.len();
    let ms = v.len();
    let ktv = k.transpose() * DMatrix::from_diagonal(v);
    let mut lambda = vec![DVector::zeros(ms); tau];
    let mut next = DVector::<f64>::zeros(ms);
    for n in (0..tau).rev() {
        let l = &gammas[n] * (g[n].component_div(v) * delta + &next);
        next = l.clone();
        lambda[n] = l;
    }
    let omega = (0..tau).map(|n| -&f_phi[n] - &ktv * &lambda[n]).collect();
    (lambda, omega)
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaStep {
    pub step: usize,
    pub cond: f64,
    pub agreement: f64,
    /// Eigenvalue range of the symmetric part of `Γ(n)`.
    pub sym_min: f64,
    pub sym_max: f64,
    /// `‖Γ(n) − I‖∞`
    pub distance_to_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiReport {
    /// Eigenvalue range of the symmetric parts of `Ψ(n)` over all steps.
    pub sym_min: f64,
    pub sym_max: f64,
    /// Largest spectral norm of `Ψ(n)`; with a negative semidefinite
    /// symmetric part this bounds the symmetric-part eigenvalues of `Γ(n)`
    /// to `[1 − Δψ̄, 1]`.
    pub psi_bar: f64,
    /// Set when some symmetric part has an eigenvalue above the tolerance.
    pub not_negative_semidefinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaReport {
    pub omega: Vec<Vec<f64>>,
    pub min_entry: Vec<f64>,
    /// Largest relative difference between the sum and recursion forms.
    pub form_agreement: f64,
    /// `max_n ‖ρ(n) − Ω(n)‖∞ / (1 + ‖ρ(n)‖∞)` against the solver duals.
    pub dual_agreement: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryVerdict {
    pub applies: bool,
    /// Smallest entry of the quantity that must be strictly positive.
    pub margin: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryReport {
    /// `f_φ = 0` and `Kᵀf_ξ < 0`.
    pub state_weighted: CorollaryVerdict,
    /// `f_ξ = 0` and `−f_φ > 0`.
    pub rate_weighted: CorollaryVerdict,
    /// Advisory step bound `0.1 / (τ ψ̄)` under which the first-order
    /// approximations behind both corollaries are accurate to about 10%.
    pub suggested_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyReport {
    pub rho: Vec<f64>,
    pub min_entry: f64,
    pub verdict: Verdict,
    pub cond_network: f64,
    pub cond_certificate: f64,
    /// `max |ρ_formula − ρ_solver| / (1 + ‖ρ_solver‖∞)`
    pub dual_agreement: f64,
    /// Split-Jacobian evaluation for gradostat-structured scenarios and its
    /// relative difference from the general formula.
    pub gradostat_split: Option<(Vec<f64>, f64)>,
    pub sampled: SampledCondition,
}

/// The two conditions of the structural steady-state test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledCondition {
    pub samples: usize,
    pub sample_bound: f64,
    /// Smallest entry of `(I + KᵀV̂(N̂ᵀ)⁻¹𝒥(ξ)ᵀ)⁻¹` over the solved state
    /// and all samples.
    pub inverse_min: f64,
    /// Smallest entry of `KᵀV̂(N̂ᵀ)⁻¹f_ξ − f_φ`.
    pub gradient_min: f64,
    pub inverse_strict: bool,
    pub gradient_strict: bool,
    pub applies: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub mode: Mode,
    pub residual: ResidualReport,
    pub theorem: Option<OmegaReport>,
    pub gamma: Vec<GammaStep>,
    pub psi: Option<PsiReport>,
    pub corollaries: Option<CorollaryReport>,
    pub steady: Option<SteadyReport>,
    /// Conditions outside the certificates' assumptions; when nonempty the
    /// certificate verdicts are diagnostics only.
    pub advisory: Vec<String>,
    /// A certificate verdict is positive (and not advisory).
    pub certified: bool,
}

/// The parts of a solved trajectory the certificates read. Row `k` belongs
/// to step `k + 1`; `rho` may be empty when no solver duals are available.
#[derive(Debug, Clone, Copy)]
pub struct Operating<'a> {
    pub xi: &'a [Vec<f64>],
    pub rates: &'a [Vec<f64>],
    pub rho: &'a [Vec<f64>],
}

impl<'a> From<&'a SolvedTrajectory> for Operating<'a> {
    fn from(t: &'a SolvedTrajectory) -> Self {
        Operating {
            xi: &t.xi,
            rates: &t.rates,
            rho: &t.rho,
        }
    }
}

/// `max_n ‖a(n) − b(n)‖∞ / (1 + ‖b(n)‖∞)`, NaN without solver duals.
fn dual_gap<'a>(a: impl Iterator<Item = &'a [f64]>, rho: &[Vec<f64>]) -> f64 {
    if rho.is_empty() {
        return f64::NAN;
    }
    a.zip(rho)
        .map(|(o, r)| {
            let d = o.iter().zip(r).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            d / (1.0 + crate::sparse::inf_norm(r))
        })
        .fold(0.0, f64::max)
}

/// Dense per-step data shared by the certificates.
struct Lifted {
    v: DVector<f64>,
    k: DMatrix<f64>,
}

fn lifted(network: &NetworkSchedule, spec: &KineticsSpec) -> Lifted {
    Lifted {
        v: DVector::from_vec(network.lifted_volumes(spec.m)),
        k: spec.k_dense(),
    }
}

fn n_hat(network: &NetworkSchedule, m: usize, step: usize) -> DMatrix<f64> {
    kron_lift(&network.matrices_at(step).n, m).to_dense()
}

/// Solution-independent corollary verdicts for a linear objective.
pub fn corollary_checks(sc: &Scenario, psi_bar: Option<f64>) -> Option<CorollaryReport> {
    if !sc.objective.is_linear() {
        return None;
    }
    let (m, r) = (sc.kinetics.m, sc.kinetics.r);
    let k = sc.kinetics.k_dense();
    let steps = sc.steps();
    let mut fx_zero = true;
    let mut fp_zero = true;
    let mut ktf_max = f64::NEG_INFINITY;
    let mut neg_fp_min = f64::INFINITY;
    for n in 1..=steps {
        let (fx, fp) = sc.objective.linear_terms(&sc.network, m, r, n);
        fx_zero &= fx.iter().all(|v| *v == 0.0);
        fp_zero &= fp.iter().all(|v| *v == 0.0);
        let ktf = k.transpose() * DVector::from_vec(fx);
        ktf_max = ktf_max.max(ktf.max());
        neg_fp_min = neg_fp_min.min(fp.iter().map(|v| -v).fold(f64::INFINITY, f64::min));
    }
    let rs = sc.kinetics.r * sc.n_tanks();
    if rs == 0 {
        ktf_max = 0.0;
        neg_fp_min = 0.0;
    }
    let state_weighted = if !fp_zero {
        CorollaryVerdict {
            applies: false,
            margin: -ktf_max,
            reason: "the objective weights the rates (f_φ ≠ 0)".into(),
        }
    } else if ktf_max < 0.0 {
        CorollaryVerdict {
            applies: true,
            margin: -ktf_max,
            reason: "f_φ = 0 and every entry of Kᵀf_ξ is negative".into(),
        }
    } else {
        CorollaryVerdict {
            applies: false,
            margin: -ktf_max,
            reason: "some entry of Kᵀf_ξ is nonnegative".into(),
        }
    };
    let rate_weighted = if !fx_zero {
        CorollaryVerdict {
            applies: false,
            margin: neg_fp_min,
            reason: "the objective weights the states (f_ξ ≠ 0)".into(),
        }
    } else if neg_fp_min > 0.0 {
        CorollaryVerdict {
            applies: true,
            margin: neg_fp_min,
            reason: "f_ξ = 0 and every entry of −f_φ is positive".into(),
        }
    } else {
        CorollaryVerdict {
            applies: false,
            margin: neg_fp_min,
            reason: "some entry of −f_φ is nonpositive".into(),
        }
    };
    let suggested_delta = psi_bar.filter(|p| *p > 0.0).map(|p| 0.1 / (steps as f64 * p));
    Some(CorollaryReport {
        state_weighted,
        rate_weighted,
        suggested_delta,
    })
}

/// `Ψ` spectra over the steps of a trajectory.
pub fn psi_spectrum(sc: &Scenario, xi: &[Vec<f64>], tol: f64) -> PsiReport {
    let lf = lifted(&sc.network, &sc.kinetics);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut bar = 0.0f64;
    for (idx, x) in xi.iter().enumerate() {
        let n = idx + 1;
        let jac = sc.kinetics.jacobian(x, n).to_dense();
        let p = psi(&lf.v, &n_hat(&sc.network, sc.kinetics.m, n), &lf.k, &jac);
        let (a, b) = symmetric_range(&p);
        lo = lo.min(a);
        hi = hi.max(b);
        bar = bar.max(p.clone().singular_values().max());
    }
    PsiReport {
        sym_min: lo,
        sym_max: hi,
        psi_bar: bar,
        not_negative_semidefinite: hi > tol,
    }
}

/// The steady-state certificate at an operating point.
pub fn steady_state_certificate(sc: &Scenario, op: Operating<'_>) -> SteadyReport {
    let opts = &sc.exactness;
    let (s, m, r) = (sc.n_tanks(), sc.kinetics.m, sc.kinetics.r);
    let xi = &op.xi[0];
    let (gx, gp) = objective_gradients(&sc.objective, &sc.network, m, r, std::slice::from_ref(xi));
    let fx = DVector::from_vec(gx[0].clone());
    let fp = DVector::from_vec(gp[0].clone());
    let lf = lifted(&sc.network, &sc.kinetics);
    let nh = n_hat(&sc.network, m, 1);
    let nt = nh.transpose();
    let cond_network = cond2(&nt);
    let indeterminate = |why: String, cond_network: f64| SteadyReport {
        rho: Vec::new(),
        min_entry: f64::NAN,
        verdict: Verdict::Indeterminate(why),
        cond_network,
        cond_certificate: f64::NAN,
        dual_agreement: f64::NAN,
        gradostat_split: None,
        sampled: SampledCondition {
            samples: 0,
            sample_bound: opts.sample_bound,
            inverse_min: f64::NAN,
            gradient_min: f64::NAN,
            inverse_strict: false,
            gradient_strict: false,
            applies: false,
        },
    };
    if !is_outflow_connected(sc.network.at(1)) {
        return indeterminate("the network is not outflow connected".into(), cond_network);
    }
    let Some(nt_inv) = (cond_network < 1e14).then(|| nt.clone().lu().try_inverse()).flatten() else {
        return indeterminate(format!("N̂ᵀ is singular (condition number {cond_network:e})"), cond_network);
    };
    let ktv_ninv = lf.k.transpose() * DMatrix::from_diagonal(&lf.v) * &nt_inv; // rs × ms
    let rhs = &ktv_ninv * &fx - &fp;
    let cert_matrix = |x: &[f64]| {
        let jac = sc.kinetics.jacobian(x, 1).to_dense();
        DMatrix::<f64>::identity(s * r, s * r) + &ktv_ninv * jac.transpose()
    };
    let cmat = cert_matrix(xi);
    let cond_certificate = cond2(&cmat);
    let Some(cinv) = (cond_certificate < 1e14).then(|| cmat.clone().lu().try_inverse()).flatten() else {
        return indeterminate(
            format!("the certificate matrix is singular (condition number {cond_certificate:e})"),
            cond_network,
        );
    };
    let rho = &cinv * &rhs;
    let min_entry = if rho.is_empty() { 0.0 } else { rho.min() };
    let verdict = if rho.is_empty() {
        Verdict::Inconclusive
    } else {
        Verdict::from_min(min_entry, opts.margin)
    };
    let dual_agreement = dual_gap(std::iter::once(rho.as_slice()), op.rho);

    let gradostat_split = gradostat_split(sc, xi, &rhs).map(|split| {
        let diff = (&split - &rho).amax() / rho.amax().max(1e-300);
        (split.iter().copied().collect(), diff)
    });

    // structural conditions, sampled
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut inverse_min = if cinv.is_empty() { 0.0 } else { cinv.min() };
    let mut inverse_strict = inverse_min > 0.0;
    let mut evaluated = 1;
    for _ in 0..opts.samples {
        let x: Vec<f64> = (0..s * m).map(|_| rng.random_range(0.0..=opts.sample_bound)).collect();
        match cert_matrix(&x).lu().try_inverse() {
            Some(inv) if !inv.is_empty() => {
                let mn = inv.min();
                inverse_min = inverse_min.min(mn);
                inverse_strict &= mn > 0.0;
                evaluated += 1;
            }
            Some(_) => evaluated += 1,
            None => {
                inverse_min = f64::NEG_INFINITY;
                inverse_strict = false;
            }
        }
    }
    let (gradient_min, gradient_strict) = if sc.objective.is_linear() {
        let gm = if rhs.is_empty() { 0.0 } else { rhs.min() };
        (gm, gm > 0.0)
    } else {
        (f64::NAN, false)
    };
    let applies = sc.objective.is_linear()
        && inverse_min >= 0.0
        && gradient_min >= 0.0
        && (inverse_strict || gradient_strict);
    SteadyReport {
        rho: rho.iter().copied().collect(),
        min_entry,
        verdict,
        cond_network,
        cond_certificate,
        dual_agreement,
        gradostat_split,
        sampled: SampledCondition {
            samples: evaluated,
            sample_bound: opts.sample_bound,
            inverse_min,
            gradient_min,
            inverse_strict,
            gradient_strict,
            applies,
        },
    }
}

/// For one substrate `S` and one biomass `X` per tank with stoichiometry
/// `[−1/y, 1]`, evaluates `(I_s + V(Nᵀ)⁻¹(−𝒥_Sᵀ/y + 𝒥_Xᵀ))⁻¹ rhs` on the
/// unlifted `s × s` matrices. `None` when the scenario is not shaped so.
pub fn gradostat_split(sc: &Scenario, xi: &[f64], rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let (s, m, r) = (sc.n_tanks(), sc.kinetics.m, sc.kinetics.r);
    if m != 2 || r != 1 {
        return None;
    }
    let inv_y = -sc.kinetics.tanks[0].kappa[(0, 0)];
    for t in &sc.kinetics.tanks {
        if t.kappa[(0, 0)] != -inv_y || t.kappa[(1, 0)] != 1.0 {
            return None;
        }
    }
    let jac = sc.kinetics.jacobian(xi, 1);
    let mut js = DMatrix::zeros(s, s);
    let mut jx = DMatrix::zeros(s, s);
    for (i, blk) in jac.blocks.iter().enumerate() {
        js[(i, i)] = blk[(0, 0)];
        jx[(i, i)] = blk[(0, 1)];
    }
    let mats = sc.network.matrices_at(1);
    let v = DMatrix::from_diagonal(&DVector::from_column_slice(sc.network.volumes()));
    let nt_inv = mats.n.transpose().lu().try_inverse()?;
    let mat = DMatrix::<f64>::identity(s, s) + v * nt_inv * (js.transpose() * (-inv_y) + jx.transpose());
    Some(mat.lu().try_inverse()? * rhs)
}

/// Evaluates every applicable certificate for a solved scenario.
pub fn certify(sc: &Scenario, op: Operating<'_>) -> ExactnessReport {
    let opts = &sc.exactness;
    let (m, r) = (sc.kinetics.m, sc.kinetics.r);
    let steps: Vec<usize> = match sc.mode {
        Mode::Transient => (1..=op.xi.len()).collect(),
        Mode::SteadyState => vec![1],
    };
    let residual = residual_exactness(&sc.kinetics, op.xi, op.rates, &steps, opts.residual_tol);

    let mut advisory = Vec::new();
    if sc.mode == Mode::Transient && sc.boundary == Boundary::Periodic {
        advisory.push("periodic boundary: the transient certificate assumes a fixed initial state".into());
    }
    if !sc.constraints.allocations.is_empty() {
        advisory.push("allocated influent: the certificates assume fixed influent and no extra equality rows".into());
    }
    let mut active = 0;
    for ub in &sc.constraints.upper_bounds {
        let tanks: Vec<usize> = ub.tanks.clone().unwrap_or_else(|| (0..sc.n_tanks()).collect());
        for x in op.xi {
            for &i in &tanks {
                if ub.value - x[i * m + ub.entry] <= 1e-6 * (1.0 + ub.value.abs()) {
                    active += 1;
                }
            }
        }
    }
    if active > 0 {
        advisory.push(format!("{active} state upper bounds are active; their multipliers are not in the certificate"));
    }
    let flagged: usize = op
        .xi
        .iter()
        .zip(&steps)
        .map(|(x, &n)| sc.kinetics.jacobian(x, n).flagged.len())
        .sum();
    if flagged > 0 {
        advisory.push(format!(
            "{flagged} kinetics Jacobian entries were evaluated at nondifferentiable points"
        ));
    }

    let mut report = ExactnessReport {
        mode: sc.mode,
        residual,
        theorem: None,
        gamma: Vec::new(),
        psi: None,
        corollaries: None,
        steady: None,
        advisory,
        certified: false,
    };

    match sc.mode {
        Mode::Transient => {
            let psi_rep = psi_spectrum(sc, op.xi, 1e-9);
            if psi_rep.not_negative_semidefinite {
                report.advisory.push(format!(
                    "the symmetric part of Ψ has eigenvalues up to {:e}; the Γ eigenvalue range is not guaranteed",
                    psi_rep.sym_max
                ));
            }
            report.corollaries = corollary_checks(sc, Some(psi_rep.psi_bar));
            let lf = lifted(&sc.network, &sc.kinetics);
            let delta = sc.grid.delta;
            let mut gammas = Vec::with_capacity(op.xi.len());
            let mut failed = None;
            for (idx, x) in op.xi.iter().enumerate() {
                let n = idx + 1;
                let jac = sc.kinetics.jacobian(x, n).to_dense();
                match gamma(delta, &lf.v, &n_hat(&sc.network, m, n), &lf.k, &jac) {
                    Some(ge) => {
                        let (lo, hi) = symmetric_range(&ge.gamma);
                        let id = DMatrix::<f64>::identity(ge.gamma.nrows(), ge.gamma.ncols());
                        report.gamma.push(GammaStep {
                            step: n,
                            cond: ge.cond,
                            agreement: ge.agreement,
                            sym_min: lo,
                            sym_max: hi,
                            distance_to_identity: (&ge.gamma - id).amax(),
                        });
                        gammas.push(ge.gamma);
                    }
                    None => {
                        failed.get_or_insert(n);
                        gammas.push(DMatrix::zeros(lf.v.len(), lf.v.len()));
                    }
                }
            }
            report.psi = Some(psi_rep);
            let verdict_theorem = if let Some(n) = failed {
                OmegaReport {
                    omega: Vec::new(),
                    min_entry: Vec::new(),
                    form_agreement: f64::NAN,
                    dual_agreement: f64::NAN,
                    verdict: Verdict::Indeterminate(format!("Γ({n}) is singular")),
                }
            } else {
                let (gx, gp) = objective_gradients(&sc.objective, &sc.network, m, r, op.xi);
                let g: Vec<DVector<f64>> = op
                    .xi
                    .iter()
                    .enumerate()
                    .map(|(idx, x)| {
                        let jac = sc.kinetics.jacobian(x, idx + 1).to_dense();
                        DVector::from_vec(gx[idx].clone()) + jac.transpose() * DVector::from_vec(gp[idx].clone())
                    })
                    .collect();
                let fp: Vec<DVector<f64>> = gp.into_iter().map(DVector::from_vec).collect();
                let sum = omega_sum(delta, &lf.v, &lf.k, &gammas, &g, &fp);
                let (_, rec) = omega_recursion(delta, &lf.v, &lf.k, &gammas, &g, &fp);
                let form_agreement = sum
                    .iter()
                    .zip(&rec)
                    .map(|(a, b)| (a - b).amax() / (1.0 + a.amax()))
                    .fold(0.0, f64::max);
                let dual_agreement = dual_gap(sum.iter().map(|o| o.as_slice()), op.rho);
                let min_entry: Vec<f64> = sum
                    .iter()
                    .map(|o| if o.is_empty() { 0.0 } else { o.min() })
                    .collect();
                let overall = min_entry.iter().copied().fold(f64::INFINITY, f64::min);
                let verdict = if sum.first().is_none_or(|o| o.is_empty()) {
                    Verdict::Inconclusive
                } else {
                    Verdict::from_min(overall, opts.margin)
                };
                OmegaReport {
                    omega: sum.iter().map(|o| o.iter().copied().collect()).collect(),
                    min_entry,
                    form_agreement,
                    dual_agreement,
                    verdict,
                }
            };
            report.certified = verdict_theorem.verdict.is_positive() && report.advisory.is_empty();
            report.theorem = Some(verdict_theorem);
        }
        Mode::SteadyState => {
            report.corollaries = corollary_checks(sc, None);
            let st = steady_state_certificate(sc, op);
            report.certified = (st.verdict.is_positive() || st.sampled.applies) && report.advisory.is_empty();
            report.steady = Some(st);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn mat(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_gamma() {
        // V = 1, N = −1, J = 0, Δ = 0.1: Γ = 1/1.1
        let g = gamma(0.1, &scalar(1.0), &mat(-1.0), &DMatrix::zeros(1, 0), &DMatrix::zeros(0, 1)).unwrap();
        assert!((g.gamma[(0, 0)] - 1.0 / 1.1).abs() < 1e-15);
        assert!(g.agreement < 1e-12);
    }

    #[test]
    fn gamma_tends_to_identity() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let n = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 1.0, -1.5]);
        let k = DMatrix::from_row_slice(2, 1, &[-1.0, 0.5]);
        let j = DMatrix::from_row_slice(1, 2, &[0.7, 0.1]);
        let g = gamma(1e-8, &v, &n, &k, &j).unwrap();
        assert!((g.gamma - DMatrix::<f64>::identity(2, 2)).amax() <= 1e-6);
        let d1 = (gamma(0.02, &v, &n, &k, &j).unwrap().gamma - DMatrix::<f64>::identity(2, 2)).amax();
        let d2 = (gamma(0.01, &v, &n, &k, &j).unwrap().gamma - DMatrix::<f64>::identity(2, 2)).amax();
        let ratio = d1 / d2;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn scalar_omega() {
        // τ = 1, K = −1, f_ξ = 1, f_φ = 0, V = 1, Δ = 0.1, J = 0
        let g = vec![mat(1.0 / 1.1)];
        let om = omega_sum(0.1, &scalar(1.0), &mat(-1.0), &g, &[scalar(1.0)], &[scalar(0.0)]);
        assert!((om[0][0] - 0.1 / 1.1).abs() < 1e-15);
        let (_, rec) = omega_recursion(0.1, &scalar(1.0), &mat(-1.0), &g, &[scalar(1.0)], &[scalar(0.0)]);
        assert!((rec[0][0] - om[0][0]).abs() < 1e-15);
    }

    #[test]
    fn omega_tends_to_minus_rate_weight() {
        // f_ξ = 0: all Δ-terms vanish and Ω(n) → −f_φ
        let tau = 5;
        let v = scalar(2.0);
        let gammas: Vec<DMatrix<f64>> = (0..tau).map(|_| mat(1.0 / (1.0 + 1e-9))).collect();
        let fp: Vec<DVector<f64>> = (0..tau).map(|_| scalar(-0.7)).collect();
        let g: Vec<DVector<f64>> = (0..tau).map(|_| scalar(-0.7 * 0.3)).collect();
        let om = omega_sum(1e-9, &v, &mat(-1.0), &gammas, &g, &fp);
        for o in om {
            assert!((o[0] - 0.7).abs() < 1e-8);
        }
    }

    #[test]
    fn scalar_psi() {
        let p = psi(&scalar(1.0), &mat(-1.0), &DMatrix::zeros(1, 0), &DMatrix::zeros(0, 1));
        assert_eq!(p[(0, 0)], -1.0);
        assert_eq!(symmetric_range(&p), (-1.0, -1.0));
        let z = psi(&scalar(1.0), &mat(0.0), &DMatrix::zeros(1, 0), &DMatrix::zeros(0, 1));
        assert_eq!(z[(0, 0)], 0.0);
    }

    #[test]
    fn recursion_matches_sum_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ms, rs, tau) = (4, 2, 9);
        let v = DVector::from_fn(ms, |_, _| rng.random_range(0.5..2.0));
        let k = DMatrix::from_fn(ms, rs, |_, _| rng.random_range(-1.0..1.0));
        let gammas: Vec<DMatrix<f64>> = (0..tau)
            .map(|_| DMatrix::<f64>::identity(ms, ms) + DMatrix::from_fn(ms, ms, |_, _| rng.random_range(-0.05..0.05)))
            .collect();
        let g: Vec<DVector<f64>> = (0..tau).map(|_| DVector::from_fn(ms, |_, _| rng.random_range(-1.0..1.0))).collect();
        let fp: Vec<DVector<f64>> = (0..tau).map(|_| DVector::from_fn(rs, |_, _| rng.random_range(-1.0..1.0))).collect();
        let a = omega_sum(0.3, &v, &k, &gammas, &g, &fp);
        let (_, b) = omega_recursion(0.3, &v, &k, &gammas, &g, &fp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).amax() < 1e-12);
        }
    }
}
