//! Recoverability indices of a design: mutual coherence, the compatibility
//! number φ(S), uniform compatibility φ̄(s), the smallest scaled sparse
//! singular value φ̃(s), and the ψ indices built from them.
//!
//! φ(S) and φ̄(s) are infima of ratios that are convex inside each sign
//! orthant, so both are computed exactly by splitting into one convex
//! program per sign pattern. For φ̄ every program is a quadratic over a
//! simplex face, solved in closed form by enumerating faces. For φ(S) the
//! off-support cone constraint makes the feasible set a product of a simplex
//! and an ℓ¹ ball, and each program is solved by accelerated projected
//! gradient.

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, Model, RANK_TOL};
use crate::numeric::count_subsets_up_to;
use crate::priors::lambda_bar;
use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagConfig {
    /// Cone constant in ‖β_{Sᶜ}‖₁ ≤ cone·‖β_S‖₁.
    pub cone: f64,
    pub max_s: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub subset_budget: f64,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            cone: 7.0,
            max_s: 12,
            tol: 1e-7,
            max_iter: 100_000,
            subset_budget: 1e6,
        }
    }
}

fn check_columns(x: &DesignMatrix) -> Result<()> {
    if let Some(j) = x.col_norms().iter().position(|&c| c == 0.0) {
        return Err(Error::DegenerateDesign(format!("column {j} is zero")));
    }
    Ok(())
}

/// max_{i≠j} |⟨X_i, X_j⟩| / (‖X_i‖‖X_j‖).
pub fn mutual_coherence(x: &DesignMatrix) -> Result<f64> {
    if x.p() < 2 {
        return Err(Error::Domain("mutual coherence needs p ≥ 2".into()));
    }
    check_columns(x)?;
    let g = x.gram();
    let c = x.col_norms();
    let mut mc: f64 = 0.0;
    for j in 0..x.p() {
        for i in 0..j {
            mc = mc.max(g[(i, j)].abs() / (c[i] * c[j]));
        }
    }
    Ok(mc.min(1.0))
}

/// Sign patterns on k coordinates modulo a global sign flip; the first
/// coordinate is always +1.
fn sign_patterns(k: usize) -> impl Iterator<Item = Vec<f64>> {
    let count = if k == 0 { 0 } else { 1usize << (k - 1) };
    (0..count).map(move |mask| {
        (0..k)
            .map(|i| if i > 0 && mask & (1 << (i - 1)) != 0 { -1.0 } else { 1.0 })
            .collect()
    })
}

fn budget_check(what: &str, p: usize, s: usize, budget: f64) -> Result<()> {
    let needed = count_subsets_up_to(p, s);
    if needed > budget {
        return Err(Error::budget(what, needed, budget));
    }
    Ok(())
}

/// Exact min over sign patterns σ of min{βᵀGβ : σᵀβ = 1, σ_iβ_i ≥ 0} for
/// the interior of this face only; `None` when no pattern's stationary point
/// is sign-consistent. Returns 0 for a singular block.
fn face_minimum(g: &DMatrix<f64>) -> Option<f64> {
    let k = g.nrows();
    let chol = match Cholesky::new(g.clone()) {
        Some(c) if (0..k).all(|i| c.l_dirty()[(i, i)].powi(2) >= RANK_TOL * g[(i, i)]) => c,
        _ => return Some(0.0),
    };
    let inv = chol.inverse();
    let mut best: Option<f64> = None;
    for sigma in sign_patterns(k) {
        let sv = DVector::from_vec(sigma);
        let v = &inv * &sv;
        let q = sv.dot(&v);
        if q <= 0.0 {
            continue;
        }
        if (0..k).all(|i| sv[i] * v[i] > 0.0) {
            let val = 1.0 / q;
            best = Some(best.map_or(val, |b: f64| b.min(val)));
        }
    }
    best
}

/// φ̄(s): infimum of ‖Xβ‖₂√|S_β| / (‖X‖‖β‖₁) over 0 < |S_β| ≤ s, exhaustive
/// over supports.
pub fn uniform_compatibility(x: &DesignMatrix, s: usize, cfg: &DiagConfig) -> Result<f64> {
    let p = x.p();
    if s == 0 {
        return Err(Error::Domain("s must be at least 1".into()));
    }
    check_columns(x)?;
    let s = s.min(p);
    budget_check("uniform compatibility", p, s, cfg.subset_budget)?;
    let g = x.gram();
    let norm2 = x.x_norm() * x.x_norm();
    let best = (1..=s)
        .map(|k| {
            (0..p)
                .combinations(k)
                .par_bridge()
                .filter_map(|t| {
                    let gt = DMatrix::from_fn(k, k, |a, b| g[(t[a], t[b])]);
                    face_minimum(&gt).map(|m| k as f64 * m)
                })
                .reduce(|| f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    Ok((best / norm2).max(0.0).sqrt())
}

/// φ̃(s): min over |S'| ≤ s of σ_min(X_{S'})/‖X‖. By eigenvalue interlacing
/// the minimum is attained at |S'| = min(s, p).
pub fn sparse_singular(x: &DesignMatrix, s: usize, cfg: &DiagConfig) -> Result<f64> {
    let p = x.p();
    if s == 0 {
        return Err(Error::Domain("s must be at least 1".into()));
    }
    let k = s.min(p);
    budget_check("sparse singular value", p, k, cfg.subset_budget)?;
    let g = x.gram();
    let best = (0..p)
        .combinations(k)
        .par_bridge()
        .map(|t| {
            let gt = DMatrix::from_fn(k, k, |a, b| g[(t[a], t[b])]);
            SymmetricEigen::new(gt).eigenvalues.min()
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(best.max(0.0).sqrt() / x.x_norm())
}

/// Euclidean projection onto {w ≥ 0, Σw = r}.
fn project_simplex(v: &mut [f64], r: f64) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - r) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Euclidean projection onto {‖v‖₁ ≤ r}.
fn project_l1_ball(v: &mut [f64], r: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= r {
        return;
    }
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    project_simplex(&mut a, r);
    for (x, m) in v.iter_mut().zip(a) {
        *x = x.signum() * m;
    }
}

/// The φ(S) program for one sign pattern: minimize βᵀGβ over
/// β_S ∈ {σ_iβ_i ≥ 0, σᵀβ_S = 1} and ‖β_{Sᶜ}‖₁ ≤ cone.
struct ConeProgram<'a> {
    g: &'a DMatrix<f64>,
    lip: f64,
    on: &'a [usize],
    off: Vec<usize>,
    sigma: Vec<f64>,
    cone: f64,
}

impl ConeProgram<'_> {
    fn project(&self, b: &mut DVector<f64>) {
        let mut w: Vec<f64> = self.on.iter().zip(&self.sigma).map(|(&i, s)| s * b[i]).collect();
        project_simplex(&mut w, 1.0);
        for ((&i, s), wi) in self.on.iter().zip(&self.sigma).zip(w) {
            b[i] = s * wi;
        }
        let mut o: Vec<f64> = self.off.iter().map(|&i| b[i]).collect();
        project_l1_ball(&mut o, self.cone);
        for (&i, oi) in self.off.iter().zip(o) {
            b[i] = oi;
        }
    }

    fn value(&self, b: &DVector<f64>) -> f64 {
        b.dot(&(self.g * b))
    }

    /// Gradient-mapping residual ‖b − P(b − ∇f/L)‖∞.
    fn residual(&self, b: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        let mut z = b - grad / self.lip;
        self.project(&mut z);
        (b - z).amax()
    }

    fn solve(&self, tol: f64, max_iter: usize) -> (f64, bool) {
        let p = self.g.nrows();
        let mut x = DVector::zeros(p);
        let k = self.on.len() as f64;
        for (&i, s) in self.on.iter().zip(&self.sigma) {
            x[i] = s / k;
        }
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut fx = self.value(&x);
        let mut best = fx;
        for it in 0..max_iter {
            let grad = 2.0 * (self.g * &y);
            let mut xn = &y - &grad / self.lip;
            self.project(&mut xn);
            let fxn = self.value(&xn);
            best = best.min(fxn);
            if fxn > fx {
                // Adaptive restart.
                t = 1.0;
                y = x.clone();
                continue;
            }
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &xn + (&xn - &x) * ((t - 1.0) / tn);
            t = tn;
            x = xn;
            fx = fxn;
            if it % 10 == 0 {
                let gx = 2.0 * (self.g * &x);
                if self.residual(&x, &gx) <= tol {
                    return (fx.min(best), true);
                }
            }
        }
        let gx = 2.0 * (self.g * &x);
        (best, self.residual(&x, &gx) <= tol)
    }
}

/// Precomputed normalized Gram matrix G/‖X‖² and its Lipschitz constant,
/// reused across φ(S) evaluations on one design.
pub struct CompatibilitySolver {
    g: DMatrix<f64>,
    lip: f64,
    cfg: DiagConfig,
}

impl CompatibilitySolver {
    pub fn new(x: &DesignMatrix, cfg: DiagConfig) -> Result<Self> {
        check_columns(x)?;
        let g = x.gram() / (x.x_norm() * x.x_norm());
        let lmax = SymmetricEigen::new(g.clone()).eigenvalues.max();
        Ok(CompatibilitySolver { g, lip: 2.0 * lmax.max(1e-300) * (1.0 + 1e-12), cfg })
    }

    /// φ(S).
    pub fn phi(&self, model: &Model) -> Result<f64> {
        let s = model.s();
        if s == 0 {
            return Err(Error::Domain("compatibility needs a nonempty model".into()));
        }
        if s > self.cfg.max_s {
            return Err(Error::budget("compatibility sign patterns", (1u64 << (s - 1)) as f64, (1u64 << (self.cfg.max_s - 1)) as f64));
        }
        let p = self.g.nrows();
        let on = model.indices();
        let off: Vec<usize> = (0..p).filter(|j| !model.contains(*j)).collect();
        let results: Vec<(f64, bool)> = sign_patterns(s)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|sigma| {
                ConeProgram { g: &self.g, lip: self.lip, on, off: off.clone(), sigma, cone: self.cfg.cone }
                    .solve(self.cfg.tol, self.cfg.max_iter)
            })
            .collect();
        let best = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let phi = (best.max(0.0) * s as f64).sqrt();
        if results.iter().any(|r| !r.1) {
            return Err(Error::Solver { msg: format!("compatibility of {model} did not reach tolerance"), best: phi });
        }
        Ok(phi)
    }
}

pub fn compatibility(x: &DesignMatrix, model: &Model, cfg: &DiagConfig) -> Result<f64> {
    CompatibilitySolver::new(x, *cfg)?.phi(model)
}

/// d = ⌈(2 + 3/A4 + (33/φ²)·(λ/λ̄))·|S|⌉.
pub fn psi_dimension(s: usize, lambda: f64, lambda_bar: f64, a4: f64, phi: f64) -> usize {
    ((2.0 + 3.0 / a4 + 33.0 / (phi * phi) * (lambda / lambda_bar)) * s as f64).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiIndices {
    pub d: usize,
    pub psi_bar: f64,
    pub psi_tilde: f64,
}

/// (ψ̄(S), ψ̃(S)) = (φ̄(d), φ̃(d)). Dimensions beyond p are evaluated at p,
/// where both indices are already at their infimum.
pub fn psi_indices(x: &DesignMatrix, model: &Model, lambda: f64, a4: f64, phi: f64, cfg: &DiagConfig) -> Result<PsiIndices> {
    if !(phi > 0.0) {
        return Err(Error::Domain("ψ indices need φ(S) > 0".into()));
    }
    let d = psi_dimension(model.s(), lambda, lambda_bar(x), a4, phi);
    if d == 0 {
        return Ok(PsiIndices { d, psi_bar: 1.0, psi_tilde: 1.0 });
    }
    let k = d.min(x.p());
    Ok(PsiIndices {
        d,
        psi_bar: uniform_compatibility(x, k, cfg)?,
        psi_tilde: sparse_singular(x, k, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub mc: f64,
    /// φ(S) for the requested models.
    pub phi: Vec<(Model, f64)>,
    /// φ̄(s) for s = 1, 2, ...
    pub phi_bar: Vec<f64>,
    /// φ̃(s) for s = 1, 2, ...
    pub phi_tilde: Vec<f64>,
    pub psi: Option<(Model, PsiIndices)>,
    pub config: DiagConfig,
}

/// All indices up to dimension `s_max`, plus φ(S) for each requested model.
pub fn diagnose(x: &DesignMatrix, models: &[Model], s_max: usize, cfg: &DiagConfig) -> Result<DiagnosticsReport> {
    let mc = if x.p() >= 2 { mutual_coherence(x)? } else { 0.0 };
    let solver = CompatibilitySolver::new(x, *cfg)?;
    let phi = models
        .iter()
        .map(|m| Ok((m.clone(), solver.phi(m)?)))
        .collect::<Result<Vec<_>>>()?;
    let s_max = s_max.min(x.p());
    let phi_bar = (1..=s_max).map(|s| uniform_compatibility(x, s, cfg)).collect::<Result<Vec<_>>>()?;
    let phi_tilde = (1..=s_max).map(|s| sparse_singular(x, s, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport { mc, phi, phi_bar, phi_tilde, psi: None, config: *cfg })
}

/// Outcome of checking the coherence bounds
/// φ(S)² ≥ φ̄(1)² − 15|S|·mc and φ̄(s)² ≥ φ̃(s)² ≥ φ̄(1)² − s·mc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceBoundCheck {
    /// Smallest φ(S)² − bound over models whose bound is positive.
    pub min_slack_phi: f64,
    /// Models whose bound is positive, so φ(S) had to be computed.
    pub phi_evaluated: usize,
    /// Models whose bound is ≤ 0 and hold because φ ≥ 0.
    pub phi_trivial: usize,
    /// Smallest φ̃(s)² − (φ̄(1)² − s·mc).
    pub min_slack_tilde: f64,
    /// Smallest φ̄(s)² − φ̃(s)².
    pub min_slack_order: f64,
    pub monotone: bool,
}

impl CoherenceBoundCheck {
    pub fn passes(&self, slack: f64) -> bool {
        self.min_slack_phi >= slack && self.min_slack_tilde >= slack && self.min_slack_order >= slack && self.monotone
    }
}

pub fn coherence_bounds(x: &DesignMatrix, max_s: usize, cfg: &DiagConfig) -> Result<CoherenceBoundCheck> {
    let p = x.p();
    let mc = mutual_coherence(x)?;
    let max_s = max_s.min(p);
    let phi_bar: Vec<f64> = (1..=max_s).map(|s| uniform_compatibility(x, s, cfg)).collect::<Result<_>>()?;
    let phi_tilde: Vec<f64> = (1..=max_s).map(|s| sparse_singular(x, s, cfg)).collect::<Result<_>>()?;
    let base = phi_bar[0] * phi_bar[0];
    let mut min_slack_tilde = f64::INFINITY;
    let mut min_slack_order = f64::INFINITY;
    for s in 1..=max_s {
        min_slack_tilde = min_slack_tilde.min(phi_tilde[s - 1].powi(2) - (base - s as f64 * mc));
        min_slack_order = min_slack_order.min(phi_bar[s - 1].powi(2) - phi_tilde[s - 1].powi(2));
    }
    let tol = 1e-12;
    let monotone = phi_bar.windows(2).all(|w| w[1] <= w[0] + tol) && phi_tilde.windows(2).all(|w| w[1] <= w[0] + tol);

    let mut min_slack_phi = f64::INFINITY;
    let mut phi_evaluated = 0;
    let mut phi_trivial = 0;
    let solver = CompatibilitySolver::new(x, *cfg)?;
    for s in 1..=max_s {
        let bound = base - 15.0 * s as f64 * mc;
        let count = count_subsets_up_to(p, s) - count_subsets_up_to(p, s - 1);
        if bound <= 0.0 {
            phi_trivial += count as usize;
            continue;
        }
        budget_check("coherence bound check", p, s, cfg.subset_budget)?;
        let slack = (0..p)
            .combinations(s)
            .par_bridge()
            .map(|t| {
                let m = Model::from_unsorted(t);
                let phi = match solver.phi(&m) {
                    Ok(v) => v,
                    Err(Error::Solver { best, .. }) => best,
                    Err(_) => 0.0,
                };
                phi * phi - bound
            })
            .reduce(|| f64::INFINITY, f64::min);
        min_slack_phi = min_slack_phi.min(slack);
        phi_evaluated += count as usize;
    }
    Ok(CoherenceBoundCheck { min_slack_phi, phi_evaluated, phi_trivial, min_slack_tilde, min_slack_order, monotone })
}
