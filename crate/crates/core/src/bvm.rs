//! The normal-mixture approximation Π∞ to the posterior.
//!
//! Π∞ = Σ_{S∈𝒮₀} ŵ_S N(β̂_(S), Γ_S⁻¹) ⊗ δ_{S^c}, with
//!
//!   log ŵ_S = log π_p(s) − log C(p,s) + s·log(λ/2) + (s/2)·log 2π − ½ log|Γ_S| + ½‖P_S y‖²
//!
//! up to normalization. The neighbourhood 𝒮₀ collects supports of size at
//! most (2 + 4/A4)·|S_ref| that miss at most M·|S_ref|·√(log p)/‖X‖ of the
//! reference in ℓ¹.

use crate::error::{Error, Result};
use crate::exact::{ModelPosterior, PosteriorForm};
use crate::model::{DesignMatrix, Model, Observation, RestrictedFit, SparseCoef};
use crate::numeric::{count_subsets_up_to, log_sum_exp, norm_cdf, LN_2PI};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::rng::RngHandle;
use crate::twopiece::{open_unit, TwoPiece};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_M: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityNeighborhood {
    pub reference: SparseCoef,
    pub a4: f64,
    pub m: f64,
    pub dim_cap: usize,
    pub tail_bound: f64,
    pub members: Vec<Model>,
}

impl SparsityNeighborhood {
    /// Whether `model` satisfies both defining inequalities.
    pub fn admits(&self, model: &Model) -> bool {
        model.s() <= self.dim_cap && tail_outside(&self.reference, model) <= self.tail_bound
    }
}

fn tail_outside(reference: &SparseCoef, model: &Model) -> f64 {
    reference
        .model()
        .indices()
        .iter()
        .zip(reference.values())
        .filter(|(j, _)| !model.contains(**j))
        .map(|(_, v)| v.abs())
        .sum()
}

pub fn build_neighborhood(reference: &SparseCoef, x: &DesignMatrix, a4: f64, m: f64, budget: f64) -> Result<SparsityNeighborhood> {
    if !(a4 > 0.0) || !(m >= 0.0) {
        return Err(Error::Domain(format!("neighbourhood needs A4 > 0 and M ≥ 0 (A4 = {a4}, M = {m})")));
    }
    let p = x.p();
    if reference.p() != p {
        return Err(Error::Dimension(format!("reference has p = {}, design has {p}", reference.p())));
    }
    let s_ref = reference.s();
    let dim_cap = (((2.0 + 4.0 / a4) * s_ref as f64).floor() as usize).min(p);
    let needed = count_subsets_up_to(p, dim_cap);
    if needed > budget {
        return Err(Error::budget("neighbourhood enumeration", needed, budget));
    }
    let tail_bound = m * s_ref as f64 * (p as f64).ln().sqrt() / x.x_norm();
    let mut nb = SparsityNeighborhood { reference: reference.clone(), a4, m, dim_cap, tail_bound, members: Vec::new() };
    nb.members = (0..=dim_cap)
        .flat_map(|k| (0..p).combinations(k))
        .map(Model::from_unsorted)
        .filter(|s| tail_outside(reference, s) <= tail_bound)
        .collect();
    Ok(nb)
}

/// Least-squares fit on `model`, used as the reference when β⁰ is unknown.
pub fn plug_in_reference(x: &DesignMatrix, y: &Observation, model: &Model) -> Result<SparseCoef> {
    let fit = RestrictedFit::new(x, &x.xty(&y.y), model)?;
    Ok(SparseCoef::from_model_values(model, fit.beta_hat.as_slice(), x.p()))
}

#[derive(Debug, Clone)]
pub struct BvmMixture {
    pub members: Vec<Model>,
    pub log_w: Vec<f64>,
    pub fits: Vec<RestrictedFit>,
    pub excluded: Vec<Model>,
    pub p: usize,
    cumulative: Vec<f64>,
}

impl BvmMixture {
    pub fn log_weight(&self, model: &Model) -> f64 {
        self.members.iter().position(|m| m == model).map_or(f64::NEG_INFINITY, |i| self.log_w[i])
    }

    pub fn centers(&self) -> Vec<&DVector<f64>> {
        self.fits.iter().map(|f| &f.beta_hat).collect()
    }

    /// (support, log ŵ, center) rows for reporting.
    pub fn table(&self) -> Vec<(Model, f64, Vec<f64>)> {
        self.members
            .iter()
            .zip(&self.log_w)
            .zip(&self.fits)
            .map(|((m, w), f)| (m.clone(), *w, f.beta_hat.iter().copied().collect()))
            .collect()
    }
}

/// Unnormalized log ŵ_S for a full-rank fit.
pub fn log_bvm_weight(fit: &RestrictedFit, log_model_prior: f64, lambda: f64) -> f64 {
    let s = fit.s() as f64;
    log_model_prior + s * (0.5 * lambda).ln() + 0.5 * s * LN_2PI - 0.5 * fit.log_det + 0.5 * fit.proj_sq
}

pub fn bvm_weights(
    x: &DesignMatrix,
    y: &Observation,
    dp: &crate::priors::DimensionPrior,
    lambda: f64,
    nb: &SparsityNeighborhood,
) -> Result<BvmMixture> {
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("y has length {}, X has {} rows", y.len(), x.n())));
    }
    let xty = x.xty(&y.y);
    let fits: Vec<Result<RestrictedFit>> = nb.members.par_iter().map(|m| RestrictedFit::new(x, &xty, m)).collect();
    let mut members = Vec::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (m, f) in nb.members.iter().zip(fits) {
        match f {
            Ok(f) => {
                members.push(m.clone());
                kept.push(f);
            }
            Err(Error::Rank(_)) => excluded.push(m.clone()),
            Err(e) => return Err(e),
        }
    }
    if members.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let mut log_w: Vec<f64> = kept.iter().map(|f| log_bvm_weight(f, dp.log_model_prior(f.s()), lambda)).collect();
    let z = log_sum_exp(&log_w);
    if !z.is_finite() {
        return Err(Error::EmptyMixture);
    }
    log_w.iter_mut().for_each(|w| *w -= z);
    let mut acc = 0.0;
    let cumulative = log_w.iter().map(|w| {
        acc += w.exp();
        acc
    }).collect();
    Ok(BvmMixture { members, log_w, fits: kept, excluded, p: x.p(), cumulative })
}

pub fn bvm_sample(mix: &BvmMixture, handle: RngHandle, n_draws: usize) -> Vec<SparseCoef> {
    (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = handle.child(i as u64).rng();
            let u = open_unit(&mut rng) * mix.cumulative.last().copied().unwrap_or(1.0);
            let k = mix.cumulative.partition_point(|&c| c <= u).min(mix.members.len() - 1);
            let fit = &mix.fits[k];
            let s = fit.s();
            if s == 0 {
                return SparseCoef::zero(mix.p);
            }
            let z = DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d = fit.chol.l().transpose().solve_upper_triangular(&z).expect("factor is nonsingular");
            SparseCoef::from_model_values(&mix.members[k], (&fit.beta_hat + d).as_slice(), mix.p)
        })
        .collect()
}

/// Single normal centred on the true support: β̂_(S₀) and Γ_{S₀}.
pub fn collapsed_normal(x: &DesignMatrix, y: &Observation, s0: &Model) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let fit = RestrictedFit::new(x, &x.xty(&y.y), s0)?;
    Ok((fit.beta_hat, x.gram_sub(s0.indices())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub mc_draws: usize,
    pub rng: RngHandle,
    /// Shared mass, smallest weights first, that is charged TV_S = 1
    /// instead of being estimated.
    pub negligible: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig { mc_draws: 20_000, rng: RngHandle::new(0), negligible: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithinTv {
    pub tv: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvBound {
    pub bound: f64,
    /// Monte Carlo standard error carried by the within-model terms.
    pub se: f64,
    pub between: f64,
    pub within: Vec<(Model, f64, f64)>,
}

/// TV between the exact within-model law ∝ N(β̂, Γ⁻¹)·g_S and N(β̂, Γ⁻¹).
///
/// The density ratio is g_S(β)/E_q g_S, so the set where the exact law
/// dominates is {g_S(β) ≥ E_q g_S}; for a Laplace slab that is the ℓ¹ ball
/// of radius ρ = −log(E_q e^{−λ‖β‖₁})/λ.
pub fn within_model_tv(fit: &RestrictedFit, slab: &crate::priors::Slab, cfg: &TvConfig, index: u64) -> WithinTv {
    let s = fit.s();
    if s == 0 {
        return WithinTv { tv: 0.0, se: 0.0 };
    }
    if slab.is_laplace() && s <= 2 {
        let lambda = slab.lambda();
        let tv = if s == 1 {
            laplace_tv_1d(fit.beta_hat[0], 1.0 / fit.chol.l()[(0, 0)].powi(2), lambda)
        } else {
            laplace_tv_2d(fit, lambda)
        };
        return WithinTv { tv: tv.max(0.0), se: 0.0 };
    }
    let mut rng = cfg.rng.child(index).rng();
    let lt = fit.chol.l().transpose();
    let logs: Vec<f64> = (0..cfg.mc_draws)
        .map(|_| {
            let z = DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = &fit.beta_hat + lt.solve_upper_triangular(&z).expect("factor is nonsingular");
            slab.log_slab(b.as_slice())
        })
        .collect();
    let n = logs.len() as f64;
    let log_c = log_sum_exp(&logs) - n.ln();
    let parts: Vec<f64> = logs.iter().map(|l| (1.0 - (l - log_c).exp()).max(0.0)).collect();
    let mean = parts.iter().sum::<f64>() / n;
    let var = parts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    WithinTv { tv: mean, se: (var / n).sqrt() }
}

fn laplace_tv_1d(m: f64, v: f64, lambda: f64) -> f64 {
    let tp = TwoPiece::new(m, v, lambda);
    let sd = v.sqrt();
    let rho = 0.5 * (LN_2PI + v.ln()) - tp.log_normalizer();
    let rho = (rho / lambda).max(0.0);
    let p_in = tp.cdf(rho) - tp.cdf(-rho);
    let q_in = norm_cdf((rho - m) / sd) - norm_cdf((-rho - m) / sd);
    p_in - q_in
}

/// ∫_a^b N(t; μ, τ²)·e^{−λ|t|} dt.
fn tilted_mass(mu: f64, tau2: f64, lambda: f64, a: f64, b: f64) -> f64 {
    let tp = TwoPiece::new(mu, tau2, lambda);
    let scale = (tp.log_normalizer() - 0.5 * (LN_2PI + tau2.ln())).exp();
    let hi = if b.is_finite() { tp.cdf(b) } else { 1.0 };
    let lo = if a.is_finite() { tp.cdf(a) } else { 0.0 };
    scale * (hi - lo).max(0.0)
}

fn laplace_tv_2d(fit: &RestrictedFit, lambda: f64) -> f64 {
    let cov = fit.covariance();
    let (m1, m2) = (fit.beta_hat[0], fit.beta_hat[1]);
    let v1 = cov[(0, 0)];
    let slope = cov[(0, 1)] / v1;
    let tau2 = cov[(1, 1)] - cov[(0, 1)] * slope;
    let tau = tau2.sqrt();
    let norm1 = (0.5 * (LN_2PI + v1.ln())).exp();
    let phi1 = |t: f64| (-(t - m1) * (t - m1) / (2.0 * v1)).exp() / norm1;
    let opts = QuadOptions::rel(1e-12);
    let sd1 = v1.sqrt();
    let br = [0.0, m1 - 4.0 * sd1, m1, m1 + 4.0 * sd1];
    let c = integrate_with_breaks(
        |t| phi1(t) * (-lambda * t.abs()).exp() * tilted_mass(m2 + slope * (t - m1), tau2, lambda, f64::NEG_INFINITY, f64::INFINITY),
        f64::NEG_INFINITY,
        f64::INFINITY,
        &br,
        opts,
    )
    .value;
    let rho = (-c.ln() / lambda).max(0.0);
    if rho == 0.0 {
        return 0.0;
    }
    let inner_br: Vec<f64> = br.iter().copied().filter(|b| b.abs() < rho).collect();
    let q_in = integrate_with_breaks(
        |t| {
            let w = rho - t.abs();
            let mu = m2 + slope * (t - m1);
            phi1(t) * (norm_cdf((w - mu) / tau) - norm_cdf((-w - mu) / tau))
        },
        -rho,
        rho,
        &inner_br,
        opts,
    )
    .value;
    let p_in = integrate_with_breaks(
        |t| {
            let w = rho - t.abs();
            phi1(t) * (-lambda * t.abs()).exp() * tilted_mass(m2 + slope * (t - m1), tau2, lambda, -w, w)
        },
        -rho,
        rho,
        &inner_br,
        opts,
    )
    .value
        / c;
    p_in - q_in
}

/// ½Σ|w_S − ŵ_S| + Σ min(w_S, ŵ_S)·TV_S over the union of both supports.
pub fn tv_upper_bound(exact: &ModelPosterior, mix: &BvmMixture, cfg: &TvConfig) -> Result<TvBound> {
    if let PosteriorForm::Factorized(_) = exact.form {
        if exact.p > 20 {
            return Err(Error::Domain("TV bound needs an enumerable exact posterior (p ≤ 20 when factorized)".into()));
        }
    }
    let mut weights: BTreeMap<Model, (f64, f64)> = BTreeMap::new();
    for (m, w) in exact.table(usize::MAX) {
        weights.entry(m).or_insert((0.0, 0.0)).0 = w.exp();
    }
    for (m, w) in mix.members.iter().zip(&mix.log_w) {
        weights.entry(m.clone()).or_insert((0.0, 0.0)).1 = w.exp();
    }
    let between = 0.5 * weights.values().map(|(a, b)| (a - b).abs()).sum::<f64>();
    let mut shared: Vec<(usize, &Model, f64)> = mix
        .members
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let (a, b) = weights[m];
            let w = a.min(b);
            (w > 0.0).then_some((i, m, w))
        })
        .collect();
    shared.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut charged = 0.0;
    let skip = shared.iter().take_while(|s| {
        charged += s.2;
        charged <= cfg.negligible
    }).count();
    let within: Vec<(Model, f64, f64, f64)> = shared
        .par_iter()
        .enumerate()
        .map(|(k, &(i, m, w))| {
            if k < skip {
                return (m.clone(), w, 1.0, 0.0);
            }
            let fit = &mix.fits[i];
            let t = within_model_tv(fit, &exact.slab, cfg, i as u64);
            (m.clone(), w, t.tv, t.se)
        })
        .collect();
    let bound = between + within.iter().map(|(_, w, t, _)| w * t).sum::<f64>();
    let se = within.iter().map(|(_, w, _, se)| (w * se).powi(2)).sum::<f64>().sqrt();
    Ok(TvBound { bound: bound.min(1.0), se, between, within: within.into_iter().map(|(m, _, t, se)| (m, t, se)).collect() })
}
