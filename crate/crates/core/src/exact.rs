//! The exact posterior over (S, β_S).
//!
//! A model's weight is log π_p(s) − log C(p, s) + log m(S), where the
//! marginal m(S) = ∫ exp(−½‖y − X_Sβ‖² + ½‖y‖²) g_S(β) dβ is taken
//! relative to the empty model. Completing the square around β̂_(S) gives
//!
//!   log m(S) = ½‖P_S y‖² + log ∫ exp(−½(β − β̂)ᵀΓ_S(β − β̂)) g_S(β) dβ,
//!
//! and the remaining integral is evaluated per coordinate (X ∝ I), by
//! iterated quadrature (|S| ≤ 3) or by importance sampling from
//! N(β̂_(S), Γ_S⁻¹).
//!
//! When X = c·I the posterior factorizes: the weight of S is
//! c_{|S|}·Π_{i∈S} B_i with c_k = π_p(k)/C(p,k), and all summaries follow
//! from elementary symmetric polynomials of the B_i without enumerating
//! supports.

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, Model, Observation, RestrictedFit, SparseCoef};
use crate::numeric::{count_subsets_up_to, log_add_exp, log_sum_exp, LN_2PI};
use crate::priors::{DimensionPrior, Slab};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::rng::RngHandle;
use crate::twopiece::{open_unit, TwoPiece};
use crate::within::WithinModel;
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMethod {
    Auto,
    Quadrature,
    Importance,
    SequenceClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalConfig {
    pub method: MarginalMethod,
    pub quad_rel_tol: f64,
    pub is_batch: usize,
    pub is_budget: usize,
    /// Target relative standard error of the importance estimate.
    pub is_rel_se: f64,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        MarginalConfig {
            method: MarginalMethod::Auto,
            quad_rel_tol: 1e-10,
            is_batch: 1000,
            is_budget: 20_000,
            is_rel_se: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub value: f64,
    /// Standard error of `value` (zero for deterministic methods).
    pub se: f64,
    pub method: MarginalMethod,
    pub precision_warning: bool,
}

impl Marginal {
    fn exact(value: f64, method: MarginalMethod) -> Self {
        Marginal { value, se: 0.0, method, precision_warning: false }
    }
}

/// ½·prec·ŷ² + log ∫ exp(−½·prec·(β − ŷ)²) g(β) dβ: the marginal factor of a
/// single coordinate with Gaussian precision `prec`.
pub fn coordinate_log_factor(yhat: f64, prec: f64, slab: &Slab) -> f64 {
    let quad = 0.5 * prec * yhat * yhat;
    if slab.is_laplace() {
        return quad + slab.log_normalizer() + TwoPiece::new(yhat, 1.0 / prec, slab.lambda()).log_normalizer();
    }
    let shift = slab.log_density(yhat).max(slab.log_density(0.0) - quad);
    let f = |b: f64| (-0.5 * prec * (b - yhat) * (b - yhat) + slab.log_density(b) - shift).exp();
    let sd = prec.powf(-0.5);
    let r = integrate_with_breaks(
        f,
        f64::NEG_INFINITY,
        f64::INFINITY,
        &[0.0, yhat - 4.0 * sd, yhat, yhat + 4.0 * sd],
        QuadOptions::rel(1e-11),
    );
    quad + shift + r.value.ln()
}

/// Conditional Gaussian parameters used to place breakpoints level by level:
/// coordinate k given coordinates 0..k of N(0, cov).
struct Levels {
    weights: Vec<Vec<f64>>,
    sds: Vec<f64>,
}

impl Levels {
    fn new(cov: &DMatrix<f64>) -> Self {
        let q = cov.nrows();
        let mut weights = Vec::with_capacity(q);
        let mut sds = Vec::with_capacity(q);
        for k in 0..q {
            if k == 0 {
                weights.push(Vec::new());
                sds.push(cov[(0, 0)].sqrt());
                continue;
            }
            let sub = cov.view((0, 0), (k, k)).clone_owned();
            let cross = DVector::from_iterator(k, (0..k).map(|i| cov[(k, i)]));
            let w = sub.cholesky().map(|c| c.solve(&cross)).unwrap_or_else(|| DVector::zeros(k));
            let var = (cov[(k, k)] - w.dot(&cross)).max(1e-300);
            weights.push(w.iter().copied().collect());
            sds.push(var.sqrt());
        }
        Levels { weights, sds }
    }
}

/// ∫ exp(f(d)) dd over ℝ^q by nested adaptive quadrature, where `f` is
/// concentrated near the Gaussian described by `levels` and shifted so that
/// its peak is O(1). `center` is added to d when placing the kink at β = 0.
fn nested<F: Fn(&[f64]) -> f64>(f: &F, levels: &Levels, center: &[f64], fixed: &mut Vec<f64>, tol: f64) -> f64 {
    let k = fixed.len();
    let q = levels.sds.len();
    let mu: f64 = levels.weights[k].iter().zip(fixed.iter()).map(|(w, d)| w * d).sum();
    let sd = levels.sds[k];
    let breaks = [-center[k], mu - 6.0 * sd, mu - 2.0 * sd, mu, mu + 2.0 * sd, mu + 6.0 * sd];
    let inner = |t: f64| {
        let mut fx = fixed.clone();
        fx.push(t);
        if k + 1 == q {
            f(&fx).exp()
        } else {
            nested(f, levels, center, &mut fx, tol)
        }
    };
    let opts = QuadOptions { rel_tol: tol, abs_tol: 1e-300, max_intervals: 400 };
    integrate_with_breaks(inner, f64::NEG_INFINITY, f64::INFINITY, &breaks, opts).value
}

/// log ∫ exp(−½(β − β̂)ᵀΓ(β − β̂)) g_S(β) dβ by iterated quadrature. With a
/// Laplace slab the last coordinate is integrated in closed form.
fn quadrature_log_integral(fit: &RestrictedFit, slab: &Slab, tol: f64) -> f64 {
    let s = fit.s();
    let gamma = fit.chol.l() * fit.chol.l().transpose();
    let bh = &fit.beta_hat;
    if slab.is_laplace() {
        let lambda = slab.lambda();
        let ln_half = slab.log_normalizer();
        let last = s - 1;
        let gbb = gamma[(last, last)];
        if s == 1 {
            return ln_half + TwoPiece::new(bh[0], 1.0 / gbb, lambda).log_normalizer();
        }
        let q = s - 1;
        let gba: Vec<f64> = (0..q).map(|i| gamma[(last, i)]).collect();
        let schur = DMatrix::from_fn(q, q, |i, j| gamma[(i, j)] - gba[i] * gba[j] / gbb);
        let cov = schur.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| DMatrix::identity(q, q));
        let levels = Levels::new(&cov);
        let logf = |d: &[f64]| {
            let mut quad = 0.0;
            for i in 0..q {
                for j in 0..q {
                    quad += d[i] * schur[(i, j)] * d[j];
                }
            }
            let l1: f64 = (0..q).map(|i| (bh[i] + d[i]).abs()).sum();
            let m = bh[last] - gba.iter().zip(d).map(|(g, di)| g * di).sum::<f64>() / gbb;
            -0.5 * quad - lambda * l1 + TwoPiece::new(m, 1.0 / gbb, lambda).log_normalizer()
        };
        let zero = vec![0.0; q];
        let shift = logf(&zero);
        let shifted = |d: &[f64]| logf(d) - shift;
        let center: Vec<f64> = (0..q).map(|i| bh[i]).collect();
        let val = nested(&shifted, &levels, &center, &mut Vec::with_capacity(q), tol);
        s as f64 * ln_half + shift + val.ln()
    } else {
        let cov = fit.covariance();
        let levels = Levels::new(&cov);
        let logf = |d: &[f64]| {
            let mut quad = 0.0;
            for i in 0..s {
                for j in 0..s {
                    quad += d[i] * gamma[(i, j)] * d[j];
                }
            }
            -0.5 * quad + (0..s).map(|i| slab.log_density(bh[i] + d[i])).sum::<f64>()
        };
        let zero = vec![0.0; s];
        let shift = logf(&zero);
        let shifted = |d: &[f64]| logf(d) - shift;
        let center: Vec<f64> = bh.iter().copied().collect();
        shift + nested(&shifted, &levels, &center, &mut Vec::with_capacity(s), tol).ln()
    }
}

/// Importance estimate of log E_{N(β̂, Γ⁻¹)}[g_S(β)] with adaptive batches.
/// Returns (estimate, relative standard error).
fn importance_log_mean(fit: &RestrictedFit, slab: &Slab, cfg: &MarginalConfig, handle: RngHandle) -> (f64, f64) {
    let s = fit.s();
    let mut rng = handle.rng();
    let lt = fit.chol.l().transpose();
    let mut logs: Vec<f64> = Vec::with_capacity(cfg.is_budget);
    let mut rel_se = f64::INFINITY;
    while logs.len() < cfg.is_budget {
        for _ in 0..cfg.is_batch.min(cfg.is_budget - logs.len()) {
            let z = DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d = lt.solve_upper_triangular(&z).expect("factor is nonsingular");
            let beta = &fit.beta_hat + d;
            logs.push(slab.log_slab(beta.as_slice()));
        }
        rel_se = relative_se(&logs);
        if rel_se <= cfg.is_rel_se {
            break;
        }
    }
    (log_sum_exp(&logs) - (logs.len() as f64).ln(), rel_se)
}

fn relative_se(logs: &[f64]) -> f64 {
    let n = logs.len() as f64;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (var / n).sqrt() / mean
}

/// log m(S) for a model whose restricted fit is already available.
pub fn log_marginal_fit(
    fit: &RestrictedFit,
    slab: &Slab,
    identity_scale: Option<f64>,
    cfg: &MarginalConfig,
    handle: RngHandle,
) -> Result<Marginal> {
    let s = fit.s();
    if s == 0 {
        return Ok(Marginal::exact(0.0, MarginalMethod::SequenceClosed));
    }
    let method = match cfg.method {
        MarginalMethod::Auto if identity_scale.is_some() => MarginalMethod::SequenceClosed,
        MarginalMethod::Auto if s <= 3 => MarginalMethod::Quadrature,
        MarginalMethod::Auto => MarginalMethod::Importance,
        m => m,
    };
    match method {
        MarginalMethod::SequenceClosed => {
            let c = identity_scale.ok_or_else(|| Error::Domain("closed form needs X = c·I".into()))?;
            let prec = c * c;
            let value = fit.beta_hat.iter().map(|&b| coordinate_log_factor(b, prec, slab)).sum();
            Ok(Marginal::exact(value, method))
        }
        MarginalMethod::Quadrature => {
            if s > 3 {
                return Err(Error::budget("quadrature marginal dimension", s as f64, 3.0));
            }
            let v = 0.5 * fit.proj_sq + quadrature_log_integral(fit, slab, cfg.quad_rel_tol);
            if !v.is_finite() {
                return Err(Error::Integral(format!("quadrature marginal of {} is not finite", fit.model)));
            }
            Ok(Marginal::exact(v, method))
        }
        MarginalMethod::Importance => {
            let (log_mean, rel_se) = importance_log_mean(fit, slab, cfg, handle);
            let value = 0.5 * fit.proj_sq + 0.5 * s as f64 * LN_2PI - 0.5 * fit.log_det + log_mean;
            Ok(Marginal { value, se: rel_se, method, precision_warning: rel_se > cfg.is_rel_se })
        }
        MarginalMethod::Auto => unreachable!(),
    }
}

/// log ∫ exp(−½‖y − X_Sβ‖² + ½‖y‖²) g_S(β) dβ.
pub fn log_marginal(
    x: &DesignMatrix,
    y: &Observation,
    model: &Model,
    slab: &Slab,
    cfg: &MarginalConfig,
    handle: RngHandle,
) -> Result<Marginal> {
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("y has length {}, X has {} rows", y.len(), x.n())));
    }
    let xty = x.xty(&y.y);
    let fit = RestrictedFit::new(x, &xty, model)?;
    log_marginal_fit(&fit, slab, x.identity_scale(), cfg, handle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnumConfig {
    /// Largest model size; defaults to min(n, 2⌈E s⌉ + 10, p) under the
    /// dimension prior.
    pub s_max: Option<usize>,
    pub budget: f64,
    pub marginal: MarginalConfig,
    /// Use the product form when X = c·I.
    pub factorize: bool,
    pub burn_in: usize,
}

impl Default for EnumConfig {
    fn default() -> Self {
        EnumConfig {
            s_max: None,
            budget: 2e6,
            marginal: MarginalConfig::default(),
            factorize: true,
            burn_in: 50,
        }
    }
}

pub fn default_s_max(n: usize, p: usize, dp: &DimensionPrior) -> usize {
    let mean: f64 = dp.log_probs().iter().enumerate().map(|(s, w)| s as f64 * w.exp()).sum();
    n.min(2 * mean.ceil() as usize + 10).min(p)
}

#[derive(Debug, Clone)]
pub struct Enumerated {
    pub models: Vec<Model>,
    pub log_weights: Vec<f64>,
    pub marginals: Vec<Marginal>,
    pub fits: Vec<RestrictedFit>,
    pub excluded: Vec<(Model, String)>,
    pub s_max: usize,
    log_evidence: f64,
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Factorized {
    scale: f64,
    yhat: Vec<f64>,
    log_b: Vec<f64>,
    log_ck: Vec<f64>,
    // back[j][k]: log Σ over completions with coordinates j.. given k chosen.
    back: Vec<Vec<f64>>,
    q: Vec<f64>,
    log_dim: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum PosteriorForm {
    Enumerated(Enumerated),
    Factorized(Factorized),
}

#[derive(Debug, Clone)]
pub struct ModelPosterior {
    pub form: PosteriorForm,
    pub p: usize,
    pub slab: Slab,
    pub dp: DimensionPrior,
    pub config: EnumConfig,
}

pub fn enumerate_posterior(
    x: &DesignMatrix,
    y: &Observation,
    dp: &DimensionPrior,
    slab: &Slab,
    cfg: &EnumConfig,
    handle: RngHandle,
) -> Result<ModelPosterior> {
    let p = x.p();
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("y has length {}, X has {} rows", y.len(), x.n())));
    }
    if dp.p() != p {
        return Err(Error::Dimension(format!("prior has p = {}, design has {p}", dp.p())));
    }
    let scale = x.identity_scale();
    if let (Some(c), true) = (scale, cfg.factorize) {
        let form = PosteriorForm::Factorized(Factorized::new(c, &y.y, dp, slab));
        return Ok(ModelPosterior { form, p, slab: slab.clone(), dp: dp.clone(), config: *cfg });
    }
    let s_max = cfg.s_max.unwrap_or_else(|| default_s_max(x.n(), p, dp)).min(p);
    let needed = count_subsets_up_to(p, s_max);
    if needed > cfg.budget {
        return Err(Error::budget("model enumeration", needed, cfg.budget));
    }
    let xty = x.xty(&y.y);
    let models: Vec<Model> = (0..=s_max)
        .flat_map(|k| (0..p).combinations(k).map(Model::from_unsorted))
        .collect();
    let results: Vec<Result<(RestrictedFit, Marginal)>> = models
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let fit = RestrictedFit::new(x, &xty, m)?;
            let marg = log_marginal_fit(&fit, slab, scale, &cfg.marginal, handle.child(i as u64))?;
            Ok((fit, marg))
        })
        .collect();
    let mut kept = Vec::new();
    let mut fits = Vec::new();
    let mut marginals = Vec::new();
    let mut log_w = Vec::new();
    let mut excluded = Vec::new();
    for (m, r) in models.into_iter().zip(results) {
        match r {
            Ok((fit, marg)) => {
                log_w.push(dp.log_model_prior(m.s()) + marg.value);
                kept.push(m);
                fits.push(fit);
                marginals.push(marg);
            }
            Err(Error::Rank(_)) => excluded.push((m, "rank deficient".to_string())),
            Err(e) => return Err(e),
        }
    }
    let log_evidence = log_sum_exp(&log_w);
    if !log_evidence.is_finite() {
        return Err(Error::Integral("posterior normalizer is not finite".into()));
    }
    for w in log_w.iter_mut() {
        *w -= log_evidence;
    }
    let mut acc = 0.0;
    let cumulative = log_w.iter().map(|w| {
        acc += w.exp();
        acc
    }).collect();
    let form = PosteriorForm::Enumerated(Enumerated {
        models: kept,
        log_weights: log_w,
        marginals,
        fits,
        excluded,
        s_max,
        log_evidence,
        cumulative,
    });
    Ok(ModelPosterior { form, p, slab: slab.clone(), dp: dp.clone(), config: *cfg })
}

impl Factorized {
    fn new(scale: f64, y: &DVector<f64>, dp: &DimensionPrior, slab: &Slab) -> Self {
        let p = y.len();
        let prec = scale * scale;
        let yhat: Vec<f64> = y.iter().map(|v| v / scale).collect();
        let log_b: Vec<f64> = yhat.par_iter().map(|&v| coordinate_log_factor(v, prec, slab)).collect();
        let log_ck: Vec<f64> = (0..=p).map(|k| dp.log_model_prior(k)).collect();
        let ninf = f64::NEG_INFINITY;
        let mut back = vec![vec![ninf; p + 1]; p + 1];
        back[p] = log_ck.clone();
        for j in (0..p).rev() {
            for k in 0..=j {
                back[j][k] = log_add_exp(back[j + 1][k], log_b[j] + back[j + 1][k + 1]);
            }
        }
        let log_z = back[0][0];
        let mut fwd = vec![ninf; p + 1];
        fwd[0] = 0.0;
        let mut q = vec![0.0; p];
        for j in 0..p {
            let terms: Vec<f64> = (0..=j).map(|k| fwd[k] + log_b[j] + back[j + 1][k + 1]).collect();
            q[j] = (log_sum_exp(&terms) - log_z).exp().min(1.0);
            for k in (1..=j + 1).rev() {
                fwd[k] = log_add_exp(fwd[k], log_b[j] + fwd[k - 1]);
            }
        }
        let log_dim = (0..=p).map(|k| log_ck[k] + fwd[k] - log_z).collect();
        Factorized { scale, yhat, log_b, log_ck, back, q, log_dim }
    }

    fn log_z(&self) -> f64 {
        self.back[0][0]
    }

    fn sample_model<R: Rng + ?Sized>(&self, rng: &mut R) -> Model {
        let p = self.log_b.len();
        let mut k = 0;
        let mut idx = Vec::new();
        for j in 0..p {
            let pin = (self.log_b[j] + self.back[j + 1][k + 1] - self.back[j][k]).exp();
            if open_unit(rng) < pin {
                idx.push(j);
                k += 1;
            }
        }
        Model::from_unsorted(idx)
    }

    fn map_model(&self) -> Model {
        let p = self.log_b.len();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| self.log_b[b].total_cmp(&self.log_b[a]).then(a.cmp(&b)));
        let mut best_k = 0;
        let mut best = self.log_ck[0];
        let mut acc = 0.0;
        for k in 1..=p {
            acc += self.log_b[order[k - 1]];
            let v = self.log_ck[k] + acc;
            if v > best {
                best = v;
                best_k = k;
            }
        }
        Model::from_unsorted(order[..best_k].to_vec())
    }

    fn superset_log_mass(&self, s0: &Model) -> f64 {
        let p = self.log_b.len();
        let s = s0.s();
        let base: f64 = s0.indices().iter().map(|&i| self.log_b[i]).sum();
        let rest: Vec<usize> = (0..p).filter(|j| !s0.contains(*j)).collect();
        let mut e = vec![f64::NEG_INFINITY; rest.len() + 1];
        e[0] = 0.0;
        for (t, &j) in rest.iter().enumerate() {
            for m in (1..=t + 1).rev() {
                e[m] = log_add_exp(e[m], self.log_b[j] + e[m - 1]);
            }
        }
        let terms: Vec<f64> = (0..=rest.len()).map(|m| self.log_ck[s + m] + e[m]).collect();
        base + log_sum_exp(&terms) - self.log_z()
    }
}

/// Marginal summary of one coordinate and its upper credible limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleSummary {
    pub j: usize,
    pub level: f64,
    /// Posterior mass of β_j = 0.
    pub pi_hat: f64,
    /// Ĥ_j(0), the continuous part's mass below zero.
    pub h_at_zero: f64,
    pub r_hat: f64,
    /// Number of nonzero draws behind Ĥ_j, or `None` when exact.
    pub nonzero_draws: Option<usize>,
    pub precision_warning: bool,
}

/// The three-case upper limit given π̂ and the continuous part
/// Ĥ = (1 − π̂)·F with `f_inv` the quantile function of F.
pub fn three_case_limit(level: f64, pi_hat: f64, f_at_zero: f64, f_inv: impl Fn(f64) -> f64) -> (f64, f64) {
    let cont = 1.0 - pi_hat;
    let h0 = cont * f_at_zero;
    let r = if cont <= 0.0 {
        0.0
    } else if level <= h0 {
        f_inv(level / cont)
    } else if level <= h0 + pi_hat {
        0.0
    } else {
        f_inv(((level - pi_hat) / cont).min(1.0))
    };
    (h0, r)
}

impl ModelPosterior {
    pub fn is_factorized(&self) -> bool {
        matches!(self.form, PosteriorForm::Factorized(_))
    }

    /// Log normalizer of the posterior relative to the null likelihood:
    /// log Σ_S π_p(s)/C(p,s)·m(S).
    pub fn log_evidence(&self) -> f64 {
        match &self.form {
            PosteriorForm::Enumerated(e) => e.log_evidence,
            PosteriorForm::Factorized(f) => f.log_z(),
        }
    }

    pub fn log_weight(&self, model: &Model) -> f64 {
        match &self.form {
            PosteriorForm::Enumerated(e) => e
                .models
                .iter()
                .position(|m| m == model)
                .map_or(f64::NEG_INFINITY, |i| e.log_weights[i]),
            PosteriorForm::Factorized(f) => {
                f.log_ck[model.s()] + model.indices().iter().map(|&i| f.log_b[i]).sum::<f64>() - f.log_z()
            }
        }
    }

    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        match &self.form {
            PosteriorForm::Enumerated(e) => {
                let mut q = vec![0.0; self.p];
                for (m, w) in e.models.iter().zip(&e.log_weights) {
                    let w = w.exp();
                    for &j in m.indices() {
                        q[j] += w;
                    }
                }
                q
            }
            PosteriorForm::Factorized(f) => f.q.clone(),
        }
    }

    /// Π(|S| = k | Y) for k = 0..=p.
    pub fn dimension_probs(&self) -> Vec<f64> {
        match &self.form {
            PosteriorForm::Enumerated(e) => {
                let mut d = vec![0.0; self.p + 1];
                for (m, w) in e.models.iter().zip(&e.log_weights) {
                    d[m.s()] += w.exp();
                }
                d
            }
            PosteriorForm::Factorized(f) => f.log_dim.iter().map(|w| w.exp()).collect(),
        }
    }

    /// Π(|S| > k | Y); k = −1 gives 1.
    pub fn dimension_tail(&self, k: i64) -> f64 {
        if k < 0 {
            return 1.0;
        }
        let d = self.dimension_probs();
        let k = k as usize;
        if k >= d.len() - 1 {
            return 0.0;
        }
        let tail: f64 = d[k + 1..].iter().sum();
        tail.clamp(0.0, 1.0)
    }

    pub fn expected_dimension(&self) -> f64 {
        self.dimension_probs().iter().enumerate().map(|(k, w)| k as f64 * w).sum()
    }

    /// Posterior mass of supports containing `s0`, optionally excluding `s0`
    /// itself.
    pub fn superset_mass(&self, s0: &Model, strict: bool) -> f64 {
        let total = match &self.form {
            PosteriorForm::Enumerated(e) => e
                .models
                .iter()
                .zip(&e.log_weights)
                .filter(|(m, _)| m.is_superset_of(s0) && !(strict && *m == s0))
                .map(|(_, w)| w.exp())
                .sum(),
            PosteriorForm::Factorized(f) => {
                let all = f.superset_log_mass(s0).exp();
                if strict {
                    all - self.log_weight(s0).exp()
                } else {
                    all
                }
            }
        };
        total.clamp(0.0, 1.0)
    }

    /// Highest-weight model; ties go to the smaller, then lexicographically
    /// first, support.
    pub fn map_model(&self) -> Model {
        match &self.form {
            PosteriorForm::Enumerated(e) => {
                let mut best = 0;
                for i in 1..e.models.len() {
                    let (wi, wb) = (e.log_weights[i], e.log_weights[best]);
                    if wi > wb || (wi == wb && e.models[i] < e.models[best]) {
                        best = i;
                    }
                }
                e.models[best].clone()
            }
            PosteriorForm::Factorized(f) => f.map_model(),
        }
    }

    /// Model table sorted by decreasing weight, truncated to `limit` rows.
    /// The factorized form lists models only when p ≤ 20.
    pub fn table(&self, limit: usize) -> Vec<(Model, f64)> {
        let mut rows: Vec<(Model, f64)> = match &self.form {
            PosteriorForm::Enumerated(e) => e.models.iter().cloned().zip(e.log_weights.iter().copied()).collect(),
            PosteriorForm::Factorized(_) if self.p <= 20 => (0..=self.p)
                .flat_map(|k| (0..self.p).combinations(k))
                .map(|t| {
                    let m = Model::from_unsorted(t);
                    let w = self.log_weight(&m);
                    (m, w)
                })
                .collect(),
            PosteriorForm::Factorized(_) => {
                let m = self.map_model();
                let w = self.log_weight(&m);
                vec![(m, w)]
            }
        };
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows.truncate(limit);
        rows
    }

    pub fn sample_model<R: Rng + ?Sized>(&self, rng: &mut R) -> Model {
        match &self.form {
            PosteriorForm::Enumerated(e) => {
                let u = open_unit(rng) * e.cumulative.last().copied().unwrap_or(1.0);
                let i = e.cumulative.partition_point(|&c| c <= u).min(e.models.len() - 1);
                e.models[i].clone()
            }
            PosteriorForm::Factorized(f) => f.sample_model(rng),
        }
    }

    /// Independent draws of (S, β_S). Draw `i` uses child stream `i`.
    pub fn sample_posterior(&self, x: &DesignMatrix, y: &Observation, handle: RngHandle, n_draws: usize) -> Vec<SparseCoef> {
        let xty = x.xty(&y.y);
        let p = self.p;
        let burn = self.config.burn_in;
        (0..n_draws)
            .into_par_iter()
            .map(|i| {
                let mut rng = handle.child(i as u64).rng();
                let model = self.sample_model(&mut rng);
                if model.is_empty() {
                    return SparseCoef::zero(p);
                }
                let values = match &self.form {
                    PosteriorForm::Factorized(f) if self.slab.is_laplace() => {
                        let v = 1.0 / (f.scale * f.scale);
                        model
                            .indices()
                            .iter()
                            .map(|&j| TwoPiece::new(f.yhat[j], v, self.slab.lambda()).sample(&mut rng))
                            .collect()
                    }
                    _ => {
                        let w = WithinModel::new(x, &xty, &model, &self.slab);
                        let start: Vec<f64> = match &self.form {
                            PosteriorForm::Enumerated(e) => {
                                let k = e.models.iter().position(|m| *m == model).expect("drawn model is listed");
                                e.fits[k].beta_hat.iter().copied().collect()
                            }
                            PosteriorForm::Factorized(f) => model.indices().iter().map(|&j| f.yhat[j]).collect(),
                        };
                        w.run(&start, burn, &mut rng)
                    }
                };
                SparseCoef::from_model_values(&model, &values, p)
            })
            .collect()
    }

    /// Upper credible limit from posterior draws; π̂ comes from the model
    /// weights.
    pub fn credible_limit_from_draws(&self, draws: &[SparseCoef], j: usize, level: f64) -> CredibleSummary {
        let pi_hat = (1.0 - self.inclusion_probabilities()[j]).clamp(0.0, 1.0);
        let mut vals: Vec<f64> = draws.iter().map(|d| d.get(j)).filter(|v| *v != 0.0).collect();
        vals.sort_by(f64::total_cmp);
        let m = vals.len();
        let f0 = if m == 0 { 0.0 } else { vals.partition_point(|v| *v <= 0.0) as f64 / m as f64 };
        let f_inv = |u: f64| {
            if m == 0 {
                return 0.0;
            }
            let k = ((u * m as f64).ceil() as usize).clamp(1, m);
            vals[k - 1]
        };
        let (h0, r_hat) = three_case_limit(level, pi_hat, f0, f_inv);
        CredibleSummary {
            j,
            level,
            pi_hat,
            h_at_zero: h0,
            r_hat,
            nonzero_draws: Some(m),
            precision_warning: draws.len() < 1000 || (m == 0 && pi_hat < 1.0 - 1e-12),
        }
    }

    /// Upper credible limit from the exact marginal (factorized form with a
    /// Laplace slab).
    pub fn credible_limit_exact(&self, j: usize, level: f64) -> Result<CredibleSummary> {
        let f = match &self.form {
            PosteriorForm::Factorized(f) if self.slab.is_laplace() => f,
            _ => return Err(Error::Domain("exact credible limits need the factorized form with a Laplace slab".into())),
        };
        let law = TwoPiece::new(f.yhat[j], 1.0 / (f.scale * f.scale), self.slab.lambda());
        let pi_hat = (1.0 - f.q[j]).clamp(0.0, 1.0);
        let (h0, r_hat) = three_case_limit(level, pi_hat, law.cdf(0.0), |u| law.quantile(u.clamp(1e-300, 1.0 - 1e-16)));
        Ok(CredibleSummary { j, level, pi_hat, h_at_zero: h0, r_hat, nonzero_draws: None, precision_warning: false })
    }

    /// E[β | Y] in closed form for the factorized form.
    pub fn exact_mean(&self) -> Option<Vec<f64>> {
        let f = match &self.form {
            PosteriorForm::Factorized(f) => f,
            _ => return None,
        };
        let prec = f.scale * f.scale;
        Some(
            (0..self.p)
                .map(|j| {
                    let cond = if self.slab.is_laplace() {
                        TwoPiece::new(f.yhat[j], 1.0 / prec, self.slab.lambda()).mean()
                    } else {
                        let yh = f.yhat[j];
                        let dens = |b: f64| (-0.5 * prec * (b - yh).powi(2) + self.slab.log_density(b) - self.slab.log_density(yh)).exp();
                        let opts = QuadOptions::rel(1e-11);
                        let br = [0.0, yh];
                        let z = integrate_with_breaks(dens, f64::NEG_INFINITY, f64::INFINITY, &br, opts).value;
                        integrate_with_breaks(|b| b * dens(b), f64::NEG_INFINITY, f64::INFINITY, &br, opts).value / z
                    };
                    f.q[j] * cond
                })
                .collect(),
        )
    }

    pub fn precision_warnings(&self) -> usize {
        match &self.form {
            PosteriorForm::Enumerated(e) => e.marginals.iter().filter(|m| m.precision_warning).count(),
            PosteriorForm::Factorized(_) => 0,
        }
    }
}

/// Coordinatewise average of draws.
pub fn posterior_mean(draws: &[SparseCoef], p: usize) -> Vec<f64> {
    let mut acc = vec![0.0; p];
    for d in draws {
        for (&j, &v) in d.model().indices().iter().zip(d.values()) {
            acc[j] += v;
        }
    }
    let n = draws.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}
