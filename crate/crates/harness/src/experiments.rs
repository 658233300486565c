//! Replicated experiments. Replication k draws everything from child k of
//! the configured seed, and records are reduced in replication order.

use crate::config::{Engine, ExperimentConfig, ExperimentKind, PriorKind, SlabChoice};
use crate::generate::{generate_instance, Instance};
use crate::report::{ExperimentReport, Record};
use rayon::prelude::*;
use sblab_core::bvm::{build_neighborhood, bvm_weights, tv_upper_bound, TvConfig};
use sblab_core::diagnostics::{diagnose, DiagConfig};
use sblab_core::exact::{default_s_max, enumerate_posterior, EnumConfig, ModelPosterior};
use sblab_core::lasso::{ball_mass_of_norms, lasso_fit, lasso_posterior_sample_seq, DEFAULT_TOL};
use sblab_core::mcmc::{chain_diagnostics, run_chains, ChainConfig};
use sblab_core::numeric::count_subsets_up_to;
use sblab_core::prediction::{
    enumerate_subspaces, log_c_pi, log_d, oracle_radius, rho_n, span_dimension, subspace_posterior, subspace_predict_sample,
};
use sblab_core::priors::{DimensionPrior, Slab};
use sblab_core::{DesignMatrix, Error, Model, Result, RngHandle, SparseCoef};

pub fn build_prior(cfg: &ExperimentConfig, p: usize) -> Result<DimensionPrior> {
    match cfg.prior {
        PriorKind::Complexity => DimensionPrior::complexity(cfg.prior_a, cfg.prior_c, p),
        PriorKind::BetaBinomial => DimensionPrior::beta_binomial(cfg.prior_u, p),
    }
}

pub fn build_slab(cfg: &ExperimentConfig, x: &DesignMatrix) -> Result<Slab> {
    let lambda = cfg.lambda.resolve(x)?;
    match cfg.slab {
        SlabChoice::Laplace => Slab::laplace(lambda),
        SlabChoice::HeavyTailed => Slab::heavy_tailed(lambda, cfg.slab_mu),
    }
}

pub fn enum_config(cfg: &ExperimentConfig) -> EnumConfig {
    EnumConfig { s_max: cfg.s_max, budget: cfg.enum_budget, ..EnumConfig::default() }
}

/// Posterior summaries shared by the exact and MCMC engines.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub engine: Engine,
    /// Π(|S| = k | Y) for k = 0..=p.
    pub dim_probs: Vec<f64>,
    pub inclusion: Vec<f64>,
    pub map: Model,
    pub s0_mass: f64,
    pub superset_mass: f64,
    pub strict_superset_mass: f64,
    pub draws: Vec<SparseCoef>,
    pub exact: Option<ModelPosterior>,
    pub warnings: Vec<String>,
}

impl Fitted {
    pub fn dimension_tail(&self, k: usize) -> f64 {
        self.dim_probs.iter().skip(k + 1).sum::<f64>().clamp(0.0, 1.0)
    }
}

/// Exact when the design is a scaled identity or enumeration fits the
/// budget, MCMC otherwise.
pub fn choose_engine(cfg: &ExperimentConfig, x: &DesignMatrix, dp: &DimensionPrior) -> Engine {
    match cfg.engine {
        Engine::Auto => {
            let s_max = cfg.s_max.unwrap_or_else(|| default_s_max(x.n(), x.p(), dp)).min(x.p());
            if x.identity_scale().is_some() || count_subsets_up_to(x.p(), s_max) <= cfg.enum_budget {
                Engine::Exact
            } else {
                Engine::Mcmc
            }
        }
        e => e,
    }
}

pub fn fit_posterior(cfg: &ExperimentConfig, inst: &Instance, dp: &DimensionPrior, slab: &Slab, handle: RngHandle) -> Result<Fitted> {
    let (x, y) = (&inst.x, &inst.y);
    let s0 = inst.beta0.model();
    let p = x.p();
    match choose_engine(cfg, x, dp) {
        Engine::Mcmc => {
            let chain = ChainConfig::new(cfg.n_sweeps, cfg.burn_in, handle.child(0));
            let out = run_chains(x, y, dp, slab, &chain, cfg.chains)?;
            let total = out.total_visits().max(1) as f64;
            let mut dim_probs = vec![0.0; p + 1];
            let (mut s0_mass, mut sup, mut strict) = (0.0, 0.0, 0.0);
            let mut map = (Model::empty(), 0u64);
            for (m, &c) in &out.visits {
                let w = c as f64 / total;
                dim_probs[m.s()] += w;
                if m.is_superset_of(s0) {
                    sup += w;
                    if m == s0 {
                        s0_mass = w;
                    } else {
                        strict += w;
                    }
                }
                if c > map.1 {
                    map = (m.clone(), c);
                }
            }
            let mut inclusion = vec![0.0; p];
            for st in &out.states {
                for &j in st.model().indices() {
                    inclusion[j] += 1.0;
                }
            }
            let ns = out.states.len().max(1) as f64;
            inclusion.iter_mut().for_each(|v| *v /= ns);
            let step = (out.states.len() / cfg.n_draws).max(1);
            let draws = out.states.iter().step_by(step).take(cfg.n_draws).cloned().collect();
            let warnings = chain_diagnostics(&out, p).warnings;
            Ok(Fitted {
                engine: Engine::Mcmc,
                dim_probs,
                inclusion,
                map: map.0,
                s0_mass,
                superset_mass: sup,
                strict_superset_mass: strict,
                draws,
                exact: None,
                warnings,
            })
        }
        _ => {
            let post = enumerate_posterior(x, y, dp, slab, &enum_config(cfg), handle.child(0))?;
            let draws = post.sample_posterior(x, y, handle.child(1), cfg.n_draws);
            let mut warnings = Vec::new();
            let pw = post.precision_warnings();
            if pw > 0 {
                warnings.push(format!("{pw} marginal likelihoods above the relative-error target"));
            }
            Ok(Fitted {
                engine: Engine::Exact,
                dim_probs: post.dimension_probs(),
                inclusion: post.inclusion_probabilities(),
                map: post.map_model(),
                s0_mass: post.log_weight(s0).exp(),
                superset_mass: post.superset_mass(s0, false),
                strict_superset_mass: post.superset_mass(s0, true),
                draws,
                exact: Some(post),
                warnings,
            })
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let root = RngHandle::new(cfg.seed);
    let records = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep, root.child(rep as u64)))
        .collect::<Result<Vec<Record>>>()?;
    Ok(ExperimentReport::new(cfg, records))
}

pub fn run_replication(cfg: &ExperimentConfig, rep: usize, handle: RngHandle) -> Result<Record> {
    let inst = generate_instance(cfg, handle.child(0))?;
    let mut rec = Record::new(rep);
    rec.set("s0", inst.beta0.s() as f64);
    let s0 = inst.beta0.model().clone();
    let fit_handle = handle.child(1);
    match cfg.experiment {
        ExperimentKind::Diagnose => diagnose_stats(cfg, &inst, &mut rec)?,
        ExperimentKind::LassoContrast => lasso_stats(cfg, &inst, fit_handle, &mut rec)?,
        ExperimentKind::PredictSubspace => predict_stats(cfg, &inst, fit_handle, &mut rec)?,
        kind => {
            let dp = build_prior(cfg, inst.x.p())?;
            let slab = build_slab(cfg, &inst.x)?;
            let fit = fit_posterior(cfg, &inst, &dp, &slab, fit_handle.child(0))?;
            rec.selected = Some(fit.map.clone());
            rec.warnings.extend(fit.warnings.iter().cloned());
            rec.set("exact_engine", (fit.engine == Engine::Exact) as u8 as f64);
            match kind {
                ExperimentKind::Dimension => {
                    for mult in 1..=3 {
                        rec.set(format!("dim_tail_{mult}x"), fit.dimension_tail(mult * s0.s()));
                    }
                    rec.set("expected_dim", fit.dim_probs.iter().enumerate().map(|(k, w)| k as f64 * w).sum());
                }
                ExperimentKind::Recovery => recovery_stats(&inst, &fit, &mut rec),
                ExperimentKind::Selection | ExperimentKind::NoSuperset => {
                    rec.set("map_is_s0", (fit.map == s0) as u8 as f64);
                    rec.set("map_size", fit.map.s() as f64);
                    rec.set("s0_mass", fit.s0_mass);
                    rec.set("superset_mass", fit.superset_mass);
                    rec.set("strict_superset_mass", fit.strict_superset_mass);
                }
                ExperimentKind::Coverage => coverage_stats(cfg, &inst, &fit, &mut rec)?,
                ExperimentKind::Bvm => bvm_stats(cfg, &inst, &dp, &slab, &fit, fit_handle.child(1), &mut rec)?,
                _ => unreachable!("handled above"),
            }
        }
    }
    Ok(rec)
}

fn recovery_stats(inst: &Instance, fit: &Fitted, rec: &mut Record) {
    let b0 = inst.beta0.dense();
    let n = fit.draws.len().max(1) as f64;
    let (mut l1, mut l2, mut linf, mut pred) = (0.0, 0.0, 0.0, 0.0);
    let mut mean = nalgebra::DVector::zeros(b0.len());
    for d in &fit.draws {
        let diff = d.dense() - &b0;
        l1 += diff.lp_norm(1);
        l2 += diff.norm();
        linf += diff.amax();
        pred += (inst.x.matrix() * &diff).norm();
        mean += d.dense();
    }
    mean /= n;
    rec.set("l1_loss", l1 / n);
    rec.set("l2_loss", l2 / n);
    rec.set("linf_loss", linf / n);
    rec.set("pred_loss", pred / n);
    rec.set("mean_l2_loss", (mean - b0).norm());
    rec.set("dim_tail_3x", fit.dimension_tail(3 * inst.beta0.s()));
}

fn coverage_stats(cfg: &ExperimentConfig, inst: &Instance, fit: &Fitted, rec: &mut Record) -> Result<()> {
    let p = inst.x.p();
    let s0 = inst.beta0.model();
    let exact = fit.exact.as_ref();
    let closed = exact.is_some_and(|e| e.is_factorized() && e.slab.is_laplace());
    let (mut cov, mut zero) = (Vec::new(), Vec::new());
    for j in 0..p {
        let r_hat = match exact {
            Some(e) if closed => e.credible_limit_exact(j, cfg.level)?.r_hat,
            Some(e) => e.credible_limit_from_draws(&fit.draws, j, cfg.level).r_hat,
            None => credible_from_mcmc(fit, j, cfg.level),
        };
        if s0.contains(j) {
            let c = (inst.beta0.get(j) <= r_hat) as u8 as f64;
            rec.set(format!("cover_{j:04}"), c);
            cov.push(c);
        } else {
            let z = (r_hat == 0.0) as u8 as f64;
            rec.set(format!("zero_{j:04}"), z);
            zero.push(z);
        }
    }
    if !cov.is_empty() {
        rec.set("cover_in", cov.iter().sum::<f64>() / cov.len() as f64);
    }
    if !zero.is_empty() {
        rec.set("zero_null_frac", zero.iter().sum::<f64>() / zero.len() as f64);
    }
    Ok(())
}

fn credible_from_mcmc(fit: &Fitted, j: usize, level: f64) -> f64 {
    let pi_hat = 1.0 - fit.inclusion[j];
    let mut vals: Vec<f64> = fit.draws.iter().map(|d| d.get(j)).filter(|v| *v != 0.0).collect();
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    let f0 = if m == 0 { 0.0 } else { vals.partition_point(|v| *v <= 0.0) as f64 / m as f64 };
    let f_inv = |u: f64| if m == 0 { 0.0 } else { vals[((u * m as f64).ceil() as usize).clamp(1, m) - 1] };
    sblab_core::exact::three_case_limit(level, pi_hat, f0, f_inv).1
}

fn bvm_stats(
    cfg: &ExperimentConfig,
    inst: &Instance,
    dp: &DimensionPrior,
    slab: &Slab,
    fit: &Fitted,
    handle: RngHandle,
    rec: &mut Record,
) -> Result<()> {
    let exact = fit
        .exact
        .as_ref()
        .ok_or_else(|| Error::Config("bvm experiment needs the exact engine".into()))?;
    let a4 = dp.certify()?.a4;
    if !(a4 > 0.0) {
        return Err(Error::Config("bvm experiment needs a dimension prior with A4 > 0".into()));
    }
    let nb = build_neighborhood(&inst.beta0, &inst.x, a4, cfg.neighborhood_m, cfg.enum_budget)?;
    let mix = bvm_weights(&inst.x, &inst.y, dp, slab.lambda(), &nb)?;
    let tv = tv_upper_bound(exact, &mix, &TvConfig { mc_draws: cfg.tv_draws, rng: handle, ..TvConfig::default() })?;
    rec.set("tv_bound", tv.bound);
    rec.set("tv_se", tv.se);
    rec.set("tv_between", tv.between);
    rec.set("neighborhood_size", nb.members.len() as f64);
    rec.set("mix_s0_weight", mix.log_weight(inst.beta0.model()).exp());
    rec.set("exact_s0_mass", fit.s0_mass);
    Ok(())
}

fn lasso_stats(cfg: &ExperimentConfig, inst: &Instance, handle: RngHandle, rec: &mut Record) -> Result<()> {
    if inst.x.identity_scale() != Some(1.0) {
        return Err(Error::Config("lasso_contrast runs in the sequence model (identity design)".into()));
    }
    let n = inst.x.n() as f64;
    let lambda = cfg.lambda.resolve(&inst.x)?;
    let draws = lasso_posterior_sample_seq(inst.y.y.as_slice(), lambda, handle.child(0), cfg.n_draws);
    let norms: Vec<f64> = draws.row_iter().map(|r| r.norm()).collect();
    let lasso_radius = cfg.lasso_delta * n.sqrt() / lambda;
    let lm = ball_mass_of_norms(&norms, lasso_radius);
    let point = lasso_fit(&inst.x, &inst.y, lambda, DEFAULT_TOL, 10_000)?;
    let dp = build_prior(cfg, inst.x.p())?;
    let slab = build_slab(cfg, &inst.x)?;
    let post = enumerate_posterior(&inst.x, &inst.y, &dp, &slab, &enum_config(cfg), handle.child(1))?;
    let ss = post.sample_posterior(&inst.x, &inst.y, handle.child(2), cfg.n_draws);
    let ss_radius = cfg.ss_radius_factor * n.ln().sqrt();
    let sm = ball_mass_of_norms(&ss.iter().map(|d| d.norm_l2()).collect::<Vec<_>>(), ss_radius);
    rec.set("lambda", lambda);
    rec.set("lasso_radius", lasso_radius);
    rec.set("lasso_ball_mass", lm.fraction);
    rec.set("lasso_ball_se", lm.se);
    rec.set("lasso_mean_norm", norms.iter().sum::<f64>() / norms.len() as f64);
    rec.set("lasso_estimate_l2", point.beta_hat.iter().map(|b| b * b).sum::<f64>().sqrt());
    rec.set("ss_radius", ss_radius);
    rec.set("ss_ball_mass", sm.fraction);
    rec.set("ss_ball_se", sm.se);
    Ok(())
}

fn predict_stats(cfg: &ExperimentConfig, inst: &Instance, handle: RngHandle, rec: &mut Record) -> Result<()> {
    let (x, y) = (&inst.x, &inst.y);
    let p = x.p();
    let fam = enumerate_subspaces(x, cfg.t_max, cfg.dedup_tol, cfg.subspace_budget)?;
    let sp = subspace_posterior(&fam, &y.y, cfg.subspace_d, p)?;
    let gammas = subspace_predict_sample(&fam, &sp, &y.y, handle.child(0), cfg.n_draws);
    let mean = x.matrix() * inst.beta0.dense();
    let t0 = span_dimension(x, inst.beta0.model());
    let threshold = cfg.predict_m * t0.max(1) as f64 * (p as f64).ln();
    let within = gammas.iter().filter(|g| (*g - &mean).norm_squared() <= threshold).count();
    let best = (0..fam.members.len()).max_by(|&a, &b| sp.log_weights[a].total_cmp(&sp.log_weights[b]).then(b.cmp(&a))).unwrap_or(0);
    rec.set("t0", t0 as f64);
    rec.set("family_size", fam.members.len() as f64);
    rec.set("map_dim", fam.members[best].t as f64);
    rec.set("within_frac", within as f64 / gammas.len() as f64);
    rec.set("threshold", threshold);
    rec.selected = Some(fam.members[best].support.clone());

    if cfg.oracle_r.is_empty() {
        return Ok(());
    }
    // Heavy-tailed slab at scale ‖X‖ for the oracle radius.
    let dp = build_prior(cfg, p)?;
    let slab = Slab::heavy_tailed(x.x_norm(), cfg.slab_mu)?;
    let lc = log_c_pi(&dp);
    let ld = log_d(&inst.beta0, &slab, x, &dp)?;
    rec.set("log_c_pi", lc);
    rec.set("log_d", ld);
    rec.set("rho_n", rho_n(&inst.beta0, x, &slab)?);
    let mcfg = ExperimentConfig { engine: Engine::Mcmc, ..cfg.clone() };
    let fit = fit_posterior(&mcfg, inst, &dp, &slab, handle.child(1))?;
    rec.warnings.extend(fit.warnings.iter().cloned());
    let dists: Vec<f64> = fit.draws.iter().map(|d| (x.matrix() * d.dense() - &mean).norm()).collect();
    for &r in &cfg.oracle_r {
        let radius = oracle_radius(0.0, lc, ld, r);
        let out = dists.iter().filter(|&&d| d > radius).count() as f64 / dists.len().max(1) as f64;
        rec.set(format!("oracle_radius_r{r}"), radius);
        rec.set(format!("oracle_exceed_r{r}"), out);
    }
    Ok(())
}

fn diagnose_stats(cfg: &ExperimentConfig, inst: &Instance, rec: &mut Record) -> Result<()> {
    let models: Vec<Model> = if inst.beta0.s() > 0 { vec![inst.beta0.model().clone()] } else { vec![] };
    let d = diagnose(&inst.x, &models, cfg.diag_s_max, &DiagConfig::default())?;
    rec.set("mc", d.mc);
    for (s, v) in d.phi_bar.iter().enumerate() {
        rec.set(format!("phi_bar_{}", s + 1), *v);
    }
    for (s, v) in d.phi_tilde.iter().enumerate() {
        rec.set(format!("phi_tilde_{}", s + 1), *v);
    }
    if let Some((_, v)) = d.phi.first() {
        rec.set("phi_s0", *v);
    }
    rec.set("x_norm", inst.x.x_norm());
    Ok(())
}
