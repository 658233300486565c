//! Acceptance criteria 1–12. Each test writes one `criterion N: PASS|FAIL`
//! line to stdout before asserting.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sblab::config::ExperimentConfig;
use sblab::generate::generate_instance;
use sblab::{run_experiment, ExperimentReport};
use sblab_core::bvm::{build_neighborhood, bvm_weights};
use sblab_core::diagnostics::{coherence_bounds, mutual_coherence, sparse_singular, uniform_compatibility, CompatibilitySolver, DiagConfig};
use sblab_core::exact::{enumerate_posterior, EnumConfig, PosteriorForm};
use sblab_core::mcmc::{run_chains, ChainConfig};
use sblab_core::numeric::{ln_choose, log_sum_exp, norm_cdf};
use sblab_core::prediction::{chisq_max_bound, chisq_max_exceedance};
use sblab_core::priors::{laplace_l1_ball_mass, DimensionPrior, Slab};
use sblab_core::quadrature::{integrate_with_breaks, QuadOptions};
use sblab_core::{DesignMatrix, Model, RngHandle};
use std::collections::BTreeMap;
use std::io::Write;

fn verdict(n: usize, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn cfg(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).unwrap()
}

fn gaussian(n: usize, p: usize, seed: u64) -> DesignMatrix {
    let mut rng = RngHandle::new(seed).rng();
    DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn agg(r: &ExperimentReport, stat: &str) -> (f64, f64) {
    let a = r.aggregates.get(stat).unwrap_or_else(|| panic!("missing statistic {stat}"));
    (a.mean, a.se)
}

#[test]
fn criterion_01_identity_diagnostics() {
    let p = 8;
    let x = DesignMatrix::identity(p);
    let dc = DiagConfig::default();
    let solver = CompatibilitySolver::new(&x, dc).unwrap();
    let mut worst: f64 = (mutual_coherence(&x).unwrap() - 0.0).abs();
    for s in 1..=5 {
        worst = worst.max((uniform_compatibility(&x, s, &dc).unwrap() - 1.0).abs());
        worst = worst.max((sparse_singular(&x, s, &dc).unwrap() - 1.0).abs());
        for t in (0..p).combinations(s) {
            worst = worst.max((solver.phi(&Model::from_unsorted(t)).unwrap() - 1.0).abs());
        }
    }
    verdict(1, worst <= 1e-9, format!("max deviation {worst:.3e} (tol 1e-9)"));
}

#[test]
fn criterion_02_coherence_lemma() {
    let dc = DiagConfig::default();
    let checks: Vec<_> = (0..100u64)
        .map(|seed| coherence_bounds(&gaussian(20, 30, 1000 + seed), 4, &dc).unwrap())
        .collect();
    let failing = checks.iter().filter(|c| !c.passes(-1e-8)).count();
    let min_phi = checks.iter().map(|c| c.min_slack_phi).fold(f64::INFINITY, f64::min);
    let min_tilde = checks.iter().map(|c| c.min_slack_tilde).fold(f64::INFINITY, f64::min);
    let min_order = checks.iter().map(|c| c.min_slack_order).fold(f64::INFINITY, f64::min);
    verdict(
        2,
        failing == 0,
        format!("{failing}/100 designs fail; min slacks phi {min_phi:.3e}, tilde {min_tilde:.3e}, order {min_order:.3e}"),
    );
}

#[test]
fn criterion_03_poisson_identity() {
    // Route 1: the ℓ¹ norm of s Laplace(λ) coordinates is Gamma(s, λ); its
    // CDF by quadrature. Route 2: Monte Carlo of the ball mass itself.
    let lambda = 1.0;
    let mut worst: f64 = 0.0;
    let mut mc_ok = true;
    let slab = Slab::laplace(lambda).unwrap();
    for s in 1..=3usize {
        for lr in [0.5, 1.0, 5.0] {
            let r = lr / lambda;
            let series = laplace_l1_ball_mass(s, lambda, r);
            let fact: f64 = (1..s).map(|k| k as f64).product();
            let dens = |t: f64| lambda.powi(s as i32) * t.powi(s as i32 - 1) * (-lambda * t).exp() / fact;
            let quad = integrate_with_breaks(dens, 0.0, r, &[], QuadOptions::rel(1e-12)).value;
            worst = worst.max((quad - series).abs() / series);
            let mut rng = RngHandle::with_stream(3, (s * 10) as u64 + lr as u64).rng();
            let n = 200_000;
            let hits = (0..n).filter(|_| (0..s).map(|_| slab.sample(&mut rng).abs()).sum::<f64>() <= r).count();
            let f = hits as f64 / n as f64;
            let se = (series * (1.0 - series) / n as f64).sqrt();
            mc_ok &= (f - series).abs() <= 4.0 * se + 1e-12;
        }
    }
    verdict(3, worst <= 1e-3 && mc_ok, format!("max relative error (quadrature) {worst:.3e} (tol 1e-3); Monte Carlo within 4 SE: {mc_ok}"));
}

/// P(σ_i Z_i > 0 for all i) for Z ~ N(mean, cov), by conditioning on the
/// first coordinate.
fn orthant_prob(mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = mean.len();
    let sd = cov[(0, 0)].sqrt();
    if d == 1 {
        return norm_cdf(mean[0] / sd);
    }
    let c11 = cov[(0, 0)];
    let c_r1 = cov.view((1, 0), (d - 1, 1)).clone_owned();
    let cond_cov = cov.view((1, 1), (d - 1, d - 1)) - &c_r1 * c_r1.transpose() / c11;
    let f = |t: f64| {
        let z = (t - mean[0]) / sd;
        let dens = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        if dens == 0.0 {
            return 0.0;
        }
        let m = mean.rows(1, d - 1) + &c_r1 * ((t - mean[0]) / c11);
        dens * orthant_prob(&m, &cond_cov)
    };
    integrate_with_breaks(f, 0.0, f64::INFINITY, &[mean[0].max(0.0)], QuadOptions::rel(1e-11)).value
}

/// log ∫ exp(−½‖y − X_Sβ‖²) Π (λ/2)e^{−λ|β_i|} dβ + ½‖y‖², summing the
/// Gaussian pieces over sign orthants.
fn orthant_log_marginal(x: &DesignMatrix, y: &DVector<f64>, idx: &[usize], lambda: f64) -> f64 {
    let s = idx.len();
    if s == 0 {
        return 0.0;
    }
    let xs = x.columns(idx);
    let g = xs.transpose() * &xs;
    let chol = g.clone().cholesky().unwrap();
    let ginv = chol.inverse();
    let bhat = chol.solve(&(xs.transpose() * y));
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mut terms = Vec::new();
    for mask in 0..(1u32 << s) {
        let sigma = DVector::from_fn(s, |i, _| if mask >> i & 1 == 1 { -1.0 } else { 1.0 });
        let shift = &ginv * &sigma * lambda;
        let m = &bhat - &shift;
        let log_c = 0.5 * lambda * lambda * (sigma.transpose() * &ginv * &sigma)[(0, 0)] - lambda * sigma.dot(&bhat);
        let d = DMatrix::from_diagonal(&sigma);
        let prob = orthant_prob(&(&d * &m), &(&d * &ginv * &d));
        if prob > 0.0 {
            terms.push(log_c + prob.ln());
        }
    }
    s as f64 * (0.5 * lambda).ln() + 0.5 * bhat.dot(&(&g * &bhat)) + 0.5 * s as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det + log_sum_exp(&terms)
}

#[test]
fn criterion_04_exact_engine_oracles() {
    let c = cfg(r#"{"design": "gaussian_iid", "n": 30, "p": 10, "s0": 2, "amplitude": 3, "seed": 4}"#);
    let inst = generate_instance(&c, RngHandle::new(c.seed)).unwrap();
    let (x, y) = (&inst.x, &inst.y);
    let p = 10;
    let lambda = sblab_core::priors::default_lambda(x).unwrap();
    let dp = DimensionPrior::complexity(1.0, 1.0, p).unwrap();
    let slab = Slab::laplace(lambda).unwrap();
    let post = enumerate_posterior(x, y, &dp, &slab, &EnumConfig { s_max: Some(p), ..EnumConfig::default() }, RngHandle::new(1)).unwrap();
    let e = match &post.form {
        PosteriorForm::Enumerated(e) => e,
        _ => unreachable!("gaussian design is enumerated"),
    };
    // Complexity prior written out: π(s) ∝ p^{−s}.
    let lp: Vec<f64> = (0..=p).map(|s| -(s as f64) * (p as f64).ln()).collect();
    let lz = log_sum_exp(&lp);
    let oracle_log_w: Vec<f64> = e
        .models
        .iter()
        .zip(&e.marginals)
        .map(|(m, marg)| {
            let val = if m.s() <= 3 { orthant_log_marginal(x, &y.y, m.indices(), lambda) } else { marg.value };
            lp[m.s()] - lz - ln_choose(p, m.s()) + val
        })
        .collect();
    let oz = log_sum_exp(&oracle_log_w);
    let tv_oracle = 0.5 * e.log_weights.iter().zip(&oracle_log_w).map(|(a, b)| (a.exp() - (b - oz).exp()).abs()).sum::<f64>();

    let chain = ChainConfig::new(26_000, 1_000, RngHandle::new(2));
    let out = run_chains(x, y, &dp, &slab, &chain, 4).unwrap();
    let freq: BTreeMap<Model, f64> = out.visit_frequencies().into_iter().collect();
    let mut tv_mcmc = 0.0;
    for (m, w) in e.models.iter().zip(&e.log_weights) {
        tv_mcmc += (w.exp() - freq.get(m).copied().unwrap_or(0.0)).abs();
    }
    tv_mcmc += freq.iter().filter(|(m, _)| !e.models.contains(m)).map(|(_, f)| f).sum::<f64>();
    tv_mcmc *= 0.5;
    verdict(
        4,
        tv_oracle <= 1e-3 && tv_mcmc <= 0.05,
        format!("TV(enumeration, orthant oracle) {tv_oracle:.3e} (tol 1e-3); TV(MCMC visits, enumeration) {tv_mcmc:.4} over {} sweeps (tol 0.05)", out.total_visits()),
    );
}

fn sequence_recovery(kind: &str) -> ExperimentConfig {
    cfg(&format!(
        r#"{{"experiment": "{kind}", "design": "identity", "n": 200, "s0": 5, "amplitude": 8, "lambda": "inv_sqrt_n",
            "prior_a": 1, "prior_c": 1, "replications": 20, "n_draws": 1000, "seed": 5}}"#
    ))
}

#[test]
fn criterion_05_dimension_and_recovery() {
    let r = run_experiment(&sequence_recovery("recovery")).unwrap();
    let (tail, _) = agg(&r, "dim_tail_3x");
    let (l2, _) = agg(&r, "l2_loss");
    let (linf, _) = agg(&r, "linf_loss");
    let lp = 200f64.ln();
    let (b2, binf) = (4.0 * (5.0 * lp).sqrt(), 8.0 * lp.sqrt());
    verdict(
        5,
        tail <= 0.05 && l2 <= b2 && linf <= binf,
        format!("mean Π(|S|>3s0) {tail:.2e} (≤ 0.05); mean ℓ2 {l2:.3} (≤ {b2:.3}); mean ℓ∞ {linf:.3} (≤ {binf:.3})"),
    );
}

#[test]
fn criterion_06_selection() {
    let r = run_experiment(&sequence_recovery("selection")).unwrap();
    let (hit, _) = agg(&r, "map_is_s0");
    let (sup, _) = agg(&r, "strict_superset_mass");
    verdict(6, hit >= 0.9 && sup <= 0.05, format!("mode = S0 in {:.0}% of replications (≥ 90%); mean strict-superset mass {sup:.3e} (≤ 0.05)", 100.0 * hit));
}

fn bvm_config() -> ExperimentConfig {
    cfg(r#"{"experiment": "bvm", "design": "gaussian_iid", "n": 60, "p": 12, "s0": 2, "lambda": "x_norm_over_p",
            "replications": 10, "n_draws": 200, "seed": 7}"#)
}

#[test]
fn criterion_07_bvm() {
    let c = bvm_config();
    let r = run_experiment(&c).unwrap();
    let (tv, se) = agg(&r, "tv_bound");
    // Second representation: Gaussian integrals via a QR factorization.
    let mut worst: f64 = 0.0;
    for rep in 0..c.replications {
        let inst = generate_instance(&c, RngHandle::new(c.seed).child(rep as u64).child(0)).unwrap();
        let p = inst.x.p();
        let lambda = inst.x.x_norm() / p as f64;
        let dp = DimensionPrior::complexity(c.prior_a, c.prior_c, p).unwrap();
        let nb = build_neighborhood(&inst.beta0, &inst.x, c.prior_a, c.neighborhood_m, 1e6).unwrap();
        let mix = bvm_weights(&inst.x, &inst.y, &dp, lambda, &nb).unwrap();
        let yy = inst.y.y.norm_squared();
        let raw: Vec<f64> = mix
            .members
            .iter()
            .map(|m| {
                let s = m.s();
                let integral = if s == 0 {
                    -0.5 * yy
                } else {
                    let qr = inst.x.columns(m.indices()).qr();
                    let log_det_r: f64 = qr.r().diagonal().iter().map(|v| v.abs().ln()).sum();
                    let qty = qr.q().transpose() * &inst.y.y;
                    0.5 * s as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_r - 0.5 * yy + 0.5 * qty.norm_squared()
                };
                dp.log_prob(s).unwrap() - ln_choose(p, s) + s as f64 * (0.5 * lambda).ln() + integral
            })
            .collect();
        let z = log_sum_exp(&raw);
        for (a, b) in mix.log_w.iter().zip(&raw) {
            let (wa, wb) = (a.exp(), (b - z).exp());
            if wb > 1e-300 {
                worst = worst.max((wa - wb).abs() / wb);
            }
        }
    }
    verdict(
        7,
        tv <= 0.1 && worst <= 1e-10,
        format!("mean TV bound {tv:.4} ± {se:.4} over {} replications (≤ 0.1); weight identity max relative gap {worst:.2e} (≤ 1e-10)", c.replications),
    );
}

#[test]
fn criterion_08_coverage() {
    let c = cfg(r#"{"experiment": "coverage", "design": "identity", "n": 100, "s0": 3, "amplitude": 8,
                    "replications": 1000, "n_draws": 10, "seed": 8}"#);
    let r = run_experiment(&c).unwrap();
    let cover: Vec<(String, f64)> = r.aggregates.iter().filter(|(k, _)| k.starts_with("cover_0")).map(|(k, a)| (k.clone(), a.mean)).collect();
    let zero_min = r.aggregates.iter().filter(|(k, _)| k.starts_with("zero_0")).map(|(_, a)| a.mean).fold(f64::INFINITY, f64::min);
    let cover_ok = cover.len() == 3 && cover.iter().all(|(_, v)| (0.945..=0.995).contains(v));
    verdict(
        8,
        cover_ok && zero_min >= 0.95,
        format!("coverage on S0 {:?} (each in [0.945, 0.995]); min over j ∉ S0 of P(R̂_j = 0) {zero_min:.4} (≥ 0.95)", cover.iter().map(|(_, v)| *v).collect::<Vec<_>>()),
    );
}

#[test]
fn criterion_09_lasso_contrast() {
    let c = cfg(r#"{"experiment": "lasso_contrast", "design": "identity", "n": 500, "s0": 0, "signal": "zero",
                    "lambda": "sqrt_2_log_n", "replications": 3, "n_draws": 10000, "seed": 9}"#);
    let r = run_experiment(&c).unwrap();
    let lasso_max = r.records.iter().map(|x| x.stats["lasso_ball_mass"]).fold(0.0, f64::max);
    let ss_min = r.records.iter().map(|x| x.stats["ss_ball_mass"]).fold(1.0, f64::min);
    verdict(
        9,
        lasso_max <= 0.01 && ss_min >= 0.9,
        format!("LASSO-posterior mass of the small ball ≤ {lasso_max:.4} (≤ 0.01); spike-and-slab mass of the 5√(log n) ball ≥ {ss_min:.4} (≥ 0.9)"),
    );
}

fn predict_config() -> ExperimentConfig {
    cfg(r#"{"experiment": "predict_subspace", "design": "gaussian_iid", "n": 40, "p": 60, "s0": 5, "planted_collinear": 2,
            "subspace_d": 4, "t_max": 3, "replications": 20, "n_draws": 1000, "n_sweeps": 6000, "burn_in": 1000,
            "chains": 2, "seed": 10}"#)
}

#[test]
fn criterion_10_prediction() {
    let r = run_experiment(&predict_config()).unwrap();
    let t0_ok = r.records.iter().all(|x| x.stats["t0"] == 3.0 && x.stats["s0"] == 5.0);
    let (within, _) = agg(&r, "within_frac");
    let mut detail = format!("t0 = 3 < s0 = 5 on every replication: {t0_ok}; fraction of γ within 10(t0∨1)log p: {within:.4} (≥ 0.95)");
    let mut ok = t0_ok && within >= 0.95;
    for rr in [1.0f64, 4.0] {
        let (m, se) = agg(&r, &format!("oracle_exceed_r{rr}"));
        let lim = (-rr).exp() + 3.0 * se;
        ok &= m <= lim;
        detail.push_str(&format!("; radius exceedance at r={rr}: {m:.4} (≤ {lim:.4})"));
    }
    verdict(10, ok, detail);
}

#[test]
fn criterion_11_tail_lemmas() {
    let x = gaussian(50, 100, 11);
    let reps = 4000u64;
    let hits = (0..reps)
        .filter(|&k| {
            let mut rng = RngHandle::with_stream(11, k).rng();
            x.noise_exceeds(&DVector::from_fn(50, |_, _| rng.sample::<f64, _>(StandardNormal)))
        })
        .count();
    let bound = 2.0 / 100.0;
    let freq = hits as f64 / reps as f64;
    let lim4 = bound + 3.0 * (bound * (1.0 - bound) / reps as f64).sqrt();
    let mut ok = freq <= lim4;
    let mut detail = format!("P(‖Xᵀε‖∞ > 2√(log p)‖X‖) ≈ {freq:.4} (≤ {lim4:.4})");
    for d in [1usize, 3] {
        let emp = chisq_max_exceedance(1000, d, 4.0, 2000, RngHandle::with_stream(12, d as u64));
        let b = chisq_max_bound(1000, d, 4.0);
        ok &= emp <= b;
        detail.push_str(&format!("; χ²({d}) max exceedance {emp:.4} (≤ {b:.4})"));
    }
    verdict(11, ok, detail);
}

#[test]
fn criterion_12_determinism() {
    let mut configs = vec![
        sequence_recovery("recovery"),
        sequence_recovery("selection"),
        bvm_config(),
        predict_config(),
        cfg(r#"{"experiment": "coverage", "design": "identity", "n": 100, "s0": 3, "n_draws": 10, "seed": 8}"#),
        cfg(r#"{"experiment": "lasso_contrast", "design": "identity", "n": 500, "s0": 0, "signal": "zero", "lambda": "sqrt_2_log_n", "n_draws": 10000, "seed": 9}"#),
        cfg(r#"{"experiment": "diagnose", "design": "ar_gram", "p": 8, "rho": 0.5, "s0": 2, "seed": 3}"#),
    ];
    for c in configs.iter_mut() {
        c.replications = c.replications.min(3);
    }
    let mut identical = 0;
    let dir = tempfile::tempdir().unwrap();
    for (k, c) in configs.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("a{k}")), dir.path().join(format!("b{k}")));
        run_experiment(c).unwrap().write_all(&a).unwrap();
        run_experiment(c).unwrap().write_all(&b).unwrap();
        let same = ["report.json", "records.csv", "plotdata.csv"]
            .iter()
            .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
        identical += same as usize;
    }
    verdict(12, identical == configs.len(), format!("{identical}/{} experiment configurations reproduce byte-identically", configs.len()));
}
