//! The LASSO, argmin ‖y − Xβ‖² + 2λ‖β‖₁, and its Laplace-prior posterior
//! in the sequence model.
//!
//! With the factor 2λ the per-coordinate update thresholds at λ:
//! β_j ← S(X_jᵀr_(j), λ)/‖X_j‖², where r_(j) is the partial residual.

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, Observation};
use crate::rng::RngHandle;
use crate::twopiece::{soft_threshold, TwoPiece};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Objective after each full sweep.
    pub objective_trace: Vec<f64>,
}

pub const DEFAULT_TOL: f64 = 1e-10;

pub fn lasso_objective(x: &DesignMatrix, y: &Observation, beta: &[f64], lambda: f64) -> f64 {
    let r = &y.y - x.matrix() * DVector::from_column_slice(beta);
    r.norm_squared() + 2.0 * lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the optimality conditions: |X_jᵀr − λ·sign β_j| on
/// the active set and (|X_jᵀr| − λ)₊ off it.
pub fn kkt_residual(x: &DesignMatrix, y: &Observation, beta: &[f64], lambda: f64) -> f64 {
    let r = &y.y - x.matrix() * DVector::from_column_slice(beta);
    let g = x.matrix().transpose() * r;
    beta.iter()
        .zip(g.iter())
        .map(|(&b, &gj)| if b != 0.0 { (gj - lambda * b.signum()).abs() } else { (gj.abs() - lambda).max(0.0) })
        .fold(0.0, f64::max)
}

pub fn lasso_fit(x: &DesignMatrix, y: &Observation, lambda: f64, tol: f64, max_iter: usize) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be nonnegative (got {lambda})")));
    }
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("y has length {}, X has {} rows", y.len(), x.n())));
    }
    let p = x.p();
    let xm = x.matrix();
    let sq: Vec<f64> = x.col_norms().iter().map(|c| c * c).collect();
    let mut beta = vec![0.0; p];
    let mut r = y.y.clone();
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, beta.clone());
    for it in 1..=max_iter {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let col = xm.column(j);
            let old = beta[j];
            let rho = col.dot(&r) + sq[j] * old;
            let new = soft_threshold(rho, lambda) / sq[j];
            if new != old {
                r.axpy(old - new, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        trace.push(r.norm_squared() + 2.0 * lambda * beta.iter().map(|b| b.abs()).sum::<f64>());
        let kkt = kkt_residual(x, y, &beta, lambda);
        if kkt < best.0 {
            best = (kkt, beta.clone());
        }
        if max_change <= tol || kkt <= tol {
            return Ok(LassoFit { beta_hat: beta, lambda, kkt_residual: kkt, iterations: it, objective_trace: trace });
        }
    }
    Err(Error::Convergence { iterations: max_iter, kkt: best.0, best: best.1 })
}

/// Exact draws from ∝ exp(−½‖y − β‖² − λ‖β‖₁): row k is draw k. Coordinate
/// j uses child stream j.
pub fn lasso_posterior_sample_seq(y: &[f64], lambda: f64, handle: RngHandle, n_draws: usize) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = y
        .par_iter()
        .enumerate()
        .map(|(j, &yj)| {
            let tp = TwoPiece::new(yj, 1.0, lambda);
            let mut rng = handle.child(j as u64).rng();
            (0..n_draws).map(|_| tp.sample(&mut rng)).collect()
        })
        .collect();
    DMatrix::from_fn(n_draws, y.len(), |k, j| cols[j][k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallMass {
    pub fraction: f64,
    pub se: f64,
}

/// Fraction of ℓ² norms not exceeding `radius`, with its binomial SE.
pub fn ball_mass_of_norms(norms: &[f64], radius: f64) -> BallMass {
    let n = norms.len().max(1) as f64;
    let f = norms.iter().filter(|v| **v <= radius).count() as f64 / n;
    BallMass { fraction: f, se: (f * (1.0 - f) / n).sqrt() }
}

pub fn small_ball_mass(draws: &DMatrix<f64>, radius: f64) -> BallMass {
    let norms: Vec<f64> = draws.row_iter().map(|r| r.norm()).collect();
    ball_mass_of_norms(&norms, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_with_breaks, QuadOptions};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn obs(v: &[f64]) -> Observation {
        Observation::new(DVector::from_vec(v.to_vec()))
    }

    fn random_instance(n: usize, p: usize, seed: u64) -> (DesignMatrix, Observation) {
        let mut rng = RngHandle::new(seed).rng();
        let x = DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))).unwrap();
        let y = Observation::new(DVector::from_fn(n, |i, _| if i % 3 == 0 { 2.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal)));
        (x, y)
    }

    #[test]
    fn identity_soft_threshold() {
        let f = lasso_fit(&DesignMatrix::identity(2), &obs(&[3.0, 0.5]), 1.0, DEFAULT_TOL, 1000).unwrap();
        assert_eq!(f.beta_hat, vec![2.0, 0.0]);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let (x, y) = random_instance(30, 5, 1);
        let f = lasso_fit(&x, &y, 0.0, DEFAULT_TOL, 100_000).unwrap();
        let b = DVector::from_vec(f.beta_hat);
        let res = x.gram() * &b - x.xty(&y.y);
        assert!(res.amax() <= 1e-8);
    }

    #[test]
    fn kkt_conditions_random() {
        for seed in 0..10 {
            let (x, y) = random_instance(25, 40, seed);
            let lambda = 3.0;
            let f = lasso_fit(&x, &y, lambda, DEFAULT_TOL, 100_000).unwrap();
            let r = &y.y - x.matrix() * DVector::from_vec(f.beta_hat.clone());
            for j in 0..40 {
                let g = x.matrix().column(j).dot(&r);
                assert!(lambda - g.abs() >= -1e-8);
                if f.beta_hat[j] != 0.0 {
                    assert!((g - lambda * f.beta_hat[j].signum()).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn objective_never_increases() {
        let (x, y) = random_instance(20, 30, 4);
        let f = lasso_fit(&x, &y, 1.0, DEFAULT_TOL, 100_000).unwrap();
        let start = lasso_objective(&x, &y, &[0.0; 30], 1.0);
        let mut prev = start;
        for v in &f.objective_trace {
            assert!(*v <= prev + 1e-9 * prev.abs());
            prev = *v;
        }
    }

    #[test]
    fn convergence_error_carries_iterate() {
        let (x, y) = random_instance(20, 30, 4);
        match lasso_fit(&x, &y, 0.5, 0.0, 2) {
            Err(Error::Convergence { iterations, best, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(best.len(), 30);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn zero_observation_symmetric_draws() {
        let d = lasso_posterior_sample_seq(&[0.0], 1.0, RngHandle::new(1), 100_000);
        let col = d.column(0);
        let mean = col.mean();
        let sd = col.variance().sqrt();
        assert!(mean.abs() < 3.0 * sd / (d.nrows() as f64).sqrt());
    }

    #[test]
    fn draws_match_quadrature_cdf() {
        let (yv, lambda) = (0.8, 1.3);
        let mut d: Vec<f64> = lasso_posterior_sample_seq(&[yv], lambda, RngHandle::new(2), 100_000).column(0).iter().copied().collect();
        d.sort_by(f64::total_cmp);
        let dens = |b: f64| (-0.5 * (yv - b) * (yv - b) - lambda * b.abs()).exp();
        let opts = QuadOptions::rel(1e-12);
        let z = integrate_with_breaks(dens, f64::NEG_INFINITY, f64::INFINITY, &[0.0], opts).value;
        let n = d.len() as f64;
        let mut ks: f64 = 0.0;
        for k in (0..d.len()).step_by(97) {
            let f = integrate_with_breaks(dens, f64::NEG_INFINITY, d[k], &[0.0], opts).value / z;
            ks = ks.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
        }
        assert!(ks <= 0.01, "ks={ks}");
    }

    #[test]
    fn no_penalty_draws_are_normal() {
        let d = lasso_posterior_sample_seq(&[1.5, -0.5], 0.0, RngHandle::new(3), 100_000);
        for (j, m) in [(0, 1.5), (1, -0.5)] {
            let c = d.column(j);
            let n = c.len() as f64;
            assert!((c.mean() - m).abs() < 3.0 / n.sqrt());
            assert!((c.variance() - 1.0).abs() < 3.0 * (2.0 / n).sqrt());
        }
    }

    #[test]
    fn ball_mass_edges() {
        let d = lasso_posterior_sample_seq(&[0.3, 0.1, -0.2], 1.0, RngHandle::new(4), 1000);
        assert_eq!(small_ball_mass(&d, f64::INFINITY).fraction, 1.0);
        assert_eq!(small_ball_mass(&d, 0.0).fraction, 0.0);
    }

    #[test]
    fn posterior_mode_equals_lasso() {
        // The mode of the two-piece law is the soft-threshold value.
        let y = [2.5, -0.4, 0.9, -3.1];
        let lambda = 1.0;
        let f = lasso_fit(&DesignMatrix::identity(4), &obs(&y), lambda, DEFAULT_TOL, 1000).unwrap();
        for (j, &yj) in y.iter().enumerate() {
            assert!((TwoPiece::new(yj, 1.0, lambda).mode() - f.beta_hat[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scaling_homogeneity(seed in 0u64..1000, t in 0.1f64..10.0, lambda in 0.1f64..5.0) {
            let (x, y) = random_instance(15, 8, seed);
            let a = lasso_fit(&x, &y, lambda, 1e-13, 200_000).unwrap();
            let ys = Observation::new(&y.y * t);
            let b = lasso_fit(&x, &ys, t * lambda, 1e-13, 200_000).unwrap();
            for (u, v) in a.beta_hat.iter().zip(&b.beta_hat) {
                prop_assert!((t * u - v).abs() <= 1e-8 * t.max(1.0) * (1.0 + u.abs()));
            }
        }

        #[test]
        fn kkt_holds_at_solution(seed in 0u64..1000, lambda in 0.05f64..5.0) {
            let (x, y) = random_instance(12, 20, seed);
            let f = lasso_fit(&x, &y, lambda, DEFAULT_TOL, 200_000).unwrap();
            prop_assert!(kkt_residual(&x, &y, &f.beta_hat, lambda) <= 1e-6);
        }
    }
}
