//! Dimension priors π_p, slab densities g and the joint spike-and-slab prior.
//!
//! The prior draws a dimension s ~ π_p, then a support S uniformly among the
//! C(p, s) subsets of that size, then β_S with i.i.d. coordinates from g.

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, Model, SparseCoef};
use crate::numeric::{heavy_tail_kernel_mass, ln_choose, log_sum_exp};
use crate::quadrature::{integrate, integrate_with_breaks, QuadOptions};
use crate::twopiece::open_unit;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimKind {
    /// π_p(s) ∝ c^{−s} p^{−as}.
    Complexity { a: f64, c: f64 },
    /// Binomial(p, r) mixed over r ~ Beta(1, p^u).
    BetaBinomial { u: f64 },
    Explicit { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionPrior {
    kind: DimKind,
    p: usize,
    log_w: Vec<f64>,
}

impl DimensionPrior {
    pub fn new(kind: DimKind, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Domain("p must be positive".into()));
        }
        let mut log_w: Vec<f64> = match &kind {
            DimKind::Complexity { a, c } => {
                if !(*a > 0.0 && *c > 0.0) {
                    return Err(Error::Domain(format!("complexity prior needs a, c > 0 (a = {a}, c = {c})")));
                }
                let step = c.ln() + a * (p as f64).ln();
                (0..=p).map(|s| -(s as f64) * step).collect()
            }
            DimKind::BetaBinomial { u } => {
                if !(*u > 1.0) {
                    return Err(Error::Domain(format!("beta-binomial prior needs u > 1 (u = {u})")));
                }
                let b = (p as f64).powf(*u);
                let mut w = Vec::with_capacity(p + 1);
                let mut acc = 0.0;
                w.push(acc);
                for s in 1..=p {
                    acc += ((p - s + 1) as f64).ln() - ((p - s) as f64 + b).ln();
                    w.push(acc);
                }
                w
            }
            DimKind::Explicit { weights } => {
                if weights.len() != p + 1 {
                    return Err(Error::Dimension(format!("explicit prior needs {} weights, got {}", p + 1, weights.len())));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
                    return Err(Error::Domain("explicit weights must be finite, nonnegative and not all zero".into()));
                }
                weights.iter().map(|w| w.ln()).collect()
            }
        };
        let z = log_sum_exp(&log_w);
        for w in log_w.iter_mut() {
            *w -= z;
        }
        Ok(DimensionPrior { kind, p, log_w })
    }

    pub fn complexity(a: f64, c: f64, p: usize) -> Result<Self> {
        Self::new(DimKind::Complexity { a, c }, p)
    }

    pub fn beta_binomial(u: f64, p: usize) -> Result<Self> {
        Self::new(DimKind::BetaBinomial { u }, p)
    }

    pub fn explicit(weights: Vec<f64>, p: usize) -> Result<Self> {
        Self::new(DimKind::Explicit { weights }, p)
    }

    pub fn point_mass(s: usize, p: usize) -> Result<Self> {
        if s > p {
            return Err(Error::Domain(format!("s = {s} exceeds p = {p}")));
        }
        let mut w = vec![0.0; p + 1];
        w[s] = 1.0;
        Self::explicit(w, p)
    }

    pub fn kind(&self) -> &DimKind {
        &self.kind
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// log π_p(s).
    pub fn log_prob(&self, s: usize) -> Result<f64> {
        self.log_w
            .get(s)
            .copied()
            .ok_or_else(|| Error::Domain(format!("dimension {s} outside 0..={}", self.p)))
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_w
    }

    /// log π_p(s) − log C(p, s): the prior log-mass of one particular support.
    pub fn log_model_prior(&self, s: usize) -> f64 {
        match self.log_w.get(s) {
            Some(w) => w - ln_choose(self.p, s),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn sample_dim<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = open_unit(rng);
        let mut acc = 0.0;
        for (s, w) in self.log_w.iter().enumerate() {
            acc += w.exp();
            if u < acc {
                return s;
            }
        }
        self.log_w.iter().rposition(|w| *w > f64::NEG_INFINITY).unwrap_or(0)
    }

    /// Constants A1..A4 bounding the successive ratios π_p(s)/π_p(s−1).
    pub fn certify(&self) -> Result<DimPriorCertificate> {
        let p = self.p;
        let log_ratios: Vec<f64> = (1..=p).map(|s| self.log_w[s] - self.log_w[s - 1]).collect();
        if let Some(k) = log_ratios.iter().position(|r| !r.is_finite()) {
            return Err(Error::CertificateRefused(format!("π_p({}) / π_p({}) is not a positive finite ratio", k + 1, k)));
        }
        let min = log_ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ln_p = (p as f64).ln();
        let cert = match &self.kind {
            DimKind::Complexity { a, c } => DimPriorCertificate {
                a1: 1.0 / c,
                a2: 1.0 / c,
                a3: *a,
                a4: *a,
                p_power_decay: true,
            },
            DimKind::BetaBinomial { .. } if p >= 2 => DimPriorCertificate {
                a1: 1.0,
                a2: 1.0,
                a3: -min / ln_p,
                a4: -max / ln_p,
                p_power_decay: -max / ln_p > 0.0,
            },
            _ => DimPriorCertificate {
                a1: min.exp(),
                a2: max.exp(),
                a3: 0.0,
                a4: 0.0,
                p_power_decay: false,
            },
        };
        if !cert.holds(&log_ratios, p) {
            return Err(Error::CertificateRefused("fitted constants fail the numerical recheck".into()));
        }
        Ok(cert)
    }
}

/// Certifies A1·p^{−A3} ≤ π_p(s)/π_p(s−1) ≤ A2·p^{−A4} for s = 1..p.
/// `p_power_decay` is false when the exponents are zero, i.e. the ratios are
/// bounded but do not decay with p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimPriorCertificate {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub p_power_decay: bool,
}

impl DimPriorCertificate {
    pub fn holds(&self, log_ratios: &[f64], p: usize) -> bool {
        let ln_p = (p as f64).ln();
        let lo = self.a1.ln() - self.a3 * ln_p;
        let hi = self.a2.ln() - self.a4 * ln_p;
        let tol = 1e-10 * (1.0 + lo.abs().max(hi.abs()));
        log_ratios.iter().all(|&r| r >= lo - tol && r <= hi + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlabKind {
    /// g(x) = (λ/2)·exp(−λ|x|).
    Laplace { lambda: f64 },
    /// g(x) ∝ λ / (1 + |λx|^μ), μ > 3.
    HeavyTailed { lambda: f64, mu: f64 },
}

/// Inverse-CDF table for |u| under the density ∝ 1/(1 + |u|^μ), u = λx.
#[derive(Debug)]
struct TailTable {
    mu: f64,
    kernel_mass: f64,
    cut: f64,
    grid: Vec<f64>,
    // P(|u| ≤ grid[k])
    cdf: Vec<f64>,
}

const TABLE_CUT: f64 = 40.0;
const TABLE_CELLS: usize = 1600;

impl TailTable {
    fn new(mu: f64, kernel_mass: f64) -> Self {
        let half = |u: f64| 2.0 / (kernel_mass * (1.0 + u.powf(mu)));
        let grid: Vec<f64> = (0..=TABLE_CELLS).map(|k| TABLE_CUT * k as f64 / TABLE_CELLS as f64).collect();
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in grid.windows(2) {
            acc += integrate(half, w[0], w[1], QuadOptions::rel(1e-13)).value;
            cdf.push(acc);
        }
        TailTable { mu, kernel_mass, cut: TABLE_CUT, grid, cdf }
    }

    fn half_density(&self, u: f64) -> f64 {
        2.0 / (self.kernel_mass * (1.0 + u.powf(self.mu)))
    }

    fn sample_abs<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let inner = *self.cdf.last().expect("non-empty");
        let t = open_unit(rng);
        if t >= inner {
            // Pareto proposal on [cut, ∞) with exact rejection.
            loop {
                let v = open_unit(rng);
                let u = self.cut * v.powf(-1.0 / (self.mu - 1.0));
                let um = u.powf(self.mu);
                if open_unit(rng) < um / (1.0 + um) {
                    return u;
                }
            }
        }
        let k = self.cdf.partition_point(|&c| c <= t).clamp(1, self.cdf.len() - 1) - 1;
        let (a, b) = (self.grid[k], self.grid[k + 1]);
        let (ca, cb) = (self.cdf[k], self.cdf[k + 1]);
        let mut u = a + (b - a) * (t - ca) / (cb - ca);
        for _ in 0..2 {
            let f = ca + integrate(|x| self.half_density(x), a, u, QuadOptions::rel(1e-12)).value;
            u = (u - (f - t) / self.half_density(u)).clamp(a, b);
        }
        u
    }
}

/// A slab density with its log-normalizer cached.
#[derive(Debug, Clone)]
pub struct Slab {
    kind: SlabKind,
    log_norm: f64,
    table: Option<Arc<TailTable>>,
}

impl Slab {
    pub fn new(kind: SlabKind) -> Result<Self> {
        match kind {
            SlabKind::Laplace { lambda } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Domain(format!("slab λ must be positive, got {lambda}")));
                }
                Ok(Slab { kind, log_norm: (lambda / 2.0).ln(), table: None })
            }
            SlabKind::HeavyTailed { lambda, mu } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Domain(format!("slab λ must be positive, got {lambda}")));
                }
                if !(mu > 3.0 && mu.is_finite()) {
                    return Err(Error::Domain(format!("heavy-tailed slab needs μ > 3, got {mu}")));
                }
                let mass = 2.0 * integrate(|u: f64| 1.0 / (1.0 + u.powf(mu)), 0.0, f64::INFINITY, QuadOptions::rel(1e-12)).value;
                if (mass / heavy_tail_kernel_mass(mu) - 1.0).abs() > 1e-6 {
                    return Err(Error::Integral(format!("slab normalizer {mass} failed its recheck")));
                }
                Ok(Slab {
                    kind,
                    log_norm: lambda.ln() - mass.ln(),
                    table: Some(Arc::new(TailTable::new(mu, mass))),
                })
            }
        }
    }

    pub fn laplace(lambda: f64) -> Result<Self> {
        Self::new(SlabKind::Laplace { lambda })
    }

    pub fn heavy_tailed(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(SlabKind::HeavyTailed { lambda, mu })
    }

    pub fn kind(&self) -> SlabKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        match self.kind {
            SlabKind::Laplace { lambda } | SlabKind::HeavyTailed { lambda, .. } => lambda,
        }
    }

    pub fn is_laplace(&self) -> bool {
        matches!(self.kind, SlabKind::Laplace { .. })
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    /// log g(x) for a single coordinate.
    pub fn log_density(&self, x: f64) -> f64 {
        match self.kind {
            SlabKind::Laplace { lambda } => self.log_norm - lambda * x.abs(),
            SlabKind::HeavyTailed { lambda, mu } => self.log_norm - log1p_pow(lambda * x.abs(), mu),
        }
    }

    /// Σ_i log g(β_i).
    pub fn log_slab(&self, beta: &[f64]) -> f64 {
        beta.iter().map(|&b| self.log_density(b)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mag = match (&self.kind, &self.table) {
                (SlabKind::Laplace { lambda }, _) => -open_unit(rng).ln() / lambda,
                (SlabKind::HeavyTailed { lambda, .. }, Some(t)) => t.sample_abs(rng) / lambda,
                _ => unreachable!("heavy-tailed slab always carries its table"),
            };
            if mag > 0.0 {
                return sign * mag;
            }
        }
    }

    /// Variance of one slab coordinate.
    pub fn variance(&self) -> f64 {
        match self.kind {
            SlabKind::Laplace { lambda } => 2.0 / (lambda * lambda),
            SlabKind::HeavyTailed { lambda, .. } => {
                let g = |x: f64| 2.0 * x * x * self.log_density(x).exp();
                integrate_with_breaks(g, 0.0, f64::INFINITY, &[1.0 / lambda], QuadOptions::rel(1e-11)).value
            }
        }
    }
}

/// ln(1 + t^μ) for t ≥ 0 without overflow.
fn log1p_pow(t: f64, mu: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let l = mu * t.ln();
    if l > 40.0 {
        l + (-l).exp()
    } else {
        l.exp().ln_1p()
    }
}

/// Admissible range for the slab scale: ‖X‖/p ≤ λ ≤ 2λ̄ with
/// λ̄ = 2‖X‖√(log p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRange {
    pub lower: f64,
    pub upper: f64,
}

impl LambdaRange {
    pub fn new(x: &DesignMatrix) -> Self {
        let p = x.p() as f64;
        LambdaRange {
            lower: x.x_norm() / p,
            upper: 2.0 * lambda_bar(x),
        }
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lower && lambda <= self.upper
    }
}

/// λ̄ = 2‖X‖√(log p).
pub fn lambda_bar(x: &DesignMatrix) -> f64 {
    2.0 * x.x_norm() * (x.p() as f64).ln().sqrt()
}

/// ‖X‖/√n clamped into [`LambdaRange`].
pub fn default_lambda(x: &DesignMatrix) -> Result<f64> {
    if x.p() < 2 {
        return Err(Error::Domain("default λ needs p ≥ 2".into()));
    }
    let r = LambdaRange::new(x);
    Ok((x.x_norm() / (x.n() as f64).sqrt()).clamp(r.lower, r.upper))
}

/// log[π_p(s)/C(p,s)] + Σ_{i∈S} log g(β_i).
pub fn log_joint_prior(dp: &DimensionPrior, slab: &Slab, beta: &SparseCoef) -> Result<f64> {
    if beta.p() != dp.p() {
        return Err(Error::Dimension(format!("β has dimension {}, prior has p = {}", beta.p(), dp.p())));
    }
    let s = beta.s();
    Ok(dp.log_prob(s)? - ln_choose(dp.p(), s) + slab.log_slab(beta.values()))
}

/// One draw (S, β_S) from the joint prior.
pub fn sample_prior<R: Rng + ?Sized>(dp: &DimensionPrior, slab: &Slab, rng: &mut R) -> SparseCoef {
    let p = dp.p();
    let s = dp.sample_dim(rng);
    let mut idx = rand::seq::index::sample(rng, p, s).into_vec();
    idx.sort_unstable();
    let values: Vec<f64> = (0..s).map(|_| slab.sample(rng)).collect();
    SparseCoef::new(Model::new(idx, p).expect("sampled indices are valid"), values, p)
        .expect("slab draws are nonzero")
}

/// Mass that a product of s Laplace(λ) densities puts on {‖β‖₁ ≤ r}:
/// e^{−λr} Σ_{k≥s} (λr)^k/k!, the probability that a rate-λ Poisson process
/// has its s-th event before time r.
pub fn laplace_l1_ball_mass(s: usize, lambda: f64, r: f64) -> f64 {
    let x = lambda * r;
    if s == 0 {
        return 1.0;
    }
    // 1 − e^{−x} Σ_{k<s} x^k/k!
    let mut term = (-x).exp();
    let mut below = 0.0;
    for k in 0..s {
        below += term;
        term *= x / (k + 1) as f64;
    }
    if below < 0.5 {
        1.0 - below
    } else {
        // Sum the upper series directly to avoid cancellation.
        let mut total = 0.0;
        let mut k = s;
        loop {
            total += term;
            k += 1;
            term *= x / k as f64;
            if term < 1e-17 * total {
                break;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngHandle;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn complexity_ratio_exact() {
        let dp = DimensionPrior::complexity(1.5, 2.0, 20).unwrap();
        let step = -(2.0f64.ln() + 1.5 * 20f64.ln());
        for s in 1..=20 {
            let r = dp.log_prob(s).unwrap() - dp.log_prob(s - 1).unwrap();
            assert!((r - step).abs() < 1e-12);
        }
        assert!(dp.log_prob(21).is_err());
    }

    #[test]
    fn explicit_uniform() {
        let dp = DimensionPrior::explicit(vec![1.0; 8], 7).unwrap();
        for s in 0..=7 {
            assert!((dp.log_prob(s).unwrap() + 8f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn beta_binomial_matches_mixture_quadrature() {
        let (p, u) = (10usize, 1.5f64);
        let b = (p as f64).powf(u);
        let dp = DimensionPrior::beta_binomial(u, p).unwrap();
        for s in 0..=p {
            let s_f = s as f64;
            let f = |r: f64| {
                let log_binom = ln_choose(p, s) + s_f * r.ln() + (p as f64 - s_f) * (1.0 - r).ln();
                (log_binom + b.ln() + (b - 1.0) * (1.0 - r).ln()).exp()
            };
            let q = integrate(f, 0.0, 1.0, QuadOptions::rel(1e-12)).value;
            assert!((dp.log_prob(s).unwrap() - q.ln()).abs() < 1e-8, "s={s}");
        }
    }

    #[test]
    fn certificates() {
        let c = DimensionPrior::complexity(1.0, 1.0, 10).unwrap().certify().unwrap();
        assert_eq!(c.a4, 1.0);
        assert_eq!(c.a3, 1.0);
        assert_eq!(c.a1, 1.0);

        let geo: Vec<f64> = (0..=8).map(|s| 0.5f64.powi(s)).collect();
        let c = DimensionPrior::explicit(geo, 8).unwrap().certify().unwrap();
        assert!(!c.p_power_decay);
        assert!((c.a1 - 0.5).abs() < 1e-12 && (c.a2 - 0.5).abs() < 1e-12);

        let dp = DimensionPrior::beta_binomial(2.0, 50).unwrap();
        let c = dp.certify().unwrap();
        assert!(c.a4 > 1.0);
        // Recheck against weights built from Beta functions directly.
        let b = 2500.0f64;
        let ln_beta = |x: f64, y: f64| {
            use statrs::function::gamma::ln_gamma;
            ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)
        };
        let direct: Vec<f64> = (0..=50)
            .map(|s| ln_choose(50, s) + ln_beta(s as f64 + 1.0, 50.0 - s as f64 + b) - ln_beta(1.0, b))
            .collect();
        let ratios: Vec<f64> = (1..=50).map(|s| direct[s] - direct[s - 1]).collect();
        assert!(c.holds(&ratios, 50));

        let mut w = vec![1.0; 6];
        w[3] = 0.0;
        assert!(matches!(DimensionPrior::explicit(w, 5).unwrap().certify(), Err(Error::CertificateRefused(_))));
    }

    #[test]
    fn slab_values() {
        let s = Slab::laplace(2.0).unwrap();
        assert_eq!(s.log_slab(&[0.0]), 0.0);
        assert_eq!(s.log_slab(&[0.7]), s.log_slab(&[-0.7]));
        let h = Slab::heavy_tailed(1.0, 4.0).unwrap();
        let mass = integrate(|x: f64| 1.0 / (1.0 + x.powi(4)), f64::NEG_INFINITY, f64::INFINITY, QuadOptions::rel(1e-12)).value;
        let want = -(mass.ln()) - (1.0 + 0.7f64.powi(4)).ln();
        assert!((h.log_slab(&[0.7]) - want).abs() < 1e-6);
        assert!(Slab::heavy_tailed(1.0, 3.0).is_err());
    }

    #[test]
    fn heavy_tailed_variance_closed_form() {
        use std::f64::consts::PI;
        let (l, mu) = (1.7, 4.5);
        let h = Slab::heavy_tailed(l, mu).unwrap();
        let want = (PI / mu).sin() / (3.0 * PI / mu).sin() / (l * l);
        assert!((h.variance() / want - 1.0).abs() < 1e-8);
    }

    #[test]
    fn joint_prior_examples() {
        let dp = DimensionPrior::explicit(vec![1.0; 4], 3).unwrap();
        let slab = Slab::laplace(2.0).unwrap();
        assert_eq!(log_joint_prior(&dp, &slab, &SparseCoef::zero(3)).unwrap(), dp.log_prob(0).unwrap());
        let b = SparseCoef::new(Model::new(vec![1], 3).unwrap(), vec![0.5], 3).unwrap();
        let want = (0.25f64).ln() - 3f64.ln() + (-1.0f64).exp().ln();
        assert!((log_joint_prior(&dp, &slab, &b).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn default_lambda_sequence_model() {
        let x = DesignMatrix::identity(100);
        assert!((default_lambda(&x).unwrap() - 0.1).abs() < 1e-15);
        let x = DesignMatrix::new(DMatrix::from_element(100, 1000, 1.0)).unwrap();
        assert!((default_lambda(&x).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_priors_sample_extremes() {
        let slab = Slab::laplace(1.0).unwrap();
        let mut rng = RngHandle::new(1).rng();
        let zero = DimensionPrior::point_mass(0, 5).unwrap();
        let full = DimensionPrior::point_mass(5, 5).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_prior(&zero, &slab, &mut rng).s(), 0);
            assert_eq!(sample_prior(&full, &slab, &mut rng).s(), 5);
        }
    }

    #[test]
    fn dimension_frequencies_match() {
        let dp = DimensionPrior::complexity(1.0, 1.0, 6).unwrap();
        let slab = Slab::laplace(1.0).unwrap();
        let mut rng = RngHandle::new(11).rng();
        let n = 100_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            counts[sample_prior(&dp, &slab, &mut rng).s()] += 1;
        }
        for s in 0..=6 {
            let p = dp.log_prob(s).unwrap().exp();
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[s] as f64 - n as f64 * p).abs() <= 3.0 * sd + 1.0, "s={s}");
        }
    }

    #[test]
    fn heavy_tailed_sampler_follows_cdf() {
        let slab = Slab::heavy_tailed(2.0, 4.0).unwrap();
        let mut rng = RngHandle::new(5).rng();
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| slab.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |x: f64| {
            let tail = integrate(|t| slab.log_density(t).exp(), x.abs(), f64::INFINITY, QuadOptions::rel(1e-10)).value;
            if x < 0.0 { tail } else { 1.0 - tail }
        };
        let ks = (0..n)
            .step_by(97)
            .map(|i| {
                let f = cdf(xs[i]);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "ks={ks}");
    }

    fn nested_ball_mass(s: usize, lambda: f64, r: f64) -> f64 {
        // ∫_{x ≥ 0, Σx ≤ r} Π λe^{−λx}; symmetric orthants cancel the 2^{−s}.
        if s == 0 {
            return 1.0;
        }
        integrate(
            |x| lambda * (-lambda * x).exp() * nested_ball_mass(s - 1, lambda, r - x),
            0.0,
            r,
            QuadOptions::rel(1e-12),
        )
        .value
    }

    #[test]
    fn poisson_identity_against_quadrature() {
        for s in 1..=3 {
            for lr in [0.5, 1.0, 5.0] {
                let series = laplace_l1_ball_mass(s, 2.0, lr / 2.0);
                let quad = nested_ball_mass(s, 2.0, lr / 2.0);
                assert!((series / quad - 1.0).abs() < 1e-9, "s={s} λr={lr}");
            }
        }
    }

    proptest! {
        #[test]
        fn dimension_prior_normalized(a in 0.1f64..3.0, c in 0.1f64..5.0, u in 1.01f64..3.0, p in 1usize..300) {
            for dp in [DimensionPrior::complexity(a, c, p).unwrap(), DimensionPrior::beta_binomial(u, p).unwrap()] {
                let total: f64 = dp.log_probs().iter().map(|w| w.exp()).sum();
                prop_assert!((total - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn slab_symmetric(x in -50.0f64..50.0, l in 0.01f64..10.0, mu in 3.01f64..8.0) {
            let lap = Slab::laplace(l).unwrap();
            prop_assert_eq!(lap.log_density(x), lap.log_density(-x));
            let ht = Slab::heavy_tailed(l, mu).unwrap();
            prop_assert_eq!(ht.log_density(x), ht.log_density(-x));
        }
    }
}
