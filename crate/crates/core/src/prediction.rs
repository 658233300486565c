//! Prediction-oriented quantities: the prior constant C_π, the oracle
//! quantity D_β, the rate ρ_n for heavy-tailed slabs, and the improper
//! subspace prior Ξ with its closed-form posterior.
//!
//! Under Ξ a subspace V of dimension t is chosen with probability
//! π_n(t)/#{V′: dim V′ = t}, and γ | V is Lebesgue on V. Integrating the
//! Gaussian likelihood over V gives the weight
//!
//!   log w(V) = log π_n(t) − log #{dim = t} + (t/2) log 2π + ½‖P_V y‖²
//!
//! relative to e^{−½‖y‖²}, and γ | V, Y ~ N(P_V y, P_V).

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, Model, SparseCoef};
use crate::numeric::{count_subsets_up_to, ln_choose, log_sum_exp, LN_2PI};
use crate::priors::{DimensionPrior, Slab, SlabKind};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::rng::RngHandle;
use crate::twopiece::open_unit;
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// log C_π = log Σ_s 9^s C(p,s)^{1/2} π_p(s)^{1/2}.
pub fn log_c_pi(dp: &DimensionPrior) -> f64 {
    let p = dp.p();
    let terms: Vec<f64> = (0..=p)
        .map(|s| s as f64 * 9f64.ln() + 0.5 * ln_choose(p, s) + 0.5 * dp.log_probs()[s])
        .collect();
    log_sum_exp(&terms)
}

pub fn c_pi(dp: &DimensionPrior) -> f64 {
    log_c_pi(dp).exp()
}

/// KL(G(· − t), G) for one coordinate of the slab, by quadrature.
pub fn slab_shift_kl(slab: &Slab, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let f = |u: f64| {
        let lg = slab.log_density(u);
        lg.exp() * (lg - slab.log_density(u + t))
    };
    let r = integrate_with_breaks(f, f64::NEG_INFINITY, f64::INFINITY, &[-t, 0.0], QuadOptions::rel(1e-11));
    if !r.value.is_finite() || !r.converged {
        return Err(Error::Integral(format!("shift divergence at t = {t} did not converge")));
    }
    Ok(r.value.max(0.0))
}

/// log D_β = log C(p, s) − log π_p(s) + KL(G_S(· − β_S), G_S) + ½∫‖X_Sb‖² dG_S(b).
pub fn log_d(beta: &SparseCoef, slab: &Slab, x: &DesignMatrix, dp: &DimensionPrior) -> Result<f64> {
    let p = x.p();
    if beta.p() != p || dp.p() != p {
        return Err(Error::Dimension("β, prior and design disagree on p".into()));
    }
    let s = beta.s();
    let mut kl = 0.0;
    for &v in beta.values() {
        kl += slab_shift_kl(slab, v)?;
    }
    let g = x.gram();
    let trace: f64 = beta.model().indices().iter().map(|&j| g[(j, j)]).sum();
    Ok(ln_choose(p, s) - dp.log_prob(s)? + kl + 0.5 * trace * slab.variance())
}

/// ρ_n(β) = |S_β| log p ∨ Σ_{i∈S_β} log(1 + ‖X‖^μ |β_i|^μ).
pub fn rho_n(beta: &SparseCoef, x: &DesignMatrix, slab: &Slab) -> Result<f64> {
    let mu = match slab.kind() {
        SlabKind::HeavyTailed { mu, .. } => mu,
        SlabKind::Laplace { .. } => return Err(Error::Domain("ρ_n is defined for the heavy-tailed slab".into())),
    };
    let dim = beta.s() as f64 * (x.p() as f64).ln();
    let xn = x.x_norm();
    let tail: f64 = beta.values().iter().map(|b| (mu * (xn * b.abs()).ln()).exp().ln_1p()).sum();
    Ok(dim.max(tail))
}

/// The radius 7‖X(β* − β⁰)‖ + 4√log(C_π² D_{β*}) + 8√r around Xβ⁰.
pub fn oracle_radius(misfit: f64, log_c_pi: f64, log_d: f64, r: f64) -> f64 {
    7.0 * misfit + 4.0 * (2.0 * log_c_pi + log_d).max(0.0).sqrt() + 8.0 * r.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    /// Orthonormal n × t basis.
    pub basis: DMatrix<f64>,
    pub t: usize,
    /// First support (in size-then-lexicographic order) spanning it.
    pub support: Model,
}

impl Subspace {
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.t == 0 {
            return DVector::zeros(v.len());
        }
        &self.basis * (self.basis.transpose() * v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceFamily {
    pub members: Vec<Subspace>,
    pub dedup_tol: f64,
    pub n: usize,
}

impl SubspaceFamily {
    pub fn count_by_dim(&self) -> Vec<usize> {
        let mut c = vec![0; self.n + 1];
        for m in &self.members {
            c[m.t] += 1;
        }
        c
    }
}

pub const DEFAULT_DEDUP_TOL: f64 = 1e-8;
const POWER_STEPS: usize = 50;

/// Orthonormal basis of span(X_S) from the SVD, keeping singular values
/// above 1e−10·‖X‖.
pub fn span_basis(x: &DesignMatrix, model: &Model) -> DMatrix<f64> {
    let n = x.n();
    if model.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    let xs = x.columns(model.indices());
    let svd = xs.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let tol = 1e-10 * x.x_norm();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > tol).collect();
    DMatrix::from_fn(n, keep.len(), |i, k| u[(i, keep[k])])
}

/// dim span(X_S).
pub fn span_dimension(x: &DesignMatrix, model: &Model) -> usize {
    span_basis(x, model).ncols()
}

fn start_vector(n: usize) -> DVector<f64> {
    let mut rng = RngHandle::with_stream(0x5eed, 7).rng();
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// ‖P_a − P_b‖ in operator norm by power iteration.
pub fn projection_distance(a: &Subspace, b: &Subspace, start: &DVector<f64>) -> f64 {
    let apply = |v: &DVector<f64>| a.project(v) - b.project(v);
    let mut v = start.normalize();
    let mut est = 0.0;
    for _ in 0..POWER_STEPS {
        let w = apply(&v);
        est = w.norm();
        if est == 0.0 {
            return 0.0;
        }
        v = w / est;
    }
    est
}

pub fn enumerate_subspaces(x: &DesignMatrix, t_max: usize, dedup_tol: f64, budget: f64) -> Result<SubspaceFamily> {
    let p = x.p();
    let n = x.n();
    let t_max = t_max.min(p);
    let needed = count_subsets_up_to(p, t_max);
    if needed > budget {
        return Err(Error::budget("subspace enumeration", needed, budget));
    }
    let supports: Vec<Model> = (0..=t_max).flat_map(|k| (0..p).combinations(k)).map(Model::from_unsorted).collect();
    let spans: Vec<Subspace> = supports
        .into_par_iter()
        .map(|m| {
            let basis = span_basis(x, &m);
            Subspace { t: basis.ncols(), basis, support: m }
        })
        .collect();
    // Sort key ‖P_V z‖² moves by at most 2‖z‖²·‖P − P′‖, so equal spans land
    // within a window of that width.
    let z = start_vector(n);
    let z2 = z.norm_squared();
    let keys: Vec<f64> = spans.par_iter().map(|s| s.project(&z).norm_squared()).collect();
    let window = 2.0 * z2 * dedup_tol;
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| spans[a].t.cmp(&spans[b].t).then(keys[a].total_cmp(&keys[b])).then(a.cmp(&b)));
    let probe = start_vector(n + 1).rows(1, n).into_owned();
    let mut duplicate = vec![false; spans.len()];
    for (pos, &i) in order.iter().enumerate() {
        if duplicate[i] {
            continue;
        }
        for &j in order[pos + 1..].iter() {
            if spans[j].t != spans[i].t || keys[j] - keys[i] > window {
                break;
            }
            if j > i && !duplicate[j] && projection_distance(&spans[i], &spans[j], &probe) <= dedup_tol {
                duplicate[j] = true;
            } else if j < i && !duplicate[j] && projection_distance(&spans[i], &spans[j], &probe) <= dedup_tol {
                duplicate[i] = true;
                break;
            }
        }
    }
    let members = spans.into_iter().zip(duplicate).filter(|(_, d)| !d).map(|(s, _)| s).collect();
    Ok(SubspaceFamily { members, dedup_tol, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspacePosterior {
    pub log_weights: Vec<f64>,
    pub d: f64,
    cumulative: Vec<f64>,
}

/// log π_n(t) for t = 0..=n.
pub fn log_pi_n(n: usize, p: usize, d: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..=n).map(|t| -d * t as f64 * (p as f64).ln()).collect();
    let z = log_sum_exp(&raw);
    raw.iter().map(|r| r - z).collect()
}

pub fn subspace_posterior(fam: &SubspaceFamily, y: &DVector<f64>, d: f64, p: usize) -> Result<SubspacePosterior> {
    if fam.members.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if !(d >= 4.0) {
        return Err(Error::Domain(format!("subspace prior needs d ≥ 4 (got {d})")));
    }
    if y.len() != fam.n {
        return Err(Error::Dimension(format!("y has length {}, family lives in R^{}", y.len(), fam.n)));
    }
    let counts = fam.count_by_dim();
    let lp = log_pi_n(fam.n, p, d);
    let mut lw: Vec<f64> = fam
        .members
        .par_iter()
        .map(|v| lp[v.t] - (counts[v.t] as f64).ln() + 0.5 * v.t as f64 * LN_2PI + 0.5 * v.project(y).norm_squared())
        .collect();
    let z = log_sum_exp(&lw);
    lw.iter_mut().for_each(|w| *w -= z);
    let mut acc = 0.0;
    let cumulative = lw.iter().map(|w| {
        acc += w.exp();
        acc
    }).collect();
    Ok(SubspacePosterior { log_weights: lw, d, cumulative })
}

/// γ draws: V by weight, then γ = P_V y + B z with z ~ N(0, I_t). Draw i
/// uses child stream i.
pub fn subspace_predict_sample(fam: &SubspaceFamily, sp: &SubspacePosterior, y: &DVector<f64>, handle: RngHandle, n_draws: usize) -> Vec<DVector<f64>> {
    (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = handle.child(i as u64).rng();
            let u = open_unit(&mut rng) * sp.cumulative.last().copied().unwrap_or(1.0);
            let k = sp.cumulative.partition_point(|&c| c <= u).min(fam.members.len() - 1);
            let v = &fam.members[k];
            if v.t == 0 {
                return DVector::zeros(fam.n);
            }
            let z = DVector::from_fn(v.t, |_, _| rng.sample::<f64, _>(StandardNormal));
            v.project(y) + &v.basis * z
        })
        .collect()
}

/// The constant c in N^{−(r−2)/4}e^{cd} from the Markov bound with
/// u = 1/4 + 1/(2r): c = −½ log(1/2 − 1/r).
pub fn chisq_max_constant(r: f64) -> f64 {
    -0.5 * (0.5 - 1.0 / r).ln()
}

pub fn chisq_max_bound(n_sets: usize, d: usize, r: f64) -> f64 {
    (n_sets as f64).powf(-(r - 2.0) / 4.0) * (chisq_max_constant(r) * d as f64).exp()
}

/// Empirical P(max of `n_sets` independent χ²(d) > r log N) over `reps`
/// replications; replication k uses child stream k.
pub fn chisq_max_exceedance(n_sets: usize, d: usize, r: f64, reps: usize, handle: RngHandle) -> f64 {
    let chi = ChiSquared::new(d as f64).expect("positive degrees of freedom");
    let thresh = r * (n_sets as f64).ln();
    let hits: usize = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = handle.child(k as u64).rng();
            (0..n_sets).any(|_| chi.sample(&mut rng) > thresh) as usize
        })
        .sum();
    hits as f64 / reps as f64
}
