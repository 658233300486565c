//! Trans-dimensional Metropolis–Hastings over (S, β_S).
//!
//! Each sweep proposes one add, delete or swap move and then refreshes β_S
//! with one within-model sweep. An inserted coordinate is drawn from its
//! full conditional ∝ N(m, v)·g given the current residual, so under a
//! Laplace slab the add/delete acceptance ratio does not depend on the
//! drawn value:
//!
//!   π_p(s+1)C(p,s)/(π_p(s)C(p,s+1)) · (λ/2)·Z(m, v)·e^{m²/2v} · (P_del/(s+1))/(P_add/(p−s)).

use crate::error::{Error, Result};
use crate::model::{DesignMatrix, Model, Observation, SparseCoef, RANK_TOL};
use crate::numeric::LN_2PI;
use crate::priors::{DimensionPrior, Slab};
use crate::rng::{RngHandle, SbRng};
use crate::twopiece::{open_unit, TwoPiece};
use crate::within::draw_conditional;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub add: f64,
    pub delete: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs { add: 0.4, delete: 0.4, swap: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total sweeps including burn-in.
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub move_probs: MoveProbs,
    pub rng: RngHandle,
    pub start: Option<Model>,
}

impl ChainConfig {
    pub fn new(n_sweeps: usize, burn_in: usize, rng: RngHandle) -> Self {
        ChainConfig { n_sweeps, burn_in, thin: 1, move_probs: MoveProbs::default(), rng, start: None }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.move_probs;
        if [m.add, m.delete, m.swap].iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (m.add + m.delete + m.swap - 1.0).abs() > 1e-12 {
            return Err(Error::Config("move probabilities must be nonnegative and sum to 1".into()));
        }
        if self.burn_in >= self.n_sweeps {
            return Err(Error::Config(format!("burn_in {} must be below n_sweeps {}", self.burn_in, self.n_sweeps)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Add,
    Delete,
    Swap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub states: Vec<SparseCoef>,
    pub moves: BTreeMap<MoveKind, MoveStats>,
    pub visits: BTreeMap<Model, u64>,
    pub rank_rejections: u64,
    /// Blocks of 1000 sweeps in which more than 99.9% of moves were rejected.
    pub mixing_warnings: Vec<String>,
    /// Kept post-burn-in sweeps per chain, in merge order.
    pub chain_lengths: Vec<usize>,
}

impl ChainOutput {
    fn empty() -> Self {
        ChainOutput {
            states: Vec::new(),
            moves: BTreeMap::new(),
            visits: BTreeMap::new(),
            rank_rejections: 0,
            mixing_warnings: Vec::new(),
            chain_lengths: Vec::new(),
        }
    }

    pub fn acceptance_rate(&self, kind: MoveKind) -> f64 {
        self.moves.get(&kind).map_or(0.0, MoveStats::rate)
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.values().sum()
    }

    /// Visit frequencies of each model.
    pub fn visit_frequencies(&self) -> Vec<(Model, f64)> {
        let t = self.total_visits().max(1) as f64;
        self.visits.iter().map(|(m, c)| (m.clone(), *c as f64 / t)).collect()
    }

    /// Combines two outputs; associative, and states keep chain order.
    pub fn merge(mut self, other: ChainOutput) -> ChainOutput {
        self.states.extend(other.states);
        for (k, v) in other.moves {
            let e = self.moves.entry(k).or_default();
            e.proposed += v.proposed;
            e.accepted += v.accepted;
        }
        for (m, c) in other.visits {
            *self.visits.entry(m).or_insert(0) += c;
        }
        self.rank_rejections += other.rank_rejections;
        self.mixing_warnings.extend(other.mixing_warnings);
        self.chain_lengths.extend(other.chain_lengths);
        self
    }

    /// The kept states of chain `k`.
    pub fn chain(&self, k: usize) -> &[SparseCoef] {
        let start: usize = self.chain_lengths[..k].iter().sum();
        &self.states[start..start + self.chain_lengths[k]]
    }

    /// Writes the kept states as CSV rows (chain, index, support, values).
    pub fn write_states<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["chain", "draw", "support", "values"]).map_err(csv_err)?;
        for k in 0..self.chain_lengths.len() {
            for (i, s) in self.chain(k).iter().enumerate() {
                let vals = s.values().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
                wr.write_record([k.to_string(), i.to_string(), s.model().to_string(), vals]).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// log g(b) − log q(b) + (b·m − b²/2)/v: the β-dependent part of the
/// insertion ratio when b is proposed from the full conditional q.
pub fn log_insert_factor(slab: &Slab, m: f64, v: f64, b: f64) -> f64 {
    if slab.is_laplace() {
        slab.log_normalizer() + TwoPiece::new(m, v, slab.lambda()).log_normalizer() + 0.5 * m * m / v
    } else {
        slab.log_density(b) + 0.5 * m * m / v + 0.5 * (LN_2PI + v.ln())
    }
}

fn propose_value<R: Rng + ?Sized>(slab: &Slab, m: f64, v: f64, rng: &mut R) -> f64 {
    if slab.is_laplace() {
        TwoPiece::new(m, v, slab.lambda()).sample(rng)
    } else {
        m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }
}

/// A single chain positioned at (S, β).
pub struct Chain<'a> {
    x: &'a DesignMatrix,
    xty: DVector<f64>,
    dp: &'a DimensionPrior,
    slab: &'a Slab,
    probs: MoveProbs,
    cap: usize,
    sequence: bool,
    model: Model,
    beta: Vec<f64>,
    pub rank_rejections: u64,
}

impl<'a> Chain<'a> {
    pub fn new(x: &'a DesignMatrix, y: &Observation, dp: &'a DimensionPrior, slab: &'a Slab, probs: MoveProbs) -> Result<Self> {
        if y.len() != x.n() {
            return Err(Error::Dimension(format!("y has length {}, X has {} rows", y.len(), x.n())));
        }
        if dp.p() != x.p() {
            return Err(Error::Dimension(format!("prior has p = {}, design has {}", dp.p(), x.p())));
        }
        Ok(Chain {
            x,
            xty: x.xty(&y.y),
            dp,
            slab,
            probs,
            cap: x.n().min(x.p()),
            sequence: x.identity_scale().is_some(),
            model: Model::empty(),
            beta: vec![0.0; x.p()],
            rank_rejections: 0,
        })
    }

    /// Moves to `model` with coefficients `values`.
    pub fn set_state(&mut self, model: Model, values: &[f64]) {
        self.beta.iter_mut().for_each(|b| *b = 0.0);
        for (&j, &v) in model.indices().iter().zip(values) {
            self.beta[j] = v;
        }
        self.model = model;
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> SparseCoef {
        let vals: Vec<f64> = self.model.indices().iter().map(|&j| self.beta[j]).collect();
        SparseCoef::from_model_values(&self.model, &vals, self.x.p())
    }

    /// Conditional of coordinate j given β on S minus `skip`.
    fn conditional(&self, j: usize, skip: Option<usize>) -> (f64, f64) {
        let g = self.x.gram();
        let gjj = g[(j, j)];
        let mut acc = self.xty[j];
        for &k in self.model.indices() {
            if k != j && Some(k) != skip {
                acc -= g[(j, k)] * self.beta[k];
            }
        }
        (acc / gjj, 1.0 / gjj)
    }

    fn full_rank_with(&self, skip: Option<usize>, j: usize) -> bool {
        if self.sequence {
            return true;
        }
        let base: Vec<usize> = self.model.indices().iter().copied().filter(|&k| Some(k) != skip).collect();
        if base.is_empty() {
            return true;
        }
        let g = self.x.gram();
        let Some(chol) = self.x.gram_sub(&base).cholesky() else { return false };
        let cross = DVector::from_iterator(base.len(), base.iter().map(|&k| g[(k, j)]));
        let sol = chol.solve(&cross);
        g[(j, j)] - cross.dot(&sol) >= RANK_TOL * g[(j, j)]
    }

    fn log_dim_ratio(&self, s: usize) -> f64 {
        self.dp.log_model_prior(s + 1) - self.dp.log_model_prior(s)
    }

    /// One trans-dimensional proposal; returns the move kind and whether it
    /// was accepted.
    pub fn propose(&mut self, rng: &mut SbRng) -> (MoveKind, bool) {
        let p = self.x.p();
        let s = self.model.s();
        let u = open_unit(rng);
        let kind = if u < self.probs.add {
            MoveKind::Add
        } else if u < self.probs.add + self.probs.delete {
            MoveKind::Delete
        } else {
            MoveKind::Swap
        };
        let accepted = match kind {
            MoveKind::Add => {
                if s >= self.cap || s == p {
                    false
                } else {
                    let j = nth_outside(&self.model, rng.random_range(0..p - s));
                    if !self.full_rank_with(None, j) {
                        self.rank_rejections += 1;
                        false
                    } else {
                        let (m, v) = self.conditional(j, None);
                        let b = propose_value(self.slab, m, v, rng);
                        let la = self.log_dim_ratio(s) + log_insert_factor(self.slab, m, v, b)
                            + (self.probs.delete / (s + 1) as f64).ln()
                            - (self.probs.add / (p - s) as f64).ln();
                        let ok = accept(la, rng);
                        if ok {
                            self.beta[j] = b;
                            self.model = self.model.with(j);
                        }
                        ok
                    }
                }
            }
            MoveKind::Delete => {
                if s == 0 {
                    false
                } else {
                    let j = self.model.indices()[rng.random_range(0..s)];
                    let (m, v) = self.conditional(j, None);
                    let la = -(self.log_dim_ratio(s - 1)
                        + log_insert_factor(self.slab, m, v, self.beta[j])
                        + (self.probs.delete / s as f64).ln()
                        - (self.probs.add / (p - s + 1) as f64).ln());
                    let ok = accept(la, rng);
                    if ok {
                        self.beta[j] = 0.0;
                        self.model = self.model.without(j);
                    }
                    ok
                }
            }
            MoveKind::Swap => {
                if s == 0 || s == p {
                    false
                } else {
                    let i = self.model.indices()[rng.random_range(0..s)];
                    let j = nth_outside(&self.model, rng.random_range(0..p - s));
                    if !self.full_rank_with(Some(i), j) {
                        self.rank_rejections += 1;
                        false
                    } else {
                        let (mi, vi) = self.conditional(i, None);
                        let (mj, vj) = self.conditional(j, Some(i));
                        let b = propose_value(self.slab, mj, vj, rng);
                        let la = log_insert_factor(self.slab, mj, vj, b) - log_insert_factor(self.slab, mi, vi, self.beta[i]);
                        let ok = accept(la, rng);
                        if ok {
                            self.beta[i] = 0.0;
                            self.beta[j] = b;
                            self.model = self.model.without(i).with(j);
                        }
                        ok
                    }
                }
            }
        };
        (kind, accepted)
    }

    /// Refreshes every coordinate of β_S once.
    pub fn within_sweep(&mut self, rng: &mut SbRng) {
        for t in 0..self.model.s() {
            let j = self.model.indices()[t];
            let (m, v) = self.conditional(j, None);
            self.beta[j] = draw_conditional(self.slab, m, v, self.beta[j], rng);
        }
    }

    pub fn sweep(&mut self, rng: &mut SbRng) -> (MoveKind, bool) {
        let r = self.propose(rng);
        self.within_sweep(rng);
        r
    }
}

fn accept(log_ratio: f64, rng: &mut SbRng) -> bool {
    log_ratio >= 0.0 || open_unit(rng).ln() < log_ratio
}

/// The k-th index (0-based) not in `model`.
fn nth_outside(model: &Model, k: usize) -> usize {
    let mut k = k;
    let mut prev = 0;
    for &i in model.indices() {
        let gap = i - prev;
        if k < gap {
            return prev + k;
        }
        k -= gap;
        prev = i + 1;
    }
    prev + k
}

const MIX_BLOCK: usize = 1000;

pub fn run_mcmc(x: &DesignMatrix, y: &Observation, dp: &DimensionPrior, slab: &Slab, cfg: &ChainConfig) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut chain = Chain::new(x, y, dp, slab, cfg.move_probs)?;
    if let Some(start) = &cfg.start {
        if start.indices().last().is_some_and(|&j| j >= x.p()) || start.s() > chain.cap {
            return Err(Error::Config(format!("start model {start} is not admissible")));
        }
        let xty = x.xty(&y.y);
        let fit = crate::model::RestrictedFit::new(x, &xty, start)?;
        chain.set_state(start.clone(), fit.beta_hat.as_slice());
    }
    let mut rng = cfg.rng.rng();
    let mut out = ChainOutput::empty();
    let mut block_rejects = 0;
    for sweep in 0..cfg.n_sweeps {
        let (kind, ok) = chain.sweep(&mut rng);
        let st = out.moves.entry(kind).or_default();
        st.proposed += 1;
        st.accepted += ok as u64;
        if !ok {
            block_rejects += 1;
        }
        if (sweep + 1) % MIX_BLOCK == 0 {
            if block_rejects * 1000 > 999 * MIX_BLOCK {
                out.mixing_warnings.push(format!(
                    "MixingWarning: {block_rejects} of {MIX_BLOCK} proposals rejected in sweeps {}..{}",
                    sweep + 1 - MIX_BLOCK,
                    sweep + 1
                ));
            }
            block_rejects = 0;
        }
        if sweep >= cfg.burn_in {
            *out.visits.entry(chain.model().clone()).or_insert(0) += 1;
            if (sweep - cfg.burn_in) % cfg.thin == 0 {
                out.states.push(chain.state());
            }
        }
    }
    out.rank_rejections = chain.rank_rejections;
    out.chain_lengths.push(out.states.len());
    Ok(out)
}

/// Runs `n_chains` chains in parallel on child streams of `cfg.rng` and
/// merges them in chain order.
pub fn run_chains(
    x: &DesignMatrix,
    y: &Observation,
    dp: &DimensionPrior,
    slab: &Slab,
    cfg: &ChainConfig,
    n_chains: usize,
) -> Result<ChainOutput> {
    let outs: Vec<Result<ChainOutput>> = (0..n_chains)
        .into_par_iter()
        .map(|k| {
            let c = ChainConfig { rng: cfg.rng.child(k as u64), ..cfg.clone() };
            run_mcmc(x, y, dp, slab, &c)
        })
        .collect();
    let mut merged = ChainOutput::empty();
    for o in outs {
        merged = merged.merge(o?);
    }
    Ok(merged)
}

/// Model-space transition matrix of one proposal in the sequence model with
/// a Laplace slab, where acceptance does not depend on β. Rows and columns
/// follow `models`; the within-model sweep leaves S unchanged.
pub fn sequence_model_kernel(
    yhat: &[f64],
    scale: f64,
    dp: &DimensionPrior,
    slab: &Slab,
    probs: MoveProbs,
    models: &[Model],
) -> Result<DMatrix<f64>> {
    if !slab.is_laplace() {
        return Err(Error::Domain("the model-space kernel needs a Laplace slab".into()));
    }
    let p = yhat.len();
    let v = 1.0 / (scale * scale);
    let f: Vec<f64> = yhat.iter().map(|&m| log_insert_factor(slab, m, v, 0.0)).collect();
    let pos: BTreeMap<&Model, usize> = models.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let n = models.len();
    let mut k = DMatrix::zeros(n, n);
    for (r, m) in models.iter().enumerate() {
        let s = m.s();
        let mut leave = 0.0;
        let mut add_to = |target: Model, prob: f64, k: &mut DMatrix<f64>| -> Result<()> {
            let c = *pos.get(&target).ok_or_else(|| Error::Domain(format!("model {target} missing from the kernel state space")))?;
            k[(r, c)] += prob;
            leave += prob;
            Ok(())
        };
        let ratio = |s: usize| dp.log_model_prior(s + 1) - dp.log_model_prior(s);
        if s < p {
            for j in (0..p).filter(|j| !m.contains(*j)) {
                let la = ratio(s) + f[j] + (probs.delete / (s + 1) as f64).ln() - (probs.add / (p - s) as f64).ln();
                add_to(m.with(j), probs.add / (p - s) as f64 * la.exp().min(1.0), &mut k)?;
            }
        }
        if s > 0 {
            for &j in m.indices() {
                let la = -(ratio(s - 1) + f[j] + (probs.delete / s as f64).ln() - (probs.add / (p - s + 1) as f64).ln());
                add_to(m.without(j), probs.delete / s as f64 * la.exp().min(1.0), &mut k)?;
            }
        }
        if s > 0 && s < p {
            for &i in m.indices() {
                for j in (0..p).filter(|j| !m.contains(*j)) {
                    let la = f[j] - f[i];
                    add_to(m.without(i).with(j), probs.swap / (s * (p - s)) as f64 * la.exp().min(1.0), &mut k)?;
                }
            }
        }
        k[(r, r)] += 1.0 - leave;
    }
    Ok(k)
}

/// Geyer initial-positive-sequence effective sample size.
pub fn effective_sample_size(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 2 {
        return n as f64;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let acf = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = -1.0;
    let mut t = 0;
    let mut prev = f64::INFINITY;
    while t + 1 < n {
        let pair = acf(t) + acf(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

/// Split-chain potential scale reduction.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    let m = halves.len() as f64;
    if m < 2.0 {
        return f64::NAN;
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub chains: usize,
    pub ess_dimension: f64,
    pub ess_inclusion: Vec<f64>,
    pub rhat_dimension: Option<f64>,
    pub acceptance: BTreeMap<MoveKind, f64>,
    pub rank_rejections: u64,
    pub warnings: Vec<String>,
}

pub fn chain_diagnostics(out: &ChainOutput, p: usize) -> ChainReport {
    let k = out.chain_lengths.len();
    let dims: Vec<Vec<f64>> = (0..k).map(|c| out.chain(c).iter().map(|s| s.s() as f64).collect()).collect();
    let ess_dimension = dims.iter().map(|d| effective_sample_size(d)).sum();
    let ess_inclusion = (0..p)
        .map(|j| {
            (0..k)
                .map(|c| {
                    let tr: Vec<f64> = out.chain(c).iter().map(|s| s.model().contains(j) as u8 as f64).collect();
                    effective_sample_size(&tr)
                })
                .sum()
        })
        .collect();
    let mut warnings = out.mixing_warnings.clone();
    let rhat_dimension = if k >= 2 {
        Some(split_rhat(&dims))
    } else {
        warnings.push("single chain: split R-hat not reported".to_string());
        None
    };
    ChainReport {
        chains: k,
        ess_dimension,
        ess_inclusion,
        rhat_dimension,
        acceptance: out.moves.iter().map(|(kind, st)| (*kind, st.rate())).collect(),
        rank_rejections: out.rank_rejections,
        warnings,
    }
}
