//! Sampling β_S for a fixed support S.
//!
//! Each coordinate's full conditional is ∝ exp(−(β − m)²/(2v))·g(β) with
//! m and v read off Γ_S and X_Sᵀy. Under a Laplace slab that is a two-piece
//! law and is drawn exactly (Gibbs). Under a heavy-tailed slab the Gaussian
//! factor is used as an independence proposal and accepted with probability
//! min(1, g(β')/g(β)).

use crate::model::{DesignMatrix, Model};
use crate::priors::Slab;
use crate::twopiece::{open_unit, TwoPiece};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct WithinModel {
    gram: DMatrix<f64>,
    b: DVector<f64>,
    slab: Slab,
}

impl WithinModel {
    /// `xty` is the full vector Xᵀy.
    pub fn new(x: &DesignMatrix, xty: &DVector<f64>, model: &Model, slab: &Slab) -> Self {
        let idx = model.indices();
        WithinModel {
            gram: x.gram_sub(idx),
            b: DVector::from_iterator(idx.len(), idx.iter().map(|&j| xty[j])),
            slab: slab.clone(),
        }
    }

    pub fn from_parts(gram: DMatrix<f64>, b: DVector<f64>, slab: &Slab) -> Self {
        WithinModel { gram, b, slab: slab.clone() }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Center and variance of the Gaussian factor of coordinate `i`.
    pub fn conditional(&self, beta: &[f64], i: usize) -> (f64, f64) {
        let gii = self.gram[(i, i)];
        let mut acc = self.b[i];
        for (j, &bj) in beta.iter().enumerate() {
            if j != i {
                acc -= self.gram[(i, j)] * bj;
            }
        }
        (acc / gii, 1.0 / gii)
    }

    pub fn sweep<R: Rng + ?Sized>(&self, beta: &mut [f64], rng: &mut R) {
        for i in 0..beta.len() {
            let (m, v) = self.conditional(beta, i);
            beta[i] = draw_conditional(&self.slab, m, v, beta[i], rng);
        }
    }

    /// Runs `sweeps` sweeps from `start` and returns the final state.
    pub fn run<R: Rng + ?Sized>(&self, start: &[f64], sweeps: usize, rng: &mut R) -> Vec<f64> {
        let mut beta = start.to_vec();
        for _ in 0..sweeps {
            self.sweep(&mut beta, rng);
        }
        beta
    }
}

/// One update of a coordinate whose conditional is ∝ N(m, v)·g.
pub fn draw_conditional<R: Rng + ?Sized>(slab: &Slab, m: f64, v: f64, current: f64, rng: &mut R) -> f64 {
    if slab.is_laplace() {
        TwoPiece::new(m, v, slab.lambda()).sample(rng)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        let prop = m + v.sqrt() * z;
        let log_acc = slab.log_density(prop) - slab.log_density(current);
        if log_acc >= 0.0 || open_unit(rng).ln() < log_acc {
            prop
        } else {
            current
        }
    }
}
