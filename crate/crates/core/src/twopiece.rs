//! The Laplace-tilted normal on the real line,
//! density ∝ exp(−(β − m)²/(2v) − λ|β|).
//!
//! It splits at zero into a normal `N(m − λv, v)` truncated to `β ≥ 0` and a
//! normal `N(m + λv, v)` truncated to `β < 0`. Both piece masses are closed
//! form, which gives the one-dimensional marginal likelihood, exact sampling
//! and exact quantiles. This is the full conditional of every coordinate
//! under a Laplace slab, and the whole posterior in the sequence model.

use crate::numeric::{inverse_mills, log_add_exp, norm_log_cdf, norm_quantile_log, LN_2PI};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct TwoPiece {
    m: f64,
    v: f64,
    lambda: f64,
    sd: f64,
    // Centers of the right (β ≥ 0) and left (β < 0) pieces.
    m_pos: f64,
    m_neg: f64,
    log_left: f64,
    log_right: f64,
    log_z: f64,
}

impl TwoPiece {
    pub fn new(m: f64, v: f64, lambda: f64) -> Self {
        debug_assert!(v > 0.0 && lambda >= 0.0);
        let sd = v.sqrt();
        let m_pos = m - lambda * v;
        let m_neg = m + lambda * v;
        let half = 0.5 * lambda * lambda * v;
        let base = 0.5 * (LN_2PI + v.ln());
        let log_right = -m * lambda + half + base + norm_log_cdf(m_pos / sd);
        let log_left = m * lambda + half + base + norm_log_cdf(-m_neg / sd);
        TwoPiece {
            m,
            v,
            lambda,
            sd,
            m_pos,
            m_neg,
            log_left,
            log_right,
            log_z: log_add_exp(log_left, log_right),
        }
    }

    /// `ln ∫ exp(−(β − m)²/(2v) − λ|β|) dβ`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    pub fn log_prob_left(&self) -> f64 {
        self.log_left - self.log_z
    }

    pub fn log_prob_right(&self) -> f64 {
        self.log_right - self.log_z
    }

    pub fn prob_left(&self) -> f64 {
        self.log_prob_left().exp()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = x - self.m;
        -d * d / (2.0 * self.v) - self.lambda * x.abs() - self.log_z
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            (self.log_prob_left() + norm_log_cdf((x - self.m_neg) / self.sd)
                - norm_log_cdf(-self.m_neg / self.sd))
            .exp()
        } else {
            let a = norm_log_cdf((self.m_pos - x) / self.sd) - norm_log_cdf(self.m_pos / self.sd);
            let inside = -a.exp_m1();
            self.prob_left() + self.log_prob_right().exp() * inside
        }
    }

    /// Inverse CDF for `u ∈ (0, 1)`. The left piece is inverted through its
    /// lower tail and the right piece through its upper tail, so neither
    /// extreme loses precision.
    pub fn quantile(&self, u: f64) -> f64 {
        let log_pl = self.log_prob_left();
        if u.ln() < log_pl {
            let target = u.ln() - log_pl + norm_log_cdf(-self.m_neg / self.sd);
            (self.m_neg + self.sd * norm_quantile_log(target)).min(0.0)
        } else {
            let target = (1.0 - u).ln() - self.log_prob_right() + norm_log_cdf(self.m_pos / self.sd);
            (self.m_pos - self.sd * norm_quantile_log(target.min(0.0))).max(0.0)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }

    pub fn mean(&self) -> f64 {
        let a = self.m_pos / self.sd;
        let b = -self.m_neg / self.sd;
        let right = self.m_pos + self.sd * inverse_mills(a);
        let left = self.m_neg - self.sd * inverse_mills(b);
        self.prob_left() * left + self.log_prob_right().exp() * right
    }

    /// The maximizer of the density: the soft-thresholded center.
    pub fn mode(&self) -> f64 {
        soft_threshold(self.m, self.lambda * self.v)
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Uniform draw on the open interval `(0, 1)`.
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
