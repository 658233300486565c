//! Log-domain arithmetic and normal-distribution special functions.

use libm::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI, SQRT_2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    debug_assert!(a >= b, "log_sub_exp requires a >= b ({a} < {b})");
    if a == b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp_m1()).ln()
}

/// `ln Σ exp(x_i)`; empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Subtracts the log-sum-exp so that `Σ exp(x_i) = 1`. Returns the removed
/// normalizer.
pub fn normalize_log(xs: &mut [f64]) -> f64 {
    let z = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= z;
    }
    z
}

pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Number of subsets of `{0..p}` with at most `k` elements, as a float so that
/// astronomically large counts compare against budgets without overflow.
pub fn count_subsets_up_to(p: usize, k: usize) -> f64 {
    (0..=k.min(p)).map(|j| ln_choose(p, j).exp()).sum()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_pdf(x: f64) -> f64 {
    norm_log_pdf(x).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, accurate in both tails.
pub fn norm_log_cdf(x: f64) -> f64 {
    if x > 5.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -35.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // Asymptotic series for the Mills ratio.
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `φ(x)/Φ(x)`.
pub fn inverse_mills(x: f64) -> f64 {
    (norm_log_pdf(x) - norm_log_cdf(x)).exp()
}

/// Acklam's rational approximation to Φ⁻¹, relative error about 1e-9.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Φ⁻¹ evaluated from `ln p`, so that lower-tail probabilities far below the
/// smallest positive double are still resolved.
pub fn norm_quantile_log(log_p: f64) -> f64 {
    if log_p >= 0.0 {
        return f64::INFINITY;
    }
    if log_p == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if log_p > -LN_2 {
        // Upper half: reflect through the complementary probability.
        let q = -log_p.exp_m1();
        return -norm_quantile_log(q.ln());
    }
    let mut x = if log_p > -700.0 {
        acklam(log_p.exp())
    } else {
        let t = -2.0 * log_p;
        -(t - t.ln() - LN_2PI).sqrt()
    };
    for _ in 0..6 {
        let g = norm_log_cdf(x) - log_p;
        let step = g / inverse_mills(x);
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        -norm_quantile_log((1.0 - p).ln())
    } else {
        norm_quantile_log(p.ln())
    }
}

/// Closed-form normalizer `∫ du / (1 + |u|^μ) = 2 (π/μ) / sin(π/μ)`, used as an
/// independent check on the quadrature normalizer of the heavy-tailed slab.
pub fn heavy_tail_kernel_mass(mu: f64) -> f64 {
    2.0 * (PI / mu) / (PI / mu).sin()
}
