//! Normal-distribution helpers that stay accurate deep in the tails.

use statrs::function::erf::erfc;
use std::f64::consts::{LN_2, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log N(x; mean, sd)` including the normalization constant.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn ndtr(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `log Phi(z)`, accurate for very negative `z`.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 5.0 {
        (-0.5 * erfc(z / SQRT_2)).ln_1p()
    } else if z > -20.0 {
        (0.5 * erfc(-z / SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let z2 = z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            term *= -((2 * k - 1) as f64) / z2;
            sum += term;
        }
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + sum.ln()
    }
}

/// Inverse Mills ratio `phi(z) / Phi(z)`, the derivative of `log_ndtr`.
pub fn inv_mills(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_ndtr(z)).exp()
}

/// Solves `log_ndtr(g) = log_p` for `g`. Requires `log_p <= ln(1/2)`, so `g <= 0`.
///
/// `log_ndtr` is concave, so Newton iterates approach the root monotonically
/// from below after the first step.
pub fn ndtri_log_lower(log_p: f64) -> f64 {
    debug_assert!(log_p <= -LN_2 + 1e-12);
    if log_p >= -LN_2 {
        return 0.0;
    }
    let mut g = if log_p > -3.0 {
        0.0
    } else {
        -(-2.0 * log_p).sqrt()
    };
    for _ in 0..200 {
        let h = log_ndtr(g) - log_p;
        let step = h / inv_mills(g);
        g -= step;
        if step.abs() <= 1e-15 * (1.0 + g.abs()) {
            break;
        }
    }
    g
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
