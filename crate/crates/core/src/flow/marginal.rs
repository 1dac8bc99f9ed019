use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::special::{log_ndtr, log_sum_exp, ndtri_log_lower, LN_SQRT_2PI};

const N_BINS: usize = 256;

/// Bandwidth multipliers tried by [`MarginalCdf::fit_cv`].
const CV_FACTORS: [f64; 6] = [1.0, 0.7, 0.5, 0.35, 0.25, 0.18];
const CV_MIN_GAIN: f64 = 2e-3;

/// Kernels beyond `CUT_R` bandwidths are dropped from sums, kernels beyond
/// `ONE_R` on the near side of a CDF count as whole weights, and points
/// farther than `TAIL_R` from every center use the full sums.
const CUT_R: f64 = 14.0;
const ONE_R: f64 = 8.3;
const TAIL_R: f64 = 9.0;

/// Monotone per-coordinate map `z = Phi^-1(F(x))`, with `F` the CDF of a
/// Gaussian-kernel mixture fitted to one coordinate.
///
/// Kernel centers are the linearly binned data, pulled toward the sample
/// mean so the mixture variance equals the sample variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCdf {
    pub centers: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub bandwidth: f64,
}

/// `z`, `ln dz/dx` and its derivative in `x`, plus `dz/dx`.
#[derive(Debug, Clone, Copy)]
pub struct MarginalEval {
    pub z: f64,
    pub log_dz: f64,
    pub dz: f64,
    pub d_log_dz: f64,
}

impl MarginalCdf {
    pub fn fit(xs: &[f64]) -> Self {
        Self::fit_scaled(xs, 1.0)
    }

    /// Shrinks Silverman's bandwidth step by step while the held-out mean
    /// log-density improves by more than `CV_MIN_GAIN` nats per point.
    pub fn fit_cv(train: &[f64], val: &[f64]) -> Self {
        let score = |m: &Self| val.iter().map(|&x| m.log_pdf(x)).sum::<f64>() / val.len() as f64;
        let mut best = Self::fit_scaled(train, CV_FACTORS[0]);
        let mut best_score = score(&best);
        for &f in &CV_FACTORS[1..] {
            let m = Self::fit_scaled(train, f);
            let s = score(&m);
            if s < best_score + CV_MIN_GAIN {
                break;
            }
            best = m;
            best_score = s;
        }
        best
    }

    /// Silverman's bandwidth times `factor`.
    pub fn fit_scaled(xs: &[f64], factor: f64) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt().max(1e-12);
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((n - 1.0) * p).round() as usize];
        let iqr = (q(0.75) - q(0.25)) / 1.349;
        let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
        let h = factor * 1.06 * spread * n.powf(-0.2);

        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let width = ((hi - lo) / (N_BINS - 1) as f64).max(1e-12);
        let mut w = vec![0.0; N_BINS];
        for &x in xs {
            let pos = ((x - lo) / width).clamp(0.0, (N_BINS - 1) as f64);
            let k = (pos.floor() as usize).min(N_BINS - 2);
            let frac = pos - k as f64;
            w[k] += 1.0 - frac;
            w[k + 1] += frac;
        }
        let shrink = (1.0 - h * h / (sd * sd)).max(0.0).sqrt();
        let mut centers = Vec::new();
        let mut log_weights = Vec::new();
        for (k, wk) in w.into_iter().enumerate() {
            if wk > 0.0 {
                centers.push(mean + shrink * (lo + k as f64 * width - mean));
                log_weights.push((wk / n).ln());
            }
        }
        Self {
            centers,
            log_weights,
            bandwidth: h,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.centers.is_empty() || self.centers.len() != self.log_weights.len() {
            return Err("marginal layer needs matching non-empty centers and weights".into());
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err("marginal bandwidth must be positive".into());
        }
        Ok(())
    }

    /// Index range of the centers in `[lo, hi]`.
    fn window(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        self.centers.partition_point(|c| *c < lo)..self.centers.partition_point(|c| *c <= hi)
    }

    /// Farther than `TAIL_R` bandwidths from every center.
    fn in_tail(&self, x: f64) -> bool {
        let k = self.centers.partition_point(|c| *c < x);
        let near = [k.checked_sub(1), (k < self.centers.len()).then_some(k)]
            .into_iter()
            .flatten()
            .map(|i| (self.centers[i] - x).abs())
            .fold(f64::INFINITY, f64::min);
        near > TAIL_R * self.bandwidth
    }

    /// Kernel log-terms of the density at `x` and the centers they belong to.
    fn pdf_terms(&self, x: f64) -> (&[f64], Vec<f64>) {
        let h = self.bandwidth;
        let range = if self.in_tail(x) {
            0..self.centers.len()
        } else {
            self.window(x - CUT_R * h, x + CUT_R * h)
        };
        let centers = &self.centers[range.clone()];
        let terms = range
            .map(|k| {
                let r = (x - self.centers[k]) / h;
                self.log_weights[k] - 0.5 * r * r
            })
            .collect();
        (centers, terms)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        log_sum_exp(&self.pdf_terms(x).1) - LN_SQRT_2PI - self.bandwidth.ln()
    }

    /// `ln F(x)` when `sign = 1`, `ln (1 - F(x))` when `sign = -1`. Kernels
    /// more than `ONE_R` bandwidths on the near side count as whole weights.
    fn log_cdf_side(&self, x: f64, sign: f64) -> f64 {
        let h = self.bandwidth;
        let n = self.centers.len();
        let term = |k: usize| self.log_weights[k] + log_ndtr(sign * (x - self.centers[k]) / h);
        if self.in_tail(x) {
            return log_sum_exp(&(0..n).map(term).collect::<Vec<_>>());
        }
        let (range, whole) = if sign > 0.0 {
            let r = self.window(x - ONE_R * h, x + CUT_R * h);
            let whole = 0..r.start;
            (r, whole)
        } else {
            let r = self.window(x - CUT_R * h, x + ONE_R * h);
            let whole = r.end..n;
            (r, whole)
        };
        let mut terms: Vec<f64> = range.map(term).collect();
        let w: f64 = self.log_weights[whole].iter().map(|l| l.exp()).sum();
        if w > 0.0 {
            terms.push(w.ln());
        }
        log_sum_exp(&terms)
    }

    fn z_of(&self, x: f64) -> f64 {
        let lf = self.log_cdf_side(x, 1.0);
        if lf <= -LN_2 {
            ndtri_log_lower(lf)
        } else {
            -ndtri_log_lower(self.log_cdf_side(x, -1.0).min(-LN_2))
        }
    }

    pub fn eval(&self, x: f64) -> MarginalEval {
        let h = self.bandwidth;
        let (centers, terms) = self.pdf_terms(x);
        let lse = log_sum_exp(&terms);
        let log_f = lse - LN_SQRT_2PI - h.ln();
        let d_log_f = centers
            .iter()
            .zip(&terms)
            .map(|(c, t)| (t - lse).exp() * (c - x) / (h * h))
            .sum::<f64>();
        let z = self.z_of(x);
        let log_dz = log_f + 0.5 * z * z + LN_SQRT_2PI;
        let dz = log_dz.exp();
        MarginalEval {
            z,
            log_dz,
            dz,
            d_log_dz: d_log_f + z * dz,
        }
    }

    /// Solves `z(x) = z` by safeguarded Newton iteration.
    pub fn invert(&self, z: f64) -> f64 {
        let span = self.centers[self.centers.len() - 1] - self.centers[0] + self.bandwidth;
        let mid = 0.5 * (self.centers[0] + self.centers[self.centers.len() - 1]);
        let (mut lo, mut hi) = (mid - span, mid + span);
        while self.z_of(lo) > z {
            lo -= 2.0 * (hi - lo);
        }
        while self.z_of(hi) < z {
            hi += 2.0 * (hi - lo);
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let e = self.eval(x);
            let r = e.z - z;
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - r / e.dz;
            let next = if newton > lo && newton < hi && e.dz.is_finite() && e.dz > 0.0 {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_sample(n: usize) -> Vec<f64> {
        let mut rng = seeded(2);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn mixture_variance_matches_the_sample() {
        let xs = normal_sample(5000);
        let m = MarginalCdf::fit(&xs);
        let w: Vec<f64> = m.log_weights.iter().map(|l| l.exp()).collect();
        let mean = w.iter().zip(&m.centers).map(|(w, c)| w * c).sum::<f64>();
        let var = w.iter().zip(&m.centers).map(|(w, c)| w * (c - mean).powi(2)).sum::<f64>() + m.bandwidth.powi(2);
        let n = xs.len() as f64;
        let sm = xs.iter().sum::<f64>() / n;
        let sv = xs.iter().map(|x| (x - sm).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((mean - sm).abs() < 1e-3);
        assert!((var / sv - 1.0).abs() < 2e-3, "{var} {sv}");
    }

    #[test]
    fn derivatives_and_inverse() {
        let m = MarginalCdf::fit(&normal_sample(2000));
        let h = 1e-6;
        for &x in &[-6.0, -2.5, -0.3, 0.0, 0.8, 2.0, 5.0] {
            let e = m.eval(x);
            let fd = (m.eval(x + h).z - m.eval(x - h).z) / (2.0 * h);
            assert!((e.dz - fd).abs() < 1e-6 * (1.0 + fd), "dz at {x}");
            let fd2 = (m.eval(x + h).log_dz - m.eval(x - h).log_dz) / (2.0 * h);
            assert!((e.d_log_dz - fd2).abs() < 1e-5 * (1.0 + fd2.abs()), "dlog at {x}");
            assert!((m.invert(e.z) - x).abs() < 1e-10, "invert at {x}");
        }
    }

    #[test]
    fn cross_validation_narrows_the_kernel_for_sharp_shapes() {
        let mut rng = seeded(4);
        let draw = |rng: &mut crate::rng::StreamRng| -> f64 { -(rng.random::<f64>()).ln() };
        let train: Vec<f64> = (0..5000).map(|_| draw(&mut rng)).collect();
        let val: Vec<f64> = (0..1000).map(|_| draw(&mut rng)).collect();
        let silverman = MarginalCdf::fit(&train);
        let cv = MarginalCdf::fit_cv(&train, &val);
        assert!(cv.bandwidth < silverman.bandwidth);
        let gauss = normal_sample(6000);
        let g = MarginalCdf::fit_cv(&gauss[..5000], &gauss[5000..]);
        assert!(g.bandwidth >= 0.5 * MarginalCdf::fit(&gauss[..5000]).bandwidth);
    }

    #[test]
    fn monotone_far_into_the_tails() {
        let m = MarginalCdf::fit(&normal_sample(500));
        let mut prev = f64::NEG_INFINITY;
        for k in -60..=60 {
            let z = m.eval(k as f64 * 0.5).z;
            assert!(z.is_finite() && z > prev, "{k}");
            prev = z;
        }
    }
}
