use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{log_sum_exp, LN_SQRT_2PI};

/// Gaussian-kernel density estimate with per-coordinate bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub samples: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
}

impl KdeModel {
    /// Scott's rule: `h_j = sd_j n^{-1/(d+4)}`.
    pub fn scott(samples: Vec<Vec<f64>>) -> Result<Self> {
        let n = samples.len();
        let dim = samples.first().map_or(0, Vec::len);
        if n < 2 || dim == 0 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let factor = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
        let bandwidth = (0..dim)
            .map(|j| {
                let m = samples.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let v = samples.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                v.sqrt() * factor
            })
            .collect();
        Self::new(samples, bandwidth)
    }

    pub fn new(samples: Vec<Vec<f64>>, bandwidth: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if let Some(r) = samples.iter().find(|r| r.len() != bandwidth.len()) {
            return Err(Error::DimensionMismatch {
                expected: bandwidth.len(),
                found: r.len(),
            });
        }
        if bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidConfig(format!("KDE bandwidths must be positive: {bandwidth:?}")));
        }
        Ok(Self { samples, bandwidth })
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let norm: f64 = self.bandwidth.iter().map(|h| h.ln() + LN_SQRT_2PI).sum::<f64>() + (self.samples.len() as f64).ln();
        let terms: Vec<f64> = self
            .samples
            .iter()
            .map(|s| {
                s.iter()
                    .zip(x)
                    .zip(&self.bandwidth)
                    .map(|((si, xi), h)| {
                        let r = (xi - si) / h;
                        -0.5 * r * r
                    })
                    .sum()
            })
            .collect();
        Ok(log_sum_exp(&terms) - norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_kernel() {
        let k = KdeModel::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!((k.log_density(&[0.0]).unwrap() - (-0.918939)).abs() < 1e-6);
    }

    #[test]
    fn symmetric_samples_give_symmetric_density() {
        let k = KdeModel::scott(vec![vec![-1.0, 0.5], vec![1.0, -0.5], vec![0.3, 2.0], vec![-0.3, -2.0]]).unwrap();
        for x in [[0.2, 0.7], [1.5, -3.0], [0.0, 0.0]] {
            let a = k.log_density(&x).unwrap();
            let b = k.log_density(&[-x[0], -x[1]]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_sum() {
        let samples: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64).sqrt()]).collect();
        let h = [0.4, 0.9];
        let k = KdeModel::new(samples.clone(), h.to_vec()).unwrap();
        let x = [0.1, 1.7];
        let direct: f64 = samples
            .iter()
            .map(|s| {
                (0..2)
                    .map(|j| {
                        let r = (x[j] - s[j]) / h[j];
                        (-0.5 * r * r).exp() / (h[j] * (2.0 * std::f64::consts::PI).sqrt())
                    })
                    .product::<f64>()
            })
            .sum::<f64>()
            / 10.0;
        assert!((k.log_density(&x).unwrap() - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KdeModel::new(vec![vec![0.0]], vec![0.0]).is_err());
        let k = KdeModel::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(matches!(k.log_density(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
