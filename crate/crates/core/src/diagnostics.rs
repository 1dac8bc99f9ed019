//! Convergence and comparison statistics: effective sample size, split
//! R-hat, Kolmogorov-Smirnov distances and histogram total variation
//! against a reference density on a grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmc::Chain;

pub const MIN_CHAIN_LEN: usize = 100;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

fn check_chains(chains: &[&[f64]]) -> Result<usize> {
    let n = chains.first().map(|c| c.len()).unwrap_or(0);
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Precondition("chains must have equal lengths".into()));
    }
    if n < MIN_CHAIN_LEN {
        return Err(Error::TooFewSamples {
            needed: MIN_CHAIN_LEN,
            got: n,
        });
    }
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|v| *v == first)) {
        return Err(Error::DegenerateChain("all values are identical".into()));
    }
    Ok(n)
}

/// ESS of one chain with Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> Result<f64> {
    effective_sample_size_multi(&[x])
}

/// Multi-chain ESS: per-lag autocorrelations are combined across chains
/// through the between/within variance estimate, then truncated with the
/// initial monotone sequence rule.
pub fn effective_sample_size_multi(chains: &[&[f64]]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::Precondition("no chains".into()));
    }
    let n = check_chains(chains)?;
    let m = chains.len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, 0)).collect();
    let w = acov0.iter().map(|a| a * n as f64 / (n as f64 - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) {
        return Err(Error::DegenerateChain("zero variance".into()));
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| autocov(c, *mu, t))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };
    // Paired sums P_k = rho_{2k} + rho_{2k+1}, kept while positive and
    // forced to be non-increasing.
    let mut sum_p = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut p = if k == 0 { 1.0 } else { rho(2 * k) } + rho(2 * k + 1);
        if p <= 0.0 {
            break;
        }
        p = p.min(prev);
        sum_p += p;
        prev = p;
        k += 1;
    }
    let tau = (2.0 * sum_p - 1.0).max(1.0 / ((m * n) as f64).log10().max(1.0));
    Ok(((m * n) as f64 / tau).min((m * n) as f64))
}

/// Split R-hat: each chain is halved, then the classic potential scale
/// reduction is computed over the halves.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Precondition("R-hat needs at least 2 chains".into()));
    }
    let n = check_chains(chains)?;
    let half = n / 2;
    let splits: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let w = splits.iter().map(|s| variance(s)).sum::<f64>() / splits.len() as f64;
    let b = half as f64 * variance(&means);
    if !(w > 0.0) {
        return Err(Error::DegenerateChain("zero within-chain variance".into()));
    }
    let var_plus = (half as f64 - 1.0) / half as f64 * w + b / half as f64;
    Ok((var_plus / w).sqrt())
}

/// `sup_x |F_n(x) - F(x)|` for a continuous reference CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS distance between empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Standard deviation of `local` over the draws whose `hyper` value falls in
/// the bottom `frac` and in the top `frac` of the `hyper` sample.
pub fn conditional_std_by_quantile(hyper: &[f64], local: &[f64], frac: f64) -> Result<(f64, f64)> {
    if hyper.len() != local.len() {
        return Err(Error::DimensionMismatch {
            expected: hyper.len(),
            found: local.len(),
        });
    }
    if !(frac > 0.0 && frac <= 0.5) {
        return Err(Error::Precondition("quantile fraction must lie in (0, 0.5]".into()));
    }
    let k = (frac * hyper.len() as f64).floor() as usize;
    if k < 2 {
        return Err(Error::TooFewSamples {
            needed: (2.0 / frac).ceil() as usize,
            got: hyper.len(),
        });
    }
    let mut order: Vec<usize> = (0..hyper.len()).collect();
    order.sort_by(|&a, &b| hyper[a].total_cmp(&hyper[b]));
    let sd = |idx: &[usize]| variance(&idx.iter().map(|&i| local[i]).collect::<Vec<_>>()).sqrt();
    Ok((sd(&order[..k]), sd(&order[order.len() - k..])))
}

/// Axis-aligned histogram grid in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<usize>,
    /// Oracle sub-samples per cell edge when integrating the density over a cell.
    #[serde(default = "default_oversample")]
    pub oversample: usize,
}

fn default_oversample() -> usize {
    4
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        let g = Self {
            lower,
            upper,
            bins,
            oversample: default_oversample(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.bins.len();
        if k == 0 || k > 2 || self.lower.len() != k || self.upper.len() != k {
            return Err(Error::InvalidConfig("grid must be 1-D or 2-D with matching bounds".into()));
        }
        if (0..k).any(|i| !(self.lower[i] < self.upper[i]) || self.bins[i] == 0) || self.oversample == 0 {
            return Err(Error::InvalidConfig(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.bins[axis] as f64
    }

    fn n_cells(&self) -> usize {
        self.bins.iter().product()
    }

    fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for axis in 0..self.dim() {
            let t = (x[axis] - self.lower[axis]) / self.width(axis);
            if !(t >= 0.0) || t >= self.bins[axis] as f64 {
                return None;
            }
            idx = idx * self.bins[axis] + t as usize;
        }
        Some(idx)
    }

    /// Cell centers in row-major order (last axis fastest).
    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.n_cells())
            .map(|c| {
                let mut rem = c;
                let mut out = vec![0.0; self.dim()];
                for axis in (0..self.dim()).rev() {
                    let i = rem % self.bins[axis];
                    rem /= self.bins[axis];
                    out[axis] = self.lower[axis] + (i as f64 + 0.5) * self.width(axis);
                }
                out
            })
            .collect()
    }

    /// Normalized cell probabilities of `exp(logp)`, each cell integrated
    /// with an `oversample`-per-axis midpoint rule.
    pub fn oracle_probabilities(&self, logp: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let k = self.dim();
        let s = self.oversample;
        let offsets: Vec<Vec<f64>> = (0..s.pow(k as u32))
            .map(|j| {
                let mut rem = j;
                (0..k)
                    .map(|axis| {
                        let o = rem % s;
                        rem /= s;
                        ((o as f64 + 0.5) / s as f64 - 0.5) * self.width(axis)
                    })
                    .collect()
            })
            .collect();
        let logs: Vec<f64> = self
            .centers()
            .iter()
            .flat_map(|c| {
                offsets
                    .iter()
                    .map(|o| logp(&c.iter().zip(o).map(|(a, b)| a + b).collect::<Vec<_>>()))
                    .collect::<Vec<_>>()
            })
            .collect();
        let top = logs.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let per = offsets.len();
        let mass: Vec<f64> = logs
            .chunks(per)
            .map(|ch| ch.iter().map(|v| if v.is_finite() { (v - top).exp() } else { 0.0 }).sum())
            .collect();
        let total: f64 = mass.iter().sum();
        mass.iter().map(|m| m / total).collect()
    }

    /// Normalized histogram of `samples`; errors when more than 1% fall outside.
    pub fn histogram(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut counts = vec![0.0; self.n_cells()];
        let mut outside = 0usize;
        for x in samples {
            match self.cell_of(x) {
                Some(c) => counts[c] += 1.0,
                None => outside += 1,
            }
        }
        let fraction = outside as f64 / samples.len().max(1) as f64;
        if fraction > 0.01 {
            return Err(Error::Coverage { fraction });
        }
        let inside = (samples.len() - outside) as f64;
        Ok(counts.iter().map(|c| c / inside).collect())
    }
}

/// `1/2 sum |p - q|` between the sample histogram and the oracle on `grid`.
pub fn grid_tv_distance(samples: &[Vec<f64>], oracle_logp: impl Fn(&[f64]) -> f64, grid: &GridSpec) -> Result<f64> {
    grid.validate()?;
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if samples.iter().any(|s| s.len() != grid.dim()) {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: samples[0].len(),
        });
    }
    let p = grid.histogram(samples)?;
    let q = grid.oracle_probabilities(oracle_logp);
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Mean and standard deviation of `exp(logp)` over a grid, per axis.
pub fn grid_moments(grid: &GridSpec, logp: impl Fn(&[f64]) -> f64) -> (Vec<f64>, Vec<f64>) {
    let q = grid.oracle_probabilities(logp);
    let centers = grid.centers();
    let k = grid.dim();
    let mean: Vec<f64> = (0..k)
        .map(|a| centers.iter().zip(&q).map(|(c, p)| c[a] * p).sum())
        .collect();
    let std: Vec<f64> = (0..k)
        .map(|a| {
            // Sheppard's correction: grouping at cell centers inflates the variance by w^2/12.
            let w = grid.width(a);
            (centers.iter().zip(&q).map(|(c, p)| (c[a] - mean[a]).powi(2) * p).sum::<f64>() - w * w / 12.0).sqrt()
        })
        .collect();
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
}

/// Per-coordinate summary pooled over chains for the named columns.
pub fn summarize(chains: &[Chain], columns: &[usize]) -> Vec<CoordSummary> {
    columns
        .iter()
        .map(|&j| {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let pooled: Vec<f64> = cols.concat();
            CoordSummary {
                name: chains[0].names[j].clone(),
                mean: mean(&pooled),
                std: variance(&pooled).sqrt(),
                ess: effective_sample_size_multi(&refs).ok(),
                rhat: gelman_rubin(&refs).ok(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<"` or `">"`: the relation `value` must satisfy against `threshold`.
    pub relation: String,
    pub pass: bool,
}

impl Gate {
    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: "<".into(),
            pass: value < threshold,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            relation: ">".into(),
            pass: value > threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub coords: Vec<CoordSummary>,
    pub divergences: usize,
    pub ks: BTreeMap<String, f64>,
    pub tv: BTreeMap<String, f64>,
    pub gates: Vec<Gate>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }

    /// R-hat and ESS gates over every summarized coordinate.
    pub fn add_convergence_gates(&mut self, rhat_max: f64, ess_min: f64) {
        for c in &self.coords {
            if let Some(r) = c.rhat {
                self.gates.push(Gate::below(format!("rhat[{}]", c.name), r, rhat_max));
            }
            self.gates.push(Gate::above(format!("ess[{}]", c.name), c.ess.unwrap_or(0.0), ess_min));
        }
    }
}
