//! Simulated single-pulsar residuals: irregular time stamps, a power-law red
//! process expressed through the Fourier design matrix, and white noise of
//! known variance.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::models::pta::PowerLawSpec;
use crate::rng::substream;

pub const DATASET_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_samples: usize,
    pub span: f64,
    pub jitter_frac: f64,
    pub sigma: f64,
    pub n_freq: usize,
    pub true_log10_a: f64,
    pub true_gamma: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            span: 1.0,
            jitter_frac: 0.3,
            sigma: 1.0,
            n_freq: 10,
            true_log10_a: 0.5,
            true_gamma: 13.0 / 3.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("simulation: {m}")));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if self.n_freq == 0 || self.n_samples < 2 * self.n_freq + 1 {
            return bad("n_samples must be at least 2 * n_freq + 1");
        }
        if !(self.span > 0.0 && self.span.is_finite()) {
            return bad("span must be positive");
        }
        if !(0.0..1.0).contains(&self.jitter_frac) {
            return bad("jitter_frac must lie in [0, 1)");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !(self.true_log10_a.is_finite() && self.true_gamma.is_finite()) {
            return bad("truth must be finite");
        }
        Ok(())
    }

    /// The injected truth must sit inside the power-law prior box.
    pub fn validate_against(&self, spec: &PowerLawSpec) -> Result<()> {
        self.validate()?;
        let (la, ua) = spec.log10_a_bounds;
        let (lg, ug) = spec.gamma_bounds;
        if !(self.true_log10_a > la && self.true_log10_a < ua && self.true_gamma > lg && self.true_gamma < ug) {
            return Err(Error::InvalidConfig(format!(
                "injected (log10_A, gamma) = ({}, {}) lies outside the prior box",
                self.true_log10_a, self.true_gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub log10_a: f64,
    pub gamma: f64,
    pub seed: u64,
}

/// Residual time series with white-noise level and frequency-bin metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PtaDataset {
    times: Vec<f64>,
    data: Vec<f64>,
    sigma: f64,
    n_freq: usize,
    span: f64,
    freqs: Vec<f64>,
    truth: Option<Truth>,
}

impl PtaDataset {
    pub fn new(times: Vec<f64>, data: Vec<f64>, sigma: f64, n_freq: usize, truth: Option<Truth>) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidConfig(format!("dataset: {m}")));
        if times.len() != data.len() {
            return invalid(format!("{} times but {} data points", times.len(), data.len()));
        }
        if n_freq == 0 || times.len() < 2 * n_freq + 1 {
            return invalid(format!("{} samples cannot support {} frequency bins", times.len(), n_freq));
        }
        if times.iter().chain(&data).any(|x| !x.is_finite()) {
            return invalid("non-finite entries".into());
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return invalid(format!("times not strictly increasing at index {}", i + 1));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma = {sigma}"));
        }
        let span = times[times.len() - 1] - times[0];
        let freqs = (1..=n_freq).map(|i| i as f64 / span).collect();
        Ok(Self {
            times,
            data,
            sigma,
            n_freq,
            span,
            freqs,
            truth,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn n_freq(&self) -> usize {
        self.n_freq
    }
    pub fn span(&self) -> f64 {
        self.span
    }
    /// `f_i = (i + 1) / span` for zero-based `i`.
    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }
    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        fourier_design_matrix(&self.times, self.n_freq).expect("validated dataset has positive span")
    }

    /// Reference frequency used by the power-law model: `1 / span`.
    pub fn f_ref(&self) -> f64 {
        1.0 / self.span
    }
}

/// `t_i = i * delta + u_i`, `u_i ~ U(-jitter * delta / 2, jitter * delta / 2)`, sorted.
pub fn generate_times(cfg: &SimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let delta = cfg.span / (n - 1) as f64;
    let half = 0.5 * cfg.jitter_frac * delta;
    let mut rng = substream(cfg.seed, "times");
    const ATTEMPTS: usize = 8;
    for _ in 0..ATTEMPTS {
        let mut t: Vec<f64> = (0..n)
            .map(|i| {
                let u = if half > 0.0 { rng.random_range(-half..half) } else { 0.0 };
                i as f64 * delta + u
            })
            .collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[1] > w[0]) {
            return Ok(t);
        }
    }
    Err(Error::JitterCollision { attempts: ATTEMPTS })
}

/// `N x 2N_f` matrix; columns `2k-2`, `2k-1` hold `sin`, `cos` of
/// `2 pi k (t - t_1) / T` for harmonic `k = 1..N_f`, with `T = t_N - t_1`.
pub fn fourier_design_matrix(times: &[f64], n_freq: usize) -> Result<DMatrix<f64>> {
    if times.len() < 2 {
        return Err(Error::DegenerateSpan);
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    if !(span > 0.0) {
        return Err(Error::DegenerateSpan);
    }
    Ok(DMatrix::from_fn(times.len(), 2 * n_freq, |r, c| {
        let k = (c / 2 + 1) as f64;
        let phase = 2.0 * PI * k * (times[r] - t0) / span;
        if c % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    }))
}

/// Draws `a ~ N(0, phi(A_true, gamma_true))`, sets `d = F a + sigma * n`.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<PtaDataset> {
    cfg.validate()?;
    let times = generate_times(cfg)?;
    let f = fourier_design_matrix(&times, cfg.n_freq)?;
    let amp = 10f64.powf(cfg.true_log10_a);
    let mut coeff_rng = substream(cfg.seed, "coefficients");
    let a = DVector::from_fn(2 * cfg.n_freq, |k, _| {
        // f_i / f_ref = i for harmonics of 1/T with f_ref = 1/T.
        let ratio = (k / 2 + 1) as f64;
        let phi = amp * ratio.powf(-cfg.true_gamma);
        phi.sqrt() * coeff_rng.sample::<f64, _>(StandardNormal)
    });
    let signal = &f * a;
    let mut noise_rng = substream(cfg.seed, "noise");
    let data = signal
        .iter()
        .map(|s| s + cfg.sigma * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    PtaDataset::new(
        times,
        data,
        cfg.sigma,
        cfg.n_freq,
        Some(Truth {
            log10_a: cfg.true_log10_a,
            gamma: cfg.true_gamma,
            seed: cfg.seed,
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    version: u64,
    times: Vec<f64>,
    data: Vec<f64>,
    sigma: f64,
    n_freq: usize,
    #[serde(default)]
    truth: Option<Truth>,
}

const SECTIONS: [&str; 6] = ["version", "times", "data", "sigma", "n_freq", "truth"];

pub fn save_dataset(ds: &PtaDataset, path: &Path) -> Result<()> {
    let file = DatasetFile {
        version: DATASET_VERSION,
        times: ds.times.clone(),
        data: ds.data.clone(),
        sigma: ds.sigma,
        n_freq: ds.n_freq,
        truth: ds.truth,
    };
    io::write_json(path, &file)
}

/// Names the section a parse error falls into: the last section key that
/// appears in the text, or the first one that never appears.
fn locate_section(text: &str, err: &serde_json::Error) -> String {
    let positions: Vec<(&str, Option<usize>)> = SECTIONS
        .iter()
        .map(|s| (*s, text.find(&format!("\"{s}\""))))
        .collect();
    if err.is_eof() {
        if let Some((name, _)) = positions
            .iter()
            .filter_map(|(n, p)| p.map(|p| (n, p)))
            .max_by_key(|(_, p)| *p)
        {
            let missing: Vec<&str> = positions
                .iter()
                .filter(|(n, p)| p.is_none() && *n != "truth")
                .map(|(n, _)| *n)
                .collect();
            return if missing.is_empty() {
                format!("file truncated inside section `{name}`")
            } else {
                format!(
                    "file truncated inside section `{name}`; missing section(s) {}",
                    missing.iter().map(|m| format!("`{m}`")).collect::<Vec<_>>().join(", ")
                )
            };
        }
        return "file truncated before any section".into();
    }
    err.to_string()
}

pub fn load_dataset(path: &Path) -> Result<PtaDataset> {
    let ctx = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| {
        let line = Some(e.line());
        Error::format(&ctx, line, locate_section(&text, &e))
    })?;
    if file.version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: file.version,
            expected: DATASET_VERSION,
        });
    }
    if let Some(i) = file.times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::format(
            &ctx,
            None,
            format!("section `times`: not strictly increasing at index {}", i + 1),
        ));
    }
    PtaDataset::new(file.times, file.data, file.sigma, file.n_freq, file.truth)
        .map_err(|e| Error::format(&ctx, None, e.to_string()))
}

/// Two-column `t,d` export for plotting.
pub fn export_csv(ds: &PtaDataset, path: &Path) -> Result<()> {
    io::write_csv(
        path,
        &["t", "d"],
        ds.times.iter().zip(&ds.data).map(|(&t, &d)| vec![t, d]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_grid_without_jitter() {
        let cfg = SimConfig {
            n_samples: 5,
            span: 4.0,
            jitter_frac: 0.0,
            n_freq: 1,
            ..SimConfig::default()
        };
        assert_eq!(generate_times(&cfg).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn times_are_deterministic_and_increasing() {
        let cfg = SimConfig::default();
        assert_eq!(generate_times(&cfg).unwrap(), generate_times(&cfg).unwrap());
        for seed in 0..100 {
            let cfg = SimConfig {
                n_samples: 1000,
                jitter_frac: 0.5,
                seed,
                ..SimConfig::default()
            };
            let t = generate_times(&cfg).unwrap();
            assert!(t.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn time_stream_ignores_frequency_count() {
        let a = SimConfig::default();
        let b = SimConfig { n_freq: 5, ..a.clone() };
        assert_eq!(generate_times(&a).unwrap(), generate_times(&b).unwrap());
    }

    #[test]
    fn design_matrix_phases() {
        let t = [0.0, 0.25, 0.5, 0.75, 1.0];
        let f = fourier_design_matrix(&t, 3).unwrap();
        for c in 0..6 {
            let want = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(f[(0, c)], want);
        }
        assert!((f[(1, 0)] - 1.0).abs() < 1e-15 && f[(1, 1)].abs() < 1e-15);
        assert!(f[(1, 2)].abs() < 1e-15 && (f[(1, 3)] + 1.0).abs() < 1e-15);
        assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(fourier_design_matrix(&[1.0, 1.0], 2), Err(Error::DegenerateSpan)));
    }

    #[test]
    fn even_grid_columns_are_nearly_orthogonal() {
        // Half-open even grid over one period so that discrete orthogonality
        // holds; the last sample closes the period at t_N = T.
        let n = 4001;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let f = fourier_design_matrix(&t[..n - 1], 5).unwrap();
        // Dense-matrix oracle: F^T F computed entrywise.
        let rows = n - 1;
        let span = t[n - 2] - t[0];
        let _ = span;
        let ftf = f.transpose() * &f;
        for i in 0..10 {
            for j in 0..10 {
                let v = ftf[(i, j)];
                if i == j {
                    assert!((v - rows as f64 / 2.0).abs() < 0.01 * rows as f64, "diag {i}: {v}");
                } else {
                    assert!(v.abs() < 0.01 * rows as f64, "({i},{j}) = {v}");
                }
            }
        }
    }

    #[test]
    fn zero_signal_zero_noise() {
        let cfg = SimConfig {
            sigma: 0.0,
            true_log10_a: -300.0,
            ..SimConfig::default()
        };
        let ds = simulate_dataset(&cfg).unwrap();
        assert!(ds.data().iter().all(|d| d.abs() < 1e-100));
    }

    #[test]
    fn default_truth_is_inside_the_prior_box() {
        SimConfig::default()
            .validate_against(&PowerLawSpec::default())
            .unwrap();
        let bad = SimConfig {
            true_gamma: 9.0,
            ..SimConfig::default()
        };
        assert!(bad.validate_against(&PowerLawSpec::default()).is_err());
    }

    #[test]
    fn data_variance_matches_model_covariance() {
        // Monte-Carlo moment oracle at a single time stamp.
        let base = SimConfig {
            jitter_frac: 0.0,
            n_samples: 101,
            n_freq: 4,
            true_log10_a: 0.0,
            true_gamma: 2.0,
            ..SimConfig::default()
        };
        let j = 37;
        let seeds = 200;
        let vals: Vec<f64> = (0..seeds)
            .map(|s| simulate_dataset(&SimConfig { seed: s, ..base.clone() }).unwrap().data()[j])
            .collect();
        let mean = vals.iter().sum::<f64>() / seeds as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
        let ds = simulate_dataset(&base).unwrap();
        let f = ds.design_matrix();
        let expect = base.sigma.powi(2)
            + (0..8)
                .map(|c| f[(j, c)].powi(2) * ((c / 2 + 1) as f64).powf(-base.true_gamma))
                .sum::<f64>();
        let se = expect * (2.0 / (seeds - 1) as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "{var} vs {expect} +- {se}");
    }

    #[test]
    fn save_load_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let ds = simulate_dataset(&SimConfig::default()).unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_dataset(&ds, &p1).unwrap();
        save_dataset(&simulate_dataset(&SimConfig::default()).unwrap(), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let back = load_dataset(&p1).unwrap();
        assert_eq!(back, ds);
        export_csv(&ds, &dir.path().join("d.csv")).unwrap();
        let t = io::read_csv(&dir.path().join("d.csv")).unwrap();
        assert_eq!(t.header, vec!["t", "d"]);
        assert_eq!(t.rows.len(), ds.len());
    }

    #[test]
    fn truncated_file_names_the_section() {
        let dir = tempfile::tempdir().unwrap();
        let ds = simulate_dataset(&SimConfig::default()).unwrap();
        let p = dir.path().join("a.json");
        save_dataset(&ds, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cut = text.find("\"data\"").unwrap() + 200;
        fs::write(&p, &text[..cut]).unwrap();
        match load_dataset(&p) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("`data`"), "{message}");
                assert!(message.contains("`sigma`"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unsorted_times_are_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = simulate_dataset(&SimConfig {
            n_samples: 21,
            n_freq: 2,
            ..SimConfig::default()
        })
        .unwrap();
        let p = dir.path().join("a.json");
        save_dataset(&ds, &p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        let times = v["times"].as_array_mut().unwrap();
        times.swap(3, 4);
        fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Format { .. })));
    }
}
