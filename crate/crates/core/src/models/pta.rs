//! Single-pulsar red-noise models: white-noise likelihood in the Fourier
//! coefficients, Gaussian coefficient prior with per-bin variances, and the
//! power-law and free-spectral hyper-models built on top.

use std::f64::consts::LN_10;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Block, ParameterSpace, TargetModel};
use crate::sim::PtaDataset;
use crate::special::{LN_2PI, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerLawSpec {
    pub log10_a_bounds: (f64, f64),
    pub gamma_bounds: (f64, f64),
    /// Reference frequency; `None` means `1 / span` of the dataset.
    pub f_ref: Option<f64>,
}

impl Default for PowerLawSpec {
    fn default() -> Self {
        Self {
            log10_a_bounds: (-2.0, 2.0),
            gamma_bounds: (0.0, 7.0),
            f_ref: None,
        }
    }
}

impl PowerLawSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("log10_A", self.log10_a_bounds), ("gamma", self.gamma_bounds)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!("{name} bounds ({lo}, {hi})")));
            }
        }
        if let Some(f) = self.f_ref {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidConfig(format!("f_ref = {f}")));
            }
        }
        Ok(())
    }

    pub fn f_ref_for(&self, ds: &PtaDataset) -> f64 {
        self.f_ref.unwrap_or_else(|| ds.f_ref())
    }

    /// `-ln(width_A) - ln(width_gamma)`.
    pub fn log_hyper_prior(&self) -> f64 {
        -(self.log10_a_bounds.1 - self.log10_a_bounds.0).ln() - (self.gamma_bounds.1 - self.gamma_bounds.0).ln()
    }

    pub fn contains(&self, log10_a: f64, gamma: f64) -> bool {
        log10_a > self.log10_a_bounds.0
            && log10_a < self.log10_a_bounds.1
            && gamma > self.gamma_bounds.0
            && gamma < self.gamma_bounds.1
    }

    pub fn hyper_space(&self) -> ParameterSpace {
        ParameterSpace::builder()
            .interval("log10_A", self.log10_a_bounds.0, self.log10_a_bounds.1, Block::Hyper)
            .interval("gamma", self.gamma_bounds.0, self.gamma_bounds.1, Block::Hyper)
            .build()
            .expect("validated bounds")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeSpectralSpec {
    pub n_freq: usize,
    pub log10_rho_bounds: (f64, f64),
}

impl Default for FreeSpectralSpec {
    fn default() -> Self {
        Self {
            n_freq: 10,
            log10_rho_bounds: (-8.0, 4.0),
        }
    }
}

impl FreeSpectralSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.log10_rho_bounds;
        if self.n_freq == 0 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!("free-spectral spec {self:?}")));
        }
        Ok(())
    }

    pub fn log_hyper_prior(&self) -> f64 {
        -(self.n_freq as f64) * (self.log10_rho_bounds.1 - self.log10_rho_bounds.0).ln()
    }

    pub fn hyper_space(&self) -> ParameterSpace {
        let (lo, hi) = self.log10_rho_bounds;
        let mut b = ParameterSpace::builder();
        for i in 1..=self.n_freq {
            b = b.interval(format!("log10_rho_{i}"), lo, hi, Block::Hyper);
        }
        b.build().expect("validated bounds")
    }
}

/// Coefficient names in design-matrix column order: `a_1, b_1, a_2, b_2, ...`
/// (`a` scales sines, `b` cosines).
pub fn coefficient_names(n_freq: usize) -> Vec<String> {
    (1..=n_freq)
        .flat_map(|k| [format!("a_{k}"), format!("b_{k}")])
        .collect()
}

/// Dataset products that make every density evaluation independent of the
/// number of time samples: `F^T F`, `F^T d`, `d^T d`.
#[derive(Debug, Clone)]
pub struct PtaProducts {
    ftf: DMatrix<f64>,
    ftd: DVector<f64>,
    dtd: f64,
    sigma2: f64,
    n_data: usize,
    n_freq: usize,
    /// `ln(f_i / f_ref)` per bin.
    log_ratio: Vec<f64>,
}

impl PtaProducts {
    pub fn new(ds: &PtaDataset, f_ref: f64) -> Result<Self> {
        if !(ds.sigma() > 0.0) {
            return Err(Error::InvalidConfig("white-noise sigma must be positive".into()));
        }
        if !(f_ref > 0.0 && f_ref.is_finite()) {
            return Err(Error::InvalidConfig(format!("f_ref = {f_ref}")));
        }
        let f = ds.design_matrix();
        let d = DVector::from_column_slice(ds.data());
        Ok(Self {
            ftf: f.transpose() * &f,
            ftd: f.transpose() * &d,
            dtd: d.dot(&d),
            sigma2: ds.sigma() * ds.sigma(),
            n_data: ds.len(),
            n_freq: ds.n_freq(),
            log_ratio: ds.freqs().iter().map(|fi| (fi / f_ref).ln()).collect(),
        })
    }

    /// Builds the products from precomputed pieces, e.g. a design matrix
    /// with columns that carry no signal.
    pub fn from_parts(ftf: DMatrix<f64>, ftd: DVector<f64>, dtd: f64, sigma2: f64, n_data: usize, log_ratio: Vec<f64>) -> Result<Self> {
        let n_freq = log_ratio.len();
        if ftf.nrows() != 2 * n_freq || ftf.ncols() != 2 * n_freq || ftd.len() != 2 * n_freq {
            return Err(Error::DimensionMismatch {
                expected: 2 * n_freq,
                found: ftd.len(),
            });
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidConfig("white-noise variance must be positive".into()));
        }
        Ok(Self {
            ftf,
            ftd,
            dtd,
            sigma2,
            n_data,
            n_freq,
            log_ratio,
        })
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }
    pub fn n_coeff(&self) -> usize {
        2 * self.n_freq
    }
    pub fn log_ratio(&self) -> &[f64] {
        &self.log_ratio
    }
    pub fn ftf(&self) -> &DMatrix<f64> {
        &self.ftf
    }
    pub fn ftd(&self) -> &DVector<f64> {
        &self.ftd
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn n_data(&self) -> usize {
        self.n_data
    }

    /// `-1/2 |d - F a|^2 / sigma^2`, adding `F^T (d - F a) / sigma^2` into `grad`.
    pub fn loglike_grad(&self, a: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n_coeff();
        let mut quad = self.dtd;
        for i in 0..n {
            let mut fa = 0.0;
            for j in 0..n {
                fa += self.ftf[(i, j)] * a[j];
            }
            quad += a[i] * fa - 2.0 * a[i] * self.ftd[i];
            grad[i] += (self.ftd[i] - fa) / self.sigma2;
        }
        -0.5 * quad / self.sigma2
    }

    /// Coefficient prior with per-bin `ln phi`; adds `-a/phi` into `grad_a`
    /// and `d/d ln phi_bin` into `grad_ln_phi`.
    fn coeff_prior_grad(&self, a: &[f64], ln_phi: &[f64], grad_a: &mut [f64], grad_ln_phi: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (bin, &lphi) in ln_phi.iter().enumerate() {
            let inv = (-lphi).exp();
            let mut g = 0.0;
            for c in [2 * bin, 2 * bin + 1] {
                let r = a[c] * a[c] * inv;
                lp += -0.5 * r - 0.5 * lphi - LN_SQRT_2PI;
                grad_a[c] -= a[c] * inv;
                g += 0.5 * r - 0.5;
            }
            grad_ln_phi[bin] += g;
        }
        lp
    }

    fn precision(&self, phi_bins: &[f64]) -> Result<Cholesky<f64, Dyn>> {
        let mut p = &self.ftf / self.sigma2;
        for (bin, &phi) in phi_bins.iter().enumerate() {
            if !(phi > 0.0) {
                return Err(Error::NonPositiveVariance { index: bin, value: phi });
            }
            p[(2 * bin, 2 * bin)] += 1.0 / phi;
            p[(2 * bin + 1, 2 * bin + 1)] += 1.0 / phi;
        }
        Cholesky::new(p).ok_or_else(|| Error::NumericalSingular("posterior precision of the coefficients".into()))
    }

    /// Exact Gaussian conditional `p(a | phi, d)`: mean, covariance and the
    /// lower Cholesky factor of the covariance.
    pub fn conditional_moments(&self, phi_bins: &[f64]) -> Result<ConditionalMoments> {
        let chol_p = self.precision(phi_bins)?;
        let b = &self.ftd / self.sigma2;
        let mean = chol_p.solve(&b);
        let cov = chol_p.inverse();
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone())
            .ok_or_else(|| Error::NumericalSingular("conditional covariance of the coefficients".into()))?
            .l();
        Ok(ConditionalMoments {
            mean,
            cov: sym,
            chol,
        })
    }

    /// `log N(d; 0, sigma^2 I + F Phi F^T)` through the `2N_f` inner form,
    /// with its gradient with respect to `ln phi` of each bin.
    pub fn marginal(&self, phi_bins: &[f64]) -> Result<(f64, Vec<f64>)> {
        if phi_bins.len() != self.n_freq {
            return Err(Error::DimensionMismatch {
                expected: self.n_freq,
                found: phi_bins.len(),
            });
        }
        let chol_p = self.precision(phi_bins)?;
        let b = &self.ftd / self.sigma2;
        let mu = chol_p.solve(&b);
        let ln_det_p: f64 = 2.0 * chol_p.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let ln_det_phi: f64 = 2.0 * phi_bins.iter().map(|p| p.ln()).sum::<f64>();
        let ln_det_c = self.n_data as f64 * self.sigma2.ln() + ln_det_phi + ln_det_p;
        let quad = self.dtd / self.sigma2 - b.dot(&mu);
        let value = -0.5 * (self.n_data as f64 * LN_2PI + ln_det_c + quad);
        let cov = chol_p.inverse();
        let grad = phi_bins
            .iter()
            .enumerate()
            .map(|(bin, &phi)| {
                [2 * bin, 2 * bin + 1]
                    .iter()
                    .map(|&c| 0.5 * (mu[c] * mu[c] + cov[(c, c)]) / phi - 0.5)
                    .sum()
            })
            .collect();
        Ok((value, grad))
    }
}

#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub chol: DMatrix<f64>,
}

fn check_coeffs(ds: &PtaDataset, a: &[f64]) -> Result<()> {
    if a.len() != 2 * ds.n_freq() {
        return Err(Error::DimensionMismatch {
            expected: 2 * ds.n_freq(),
            found: a.len(),
        });
    }
    Ok(())
}

/// `-1/2 (d - F a)^T (d - F a) / sigma^2`, evaluated on the residual directly.
pub fn pta_loglike(ds: &PtaDataset, a: &[f64]) -> Result<f64> {
    check_coeffs(ds, a)?;
    if !(ds.sigma() > 0.0) {
        return Err(Error::InvalidConfig("white-noise sigma must be positive".into()));
    }
    let f = ds.design_matrix();
    let r = DVector::from_column_slice(ds.data()) - f * DVector::from_column_slice(a);
    Ok(-0.5 * r.norm_squared() / (ds.sigma() * ds.sigma()))
}

/// `sum_c log N(a_c; 0, phi_bin(c))` where bin `i` covers columns `2i, 2i+1`.
pub fn pta_coeff_prior_logp(a: &[f64], phi_bins: &[f64]) -> Result<f64> {
    if a.len() != 2 * phi_bins.len() {
        return Err(Error::DimensionMismatch {
            expected: 2 * phi_bins.len(),
            found: a.len(),
        });
    }
    let mut lp = 0.0;
    for (bin, &phi) in phi_bins.iter().enumerate() {
        if !(phi > 0.0) {
            return Err(Error::NonPositiveVariance { index: bin, value: phi });
        }
        for c in [2 * bin, 2 * bin + 1] {
            lp += -0.5 * a[c] * a[c] / phi - 0.5 * (2.0 * std::f64::consts::PI * phi).ln();
        }
    }
    Ok(lp)
}

/// `phi_i = A (f_i / f_ref)^{-gamma}`.
pub fn power_law_phi(amplitude: f64, gamma: f64, freqs: &[f64], f_ref: f64) -> Result<Vec<f64>> {
    if !(amplitude > 0.0) {
        return Err(Error::NonPositiveAmplitude(amplitude));
    }
    if !(f_ref > 0.0) || freqs.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::InvalidConfig("frequencies must be positive".into()));
    }
    Ok(freqs.iter().map(|f| amplitude * (f / f_ref).powf(-gamma)).collect())
}

/// `log10 rho_i = log10_A - gamma log10(f_i / f_ref)`.
pub fn pta_constraint(log10_a: f64, gamma: f64, freqs: &[f64], f_ref: f64) -> Result<Vec<f64>> {
    check_distinct_freqs(freqs)?;
    Ok(freqs.iter().map(|f| log10_a - gamma * (f / f_ref).log10()).collect())
}

pub(crate) fn check_distinct_freqs(freqs: &[f64]) -> Result<()> {
    if freqs.len() < 2 {
        return Err(Error::DegenerateFrequencies(format!(
            "{} frequency bin(s) cannot separate amplitude from spectral index",
            freqs.len()
        )));
    }
    if freqs.iter().all(|f| *f == freqs[0]) {
        return Err(Error::DegenerateFrequencies("all frequencies are equal".into()));
    }
    Ok(())
}

fn coefficient_space(n_freq: usize) -> crate::model::SpaceBuilder {
    let mut b = ParameterSpace::builder();
    for name in coefficient_names(n_freq) {
        b = b.unbounded(name, Block::Local);
    }
    b
}

/// Joint posterior over coefficients and power-law hyper-parameters.
/// Parameter order: `a_1, b_1, ..., a_Nf, b_Nf, log10_A, gamma`.
#[derive(Debug, Clone)]
pub struct PowerLawModel {
    products: PtaProducts,
    spec: PowerLawSpec,
    space: ParameterSpace,
}

impl PowerLawModel {
    pub fn new(ds: &PtaDataset, spec: PowerLawSpec) -> Result<Self> {
        spec.validate()?;
        let products = PtaProducts::new(ds, spec.f_ref_for(ds))?;
        let space = coefficient_space(ds.n_freq())
            .interval("log10_A", spec.log10_a_bounds.0, spec.log10_a_bounds.1, Block::Hyper)
            .interval("gamma", spec.gamma_bounds.0, spec.gamma_bounds.1, Block::Hyper)
            .build()?;
        Ok(Self { products, spec, space })
    }

    pub fn products(&self) -> &PtaProducts {
        &self.products
    }

    pub fn spec(&self) -> &PowerLawSpec {
        &self.spec
    }

    /// Per-bin `ln phi` at `(log10_A, gamma)`.
    pub fn ln_phi(&self, log10_a: f64, gamma: f64) -> Vec<f64> {
        self.products
            .log_ratio
            .iter()
            .map(|lr| log10_a * LN_10 - gamma * lr)
            .collect()
    }

    pub fn phi(&self, log10_a: f64, gamma: f64) -> Vec<f64> {
        self.ln_phi(log10_a, gamma).into_iter().map(f64::exp).collect()
    }

    /// Chain rule from `d/d ln phi_bin` to `(d/d log10_A, d/d gamma)`.
    pub fn hyper_grad(&self, grad_ln_phi: &[f64]) -> (f64, f64) {
        let ga = grad_ln_phi.iter().sum::<f64>() * LN_10;
        let gg = -grad_ln_phi
            .iter()
            .zip(&self.products.log_ratio)
            .map(|(g, lr)| g * lr)
            .sum::<f64>();
        (ga, gg)
    }
}

impl TargetModel for PowerLawModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.products.n_coeff();
        let (la, g) = (theta[n], theta[n + 1]);
        grad.iter_mut().for_each(|x| *x = 0.0);
        if !self.spec.contains(la, g) {
            return f64::NEG_INFINITY;
        }
        let ln_phi = self.ln_phi(la, g);
        let mut g_ln_phi = vec![0.0; self.products.n_freq];
        let (ga, gh) = grad.split_at_mut(n);
        let lp = self.products.loglike_grad(&theta[..n], ga)
            + self.products.coeff_prior_grad(&theta[..n], &ln_phi, ga, &mut g_ln_phi)
            + self.spec.log_hyper_prior();
        let (da, dg) = self.hyper_grad(&g_ln_phi);
        gh[0] = da;
        gh[1] = dg;
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let la = rng.random_range(self.spec.log10_a_bounds.0..self.spec.log10_a_bounds.1);
        let g = rng.random_range(self.spec.gamma_bounds.0..self.spec.gamma_bounds.1);
        let mut theta: Vec<f64> = self
            .ln_phi(la, g)
            .iter()
            .flat_map(|lp| [*lp, *lp])
            .map(|lp| (0.5 * lp).exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        theta.push(la);
        theta.push(g);
        Some(theta)
    }
}

/// `pta_loglike + pta_coeff_prior_logp(power_law_phi) + log hyper-prior`.
pub fn pta_powerlaw_logp(ds: &PtaDataset, spec: &PowerLawSpec, a: &[f64], log10_a: f64, gamma: f64) -> Result<f64> {
    check_coeffs(ds, a)?;
    let space = spec.hyper_space();
    space.check(&[log10_a, gamma])?;
    let phi = power_law_phi(10f64.powf(log10_a), gamma, ds.freqs(), spec.f_ref_for(ds))?;
    Ok(pta_loglike(ds, a)? + pta_coeff_prior_logp(a, &phi)? + spec.log_hyper_prior())
}

/// Joint posterior over coefficients and free per-bin log variances.
/// Parameter order: `a_1, b_1, ..., a_Nf, b_Nf, log10_rho_1, ..., log10_rho_Nf`.
#[derive(Debug, Clone)]
pub struct FreeSpectralModel {
    products: PtaProducts,
    spec: FreeSpectralSpec,
    space: ParameterSpace,
}

impl FreeSpectralModel {
    pub fn new(ds: &PtaDataset, spec: FreeSpectralSpec) -> Result<Self> {
        spec.validate()?;
        if spec.n_freq != ds.n_freq() {
            return Err(Error::DimensionMismatch {
                expected: ds.n_freq(),
                found: spec.n_freq,
            });
        }
        let products = PtaProducts::new(ds, ds.f_ref())?;
        let (lo, hi) = spec.log10_rho_bounds;
        let mut b = coefficient_space(ds.n_freq());
        for i in 1..=spec.n_freq {
            b = b.interval(format!("log10_rho_{i}"), lo, hi, Block::Hyper);
        }
        Ok(Self {
            products,
            spec,
            space: b.build()?,
        })
    }

    pub fn spec(&self) -> &FreeSpectralSpec {
        &self.spec
    }

    pub fn products(&self) -> &PtaProducts {
        &self.products
    }
}

impl TargetModel for FreeSpectralModel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.products.n_coeff();
        let (lo, hi) = self.spec.log10_rho_bounds;
        grad.iter_mut().for_each(|x| *x = 0.0);
        if theta[n..].iter().any(|l| !(*l > lo && *l < hi)) {
            return f64::NEG_INFINITY;
        }
        let ln_phi: Vec<f64> = theta[n..].iter().map(|l| l * LN_10).collect();
        let mut g_ln_phi = vec![0.0; self.products.n_freq];
        let (ga, gh) = grad.split_at_mut(n);
        let lp = self.products.loglike_grad(&theta[..n], ga)
            + self.products.coeff_prior_grad(&theta[..n], &ln_phi, ga, &mut g_ln_phi)
            + self.spec.log_hyper_prior();
        for (g, d) in gh.iter_mut().zip(&g_ln_phi) {
            *g = d * LN_10;
        }
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let (lo, hi) = self.spec.log10_rho_bounds;
        let l: Vec<f64> = (0..self.spec.n_freq).map(|_| rng.random_range(lo..hi)).collect();
        let mut theta: Vec<f64> = l
            .iter()
            .flat_map(|li| [*li, *li])
            .map(|li| 10f64.powf(0.5 * li) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        theta.extend(l);
        Some(theta)
    }
}

pub fn pta_freespectral_logp(ds: &PtaDataset, spec: &FreeSpectralSpec, a: &[f64], log10_rho: &[f64]) -> Result<f64> {
    check_coeffs(ds, a)?;
    spec.hyper_space().check(log10_rho)?;
    let phi: Vec<f64> = log10_rho.iter().map(|l| 10f64.powf(*l)).collect();
    Ok(pta_loglike(ds, a)? + pta_coeff_prior_logp(a, &phi)? + spec.log_hyper_prior())
}

/// `log N(d; 0, sigma^2 I + F Phi F^T)` at a power-law point.
pub fn pta_analytic_marginal_logp(ds: &PtaDataset, spec: &PowerLawSpec, log10_a: f64, gamma: f64) -> Result<f64> {
    spec.hyper_space().check(&[log10_a, gamma])?;
    let model = PowerLawModel::new(ds, *spec)?;
    Ok(model.products.marginal(&model.phi(log10_a, gamma))?.0)
}

/// Power-law posterior with the coefficients integrated out analytically:
/// a density over `(log10_A, gamma)` only.
#[derive(Debug, Clone)]
pub struct PowerLawMarginal {
    model: PowerLawModel,
    space: ParameterSpace,
}

impl PowerLawMarginal {
    pub fn new(ds: &PtaDataset, spec: PowerLawSpec) -> Result<Self> {
        let model = PowerLawModel::new(ds, spec)?;
        let space = spec.hyper_space();
        Ok(Self { model, space })
    }

    pub fn model(&self) -> &PowerLawModel {
        &self.model
    }
}

impl TargetModel for PowerLawMarginal {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if !self.model.spec.contains(theta[0], theta[1]) {
            return f64::NEG_INFINITY;
        }
        match self.model.products.marginal(&self.model.phi(theta[0], theta[1])) {
            Ok((v, g_ln_phi)) => {
                let (ga, gg) = self.model.hyper_grad(&g_ln_phi);
                grad[0] = ga;
                grad[1] = gg;
                v + self.model.spec.log_hyper_prior()
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let s = &self.model.spec;
        Some(vec![
            rng.random_range(s.log10_a_bounds.0..s.log10_a_bounds.1),
            rng.random_range(s.gamma_bounds.0..s.gamma_bounds.1),
        ])
    }
}

/// A PTA hierarchical model whose prior covariance is diagonal and set per
/// frequency bin by the hyper block. Coefficients come first in parameter
/// order, the hyper block last.
pub trait SpectralModel: TargetModel {
    fn products(&self) -> &PtaProducts;

    fn hyper_space(&self) -> ParameterSpace;

    /// Per-bin `ln phi`, or `None` outside the hyper-prior support.
    fn ln_phi_at(&self, hyper: &[f64]) -> Option<Vec<f64>>;

    /// Chain rule from `d/d ln phi_bin` to the hyper block.
    fn pull_ln_phi(&self, grad_ln_phi: &[f64], grad_hyper: &mut [f64]);

    /// Log hyper-prior density inside its support.
    fn log_hyper_prior(&self) -> f64;
}

impl SpectralModel for PowerLawModel {
    fn products(&self) -> &PtaProducts {
        &self.products
    }
    fn hyper_space(&self) -> ParameterSpace {
        self.spec.hyper_space()
    }
    fn ln_phi_at(&self, hyper: &[f64]) -> Option<Vec<f64>> {
        self.spec
            .contains(hyper[0], hyper[1])
            .then(|| self.ln_phi(hyper[0], hyper[1]))
    }
    fn pull_ln_phi(&self, grad_ln_phi: &[f64], grad_hyper: &mut [f64]) {
        let (ga, gg) = self.hyper_grad(grad_ln_phi);
        grad_hyper[0] = ga;
        grad_hyper[1] = gg;
    }
    fn log_hyper_prior(&self) -> f64 {
        self.spec.log_hyper_prior()
    }
}

impl SpectralModel for FreeSpectralModel {
    fn products(&self) -> &PtaProducts {
        &self.products
    }
    fn hyper_space(&self) -> ParameterSpace {
        self.spec.hyper_space()
    }
    fn ln_phi_at(&self, hyper: &[f64]) -> Option<Vec<f64>> {
        let (lo, hi) = self.spec.log10_rho_bounds;
        hyper
            .iter()
            .all(|l| *l > lo && *l < hi)
            .then(|| hyper.iter().map(|l| l * LN_10).collect())
    }
    fn pull_ln_phi(&self, grad_ln_phi: &[f64], grad_hyper: &mut [f64]) {
        for (g, d) in grad_hyper.iter_mut().zip(grad_ln_phi) {
            *g = d * LN_10;
        }
    }
    fn log_hyper_prior(&self) -> f64 {
        self.spec.log_hyper_prior()
    }
}
