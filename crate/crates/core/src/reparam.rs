//! Sampling schemes for hierarchical models: naive (NS), prior
//! reparameterized (PRS) and conditional-posterior reparameterized (CPRS).
//!
//! Each scheme is a [`ReparamTarget`]: a density over standardized variables
//! `u` together with the map back to the native parameters. For every scheme
//! `inner_logp(u) - log_jacobian(u) = native_logp(pushforward(u))`.

use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hmc::{sample_chains, Chain, HmcConfig};
use crate::model::{ParamEntry, ParameterSpace, TargetModel};
use crate::models::funnel::{GaussianLikelihood, GeneralizedFunnel, NealFunnel};
use crate::models::pta::{FreeSpectralModel, PowerLawModel, PowerLawSpec, SpectralModel};
use crate::models::HierarchicalModel;
use crate::sim::PtaDataset;
use crate::special::LN_SQRT_2PI;

pub use crate::models::pta::ConditionalMoments;

pub trait ReparamTarget: TargetModel {
    /// The model whose parameters `pushforward` produces.
    fn native(&self) -> &dyn TargetModel;

    fn pushforward(&self, u: &[f64]) -> Vec<f64>;

    /// `ln |det d(theta)/d(u)|` at `u`.
    fn log_jacobian(&self, u: &[f64]) -> f64;
}

fn hat_space(native: &ParameterSpace, standardized: impl Fn(&ParamEntry) -> bool) -> ParameterSpace {
    let entries = native
        .entries()
        .iter()
        .map(|e| {
            if standardized(e) {
                ParamEntry {
                    name: format!("{}_hat", e.name),
                    bound: crate::model::Bound::Unbounded,
                    block: e.block,
                }
            } else {
                e.clone()
            }
        })
        .collect();
    ParameterSpace::new(entries).expect("names derived from a valid space")
}

fn std_normal_draws(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Naive sampling: the model itself.
#[derive(Debug, Clone)]
pub struct Ns<M>(pub M);

pub fn ns_target<M: TargetModel>(model: M) -> Ns<M> {
    Ns(model)
}

impl<M: TargetModel> TargetModel for Ns<M> {
    fn space(&self) -> &ParameterSpace {
        self.0.space()
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.0.log_density_grad(theta, grad)
    }
    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        self.0.prior_draw(rng)
    }
}

impl<M: TargetModel> ReparamTarget for Ns<M> {
    fn native(&self) -> &dyn TargetModel {
        &self.0
    }
    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
    fn log_jacobian(&self, _u: &[f64]) -> f64 {
        0.0
    }
}

/// PRS for the classic (and likelihood) funnel: `y = sigma_y y_hat`,
/// `x_i = e^{y/2} x_hat_i`.
#[derive(Debug, Clone)]
pub struct PrsFunnel {
    model: NealFunnel,
    space: ParameterSpace,
}

impl PrsFunnel {
    pub fn new(model: NealFunnel) -> Self {
        let space = hat_space(model.space(), |_| true);
        Self { model, space }
    }
}

impl TargetModel for PrsFunnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.model.spec().n_local;
        let s = self.model.spec().hyper_sigma;
        let y = s * u[n];
        let scale = (0.5 * y).exp();
        let mut lp = -0.5 * u[n] * u[n] - LN_SQRT_2PI;
        let mut gy = -u[n];
        for i in 0..n {
            lp += -0.5 * u[i] * u[i] - LN_SQRT_2PI;
            grad[i] = -u[i];
            if let Some(lik) = self.model.likelihood() {
                let x = scale * u[i];
                let r = x - lik.mean;
                let g = -r / (lik.sigma * lik.sigma);
                lp += crate::special::normal_logpdf(x, lik.mean, lik.sigma);
                grad[i] += g * scale;
                gy += g * x * 0.5 * s;
            }
        }
        grad[n] = gy;
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(std_normal_draws(self.space.len(), rng))
    }
}

impl ReparamTarget for PrsFunnel {
    fn native(&self) -> &dyn TargetModel {
        &self.model
    }

    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.model.spec().n_local;
        let y = self.model.spec().hyper_sigma * u[n];
        let scale = (0.5 * y).exp();
        let mut theta: Vec<f64> = u[..n].iter().map(|v| scale * v).collect();
        theta.push(y);
        theta
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        let n = self.model.spec().n_local;
        let s = self.model.spec().hyper_sigma;
        s.ln() + 0.5 * n as f64 * s * u[n]
    }
}

/// PRS for the generalized funnel: `x_i = z_i x_hat_i`, `log10 z_i` unchanged.
#[derive(Debug, Clone)]
pub struct PrsGeneralizedFunnel {
    model: GeneralizedFunnel,
    space: ParameterSpace,
}

impl PrsGeneralizedFunnel {
    pub fn new(model: GeneralizedFunnel) -> Self {
        let space = hat_space(model.space(), |e| e.block == crate::model::Block::Local);
        Self { model, space }
    }
}

impl TargetModel for PrsGeneralizedFunnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.model.spec().n_local;
        let a = self.model.spec().a_bound;
        let mut lp = 0.0;
        for i in 0..n {
            let l = u[n + i];
            if !(l > -a && l < a) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::NEG_INFINITY;
            }
            lp += -0.5 * u[i] * u[i] - LN_SQRT_2PI - (2.0 * a).ln();
            grad[i] = -u[i];
            grad[n + i] = 0.0;
            if let Some(lik) = self.model.likelihood() {
                let z = 10f64.powf(l);
                let x = z * u[i];
                let g = -(x - lik.mean) / (lik.sigma * lik.sigma);
                lp += crate::special::normal_logpdf(x, lik.mean, lik.sigma);
                grad[i] += g * z;
                grad[n + i] = g * x * std::f64::consts::LN_10;
            }
        }
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let n = self.model.spec().n_local;
        let mut u = std_normal_draws(n, rng);
        u.extend_from_slice(&self.model.prior_draw(rng)?[n..]);
        Some(u)
    }
}

impl ReparamTarget for PrsGeneralizedFunnel {
    fn native(&self) -> &dyn TargetModel {
        &self.model
    }

    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.model.spec().n_local;
        let mut theta: Vec<f64> = (0..n).map(|i| 10f64.powf(u[n + i]) * u[i]).collect();
        theta.extend_from_slice(&u[n..]);
        theta
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        let n = self.model.spec().n_local;
        u[n..].iter().sum::<f64>() * std::f64::consts::LN_10
    }
}

/// Per-coordinate Gaussian conditional of `x ~ N(0, sqrt(v))` given one datum
/// `d ~ N(x, sigma)`: mean, sd, `log N(d; 0, sqrt(v + sigma^2))` and its
/// derivative in `v`.
fn funnel_conditional(v: f64, lik: &GaussianLikelihood) -> (f64, f64, f64, f64) {
    let s2 = lik.sigma * lik.sigma;
    let tot = v + s2;
    let tau2 = v * s2 / tot;
    let mean = tau2 * lik.mean / s2;
    let lm = -0.5 * lik.mean * lik.mean / tot - 0.5 * tot.ln() - LN_SQRT_2PI;
    let dlm = 0.5 * (lik.mean * lik.mean / tot - 1.0) / tot;
    (mean, tau2.sqrt(), lm, dlm)
}

fn no_likelihood(kind: &str) -> Error {
    Error::UnsupportedModel(format!(
        "conditional-posterior reparameterization needs a Gaussian conditional; {kind} has no likelihood"
    ))
}

/// CPRS for the likelihood funnel: `y = sigma_y y_hat`,
/// `x_i = m(y) + tau(y) x_hat_i` with the exact conditional `p(x_i | y, d)`.
#[derive(Debug, Clone)]
pub struct CprsFunnel {
    model: NealFunnel,
    lik: GaussianLikelihood,
    space: ParameterSpace,
}

impl CprsFunnel {
    pub fn new(model: NealFunnel) -> Result<Self> {
        let lik = *model.likelihood().ok_or_else(|| no_likelihood("the classic funnel"))?;
        let space = hat_space(model.space(), |_| true);
        Ok(Self { model, lik, space })
    }
}

impl TargetModel for CprsFunnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.model.spec().n_local;
        let s = self.model.spec().hyper_sigma;
        let v = (s * u[n]).exp();
        let (_, _, lm, dlm) = funnel_conditional(v, &self.lik);
        let mut lp = -0.5 * u[n] * u[n] - LN_SQRT_2PI + n as f64 * lm;
        for i in 0..n {
            lp += -0.5 * u[i] * u[i] - LN_SQRT_2PI;
            grad[i] = -u[i];
        }
        grad[n] = -u[n] + n as f64 * dlm * v * s;
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(std_normal_draws(self.space.len(), rng))
    }
}

impl ReparamTarget for CprsFunnel {
    fn native(&self) -> &dyn TargetModel {
        &self.model
    }

    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.model.spec().n_local;
        let y = self.model.spec().hyper_sigma * u[n];
        let (m, tau, _, _) = funnel_conditional(y.exp(), &self.lik);
        let mut theta: Vec<f64> = u[..n].iter().map(|v| m + tau * v).collect();
        theta.push(y);
        theta
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        let n = self.model.spec().n_local;
        let s = self.model.spec().hyper_sigma;
        let (_, tau, _, _) = funnel_conditional((s * u[n]).exp(), &self.lik);
        s.ln() + n as f64 * tau.ln()
    }
}

/// CPRS for the generalized likelihood funnel: `x_i = m(z_i) + tau(z_i) x_hat_i`,
/// `log10 z_i` unchanged.
#[derive(Debug, Clone)]
pub struct CprsGeneralizedFunnel {
    model: GeneralizedFunnel,
    lik: GaussianLikelihood,
    space: ParameterSpace,
}

impl CprsGeneralizedFunnel {
    pub fn new(model: GeneralizedFunnel) -> Result<Self> {
        let lik = *model.likelihood().ok_or_else(|| no_likelihood("the generalized funnel"))?;
        let space = hat_space(model.space(), |e| e.block == crate::model::Block::Local);
        Ok(Self { model, lik, space })
    }
}

impl TargetModel for CprsGeneralizedFunnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.model.spec().n_local;
        let a = self.model.spec().a_bound;
        let mut lp = 0.0;
        for i in 0..n {
            let l = u[n + i];
            if !(l > -a && l < a) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::NEG_INFINITY;
            }
            let v = 100f64.powf(l);
            let (_, _, lm, dlm) = funnel_conditional(v, &self.lik);
            lp += -0.5 * u[i] * u[i] - LN_SQRT_2PI - (2.0 * a).ln() + lm;
            grad[i] = -u[i];
            grad[n + i] = dlm * v * 2.0 * std::f64::consts::LN_10;
        }
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let n = self.model.spec().n_local;
        let mut u = std_normal_draws(n, rng);
        u.extend_from_slice(&self.model.prior_draw(rng)?[n..]);
        Some(u)
    }
}

impl ReparamTarget for CprsGeneralizedFunnel {
    fn native(&self) -> &dyn TargetModel {
        &self.model
    }

    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.model.spec().n_local;
        let mut theta: Vec<f64> = (0..n)
            .map(|i| {
                let (m, tau, _, _) = funnel_conditional(100f64.powf(u[n + i]), &self.lik);
                m + tau * u[i]
            })
            .collect();
        theta.extend_from_slice(&u[n..]);
        theta
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        let n = self.model.spec().n_local;
        u[n..]
            .iter()
            .map(|&l| funnel_conditional(100f64.powf(l), &self.lik).1.ln())
            .sum()
    }
}

/// PRS for a PTA model: `a = sqrt(phi) a_hat`, coloring with the diagonal
/// prior Cholesky factor.
#[derive(Debug, Clone)]
pub struct PrsSpectral<S> {
    model: S,
    space: ParameterSpace,
}

impl<S: SpectralModel> PrsSpectral<S> {
    pub fn new(model: S) -> Self {
        let space = hat_space(model.space(), |e| e.block == crate::model::Block::Local);
        Self { model, space }
    }
}

impl<S: SpectralModel> TargetModel for PrsSpectral<S> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let prod = self.model.products();
        let n = prod.n_coeff();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Some(ln_phi) = self.model.ln_phi_at(&u[n..]) else {
            return f64::NEG_INFINITY;
        };
        let a: Vec<f64> = (0..n).map(|c| (0.5 * ln_phi[c / 2]).exp() * u[c]).collect();
        let mut gl = vec![0.0; n];
        let mut lp = prod.loglike_grad(&a, &mut gl) + self.model.log_hyper_prior();
        let mut g_ln_phi = vec![0.0; prod.n_freq()];
        for c in 0..n {
            lp += -0.5 * u[c] * u[c] - LN_SQRT_2PI;
            grad[c] = (0.5 * ln_phi[c / 2]).exp() * gl[c] - u[c];
            g_ln_phi[c / 2] += 0.5 * a[c] * gl[c];
        }
        self.model.pull_ln_phi(&g_ln_phi, &mut grad[n..]);
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let n = self.model.products().n_coeff();
        let mut u = std_normal_draws(n, rng);
        u.extend_from_slice(&self.model.prior_draw(rng)?[n..]);
        Some(u)
    }
}

impl<S: SpectralModel> ReparamTarget for PrsSpectral<S> {
    fn native(&self) -> &dyn TargetModel {
        &self.model
    }

    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.model.products().n_coeff();
        let mut theta = u.to_vec();
        if let Some(ln_phi) = self.model.ln_phi_at(&u[n..]) {
            for c in 0..n {
                theta[c] = (0.5 * ln_phi[c / 2]).exp() * u[c];
            }
        }
        theta
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        let n = self.model.products().n_coeff();
        self.model
            .ln_phi_at(&u[n..])
            .map(|l| l.iter().sum())
            .unwrap_or(f64::NAN)
    }
}

/// `Sigma = (F^T F / sigma^2 + phi^-1)^-1`, `mean = Sigma F^T d / sigma^2` and
/// the lower Cholesky factor of `Sigma`.
pub fn cprs_conditional_moments(ds: &PtaDataset, phi_diag: &[f64]) -> Result<ConditionalMoments> {
    if phi_diag.len() != ds.n_freq() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_freq(),
            found: phi_diag.len(),
        });
    }
    crate::models::pta::PtaProducts::new(ds, ds.f_ref())?.conditional_moments(phi_diag)
}

/// CPRS: `a = mean(eta) + L(eta) a_hat` with the exact Gaussian conditional
/// `p(a | eta, d)`. The coloring makes the inner density separate into the
/// analytic hyper-marginal plus a standard normal on `a_hat`, which is how it
/// is evaluated; the pointwise identity with the native density is tested.
#[derive(Debug, Clone)]
pub struct Cprs<S> {
    model: S,
    space: ParameterSpace,
    /// `N/2 ln(2 pi sigma^2)`: the likelihood normalization the native density omits.
    offset: f64,
}

impl<S: SpectralModel> Cprs<S> {
    pub fn new(model: S) -> Self {
        let space = hat_space(model.space(), |e| e.block == crate::model::Block::Local);
        let prod = model.products();
        let offset = 0.5 * prod.n_data() as f64 * (2.0 * std::f64::consts::PI * prod.sigma2()).ln();
        Self { model, space, offset }
    }

    pub fn model(&self) -> &S {
        &self.model
    }

    fn moments(&self, hyper: &[f64]) -> Option<ConditionalMoments> {
        let phi: Vec<f64> = self.model.ln_phi_at(hyper)?.into_iter().map(f64::exp).collect();
        self.model.products().conditional_moments(&phi).ok()
    }
}

pub fn cprs_target(ds: &PtaDataset, spec: PowerLawSpec) -> Result<Cprs<PowerLawModel>> {
    Ok(Cprs::new(PowerLawModel::new(ds, spec)?))
}

impl<S: SpectralModel> TargetModel for Cprs<S> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let prod = self.model.products();
        let n = prod.n_coeff();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Some(ln_phi) = self.model.ln_phi_at(&u[n..]) else {
            return f64::NEG_INFINITY;
        };
        let phi: Vec<f64> = ln_phi.iter().map(|l| l.exp()).collect();
        let Ok((marg, g_ln_phi)) = prod.marginal(&phi) else {
            return f64::NEG_INFINITY;
        };
        let mut lp = marg + self.offset + self.model.log_hyper_prior();
        for c in 0..n {
            lp += -0.5 * u[c] * u[c] - LN_SQRT_2PI;
            grad[c] = -u[c];
        }
        self.model.pull_ln_phi(&g_ln_phi, &mut grad[n..]);
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let n = self.model.products().n_coeff();
        let mut u = std_normal_draws(n, rng);
        u.extend_from_slice(&self.model.prior_draw(rng)?[n..]);
        Some(u)
    }
}

impl<S: SpectralModel> ReparamTarget for Cprs<S> {
    fn native(&self) -> &dyn TargetModel {
        &self.model
    }

    fn pushforward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.model.products().n_coeff();
        let mut theta = u.to_vec();
        if let Some(m) = self.moments(&u[n..]) {
            let z = nalgebra::DVector::from_column_slice(&u[..n]);
            let a = &m.mean + &m.chol * z;
            theta[..n].copy_from_slice(a.as_slice());
        }
        theta
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        let n = self.model.products().n_coeff();
        self.moments(&u[n..])
            .map(|m| m.chol.diagonal().iter().map(|d| d.ln()).sum())
            .unwrap_or(f64::NAN)
    }
}

/// The PRS target of a hierarchical model, when it exposes a prior-scale rule.
pub fn prs_target(model: &HierarchicalModel) -> Result<Arc<dyn ReparamTarget>> {
    Ok(match model {
        HierarchicalModel::Funnel(m) => Arc::new(PrsFunnel::new(m.clone())),
        HierarchicalModel::Generalized(m) => Arc::new(PrsGeneralizedFunnel::new(m.clone())),
        HierarchicalModel::PowerLaw(m) => Arc::new(PrsSpectral::new(m.clone())),
        HierarchicalModel::FreeSpectral(m) => Arc::new(PrsSpectral::new(m.clone())),
    })
}

/// The CPRS target; the funnels need a Gaussian likelihood.
pub fn cprs_for(model: &HierarchicalModel) -> Result<Arc<dyn ReparamTarget>> {
    Ok(match model {
        HierarchicalModel::Funnel(m) => Arc::new(CprsFunnel::new(m.clone())?),
        HierarchicalModel::Generalized(m) => Arc::new(CprsGeneralizedFunnel::new(m.clone())?),
        HierarchicalModel::PowerLaw(m) => Arc::new(Cprs::new(m.clone())),
        HierarchicalModel::FreeSpectral(m) => Arc::new(Cprs::<FreeSpectralModel>::new(m.clone())),
    })
}

/// Samples the standardized target and maps every draw to native
/// parameters; `logp` columns hold the native log-density.
pub fn sample_reparam<R: ReparamTarget + ?Sized>(target: &R, cfg: &HmcConfig, n_chains: usize) -> Result<Vec<Chain>> {
    let chains = sample_chains(&target, cfg, n_chains)?;
    let native = target.native();
    let names: Vec<String> = native.space().names().iter().map(|s| s.to_string()).collect();
    Ok(chains
        .into_iter()
        .map(|c| {
            let draws: Vec<Vec<f64>> = c.draws.iter().map(|u| target.pushforward(u)).collect();
            let logp = draws.iter().map(|t| native.log_density(t)).collect();
            Chain {
                names: names.clone(),
                draws,
                logp,
                stats: c.stats,
            }
        })
        .collect())
}
