//! Neal's funnel in three forms: the classic prior-only funnel, the funnel
//! with a Gaussian likelihood on every local parameter, and the generalized
//! model with one free log10 scale per local parameter.
//!
//! All log-densities keep their Gaussian and uniform normalization
//! constants so values can be compared across models.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_10, LOG10_E};

use crate::error::{Error, Result};
use crate::model::{Block, ParameterSpace, TargetModel};
use crate::special::{normal_logpdf, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicFunnelSpec {
    pub n_local: usize,
    pub hyper_sigma: f64,
}

impl Default for ClassicFunnelSpec {
    fn default() -> Self {
        Self {
            n_local: 9,
            hyper_sigma: 3.0,
        }
    }
}

impl ClassicFunnelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_local == 0 || !(self.hyper_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid funnel spec {self:?}")));
        }
        Ok(())
    }
}

/// Datum model: each local parameter is pulled toward `data_mean` with
/// standard deviation `data_sigma`, i.e. `p(d | x_i) = N(x_i; data_mean, data_sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodFunnelSpec {
    pub funnel: ClassicFunnelSpec,
    pub data_mean: f64,
    pub data_sigma: f64,
}

impl Default for LikelihoodFunnelSpec {
    fn default() -> Self {
        Self {
            funnel: ClassicFunnelSpec::default(),
            data_mean: 2.0,
            data_sigma: 5.0,
        }
    }
}

impl LikelihoodFunnelSpec {
    pub fn validate(&self) -> Result<()> {
        self.funnel.validate()?;
        if !(self.data_sigma > 0.0) {
            return Err(Error::InvalidConfig("data_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn likelihood(&self) -> GaussianLikelihood {
        GaussianLikelihood {
            mean: self.data_mean,
            sigma: self.data_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLikelihood {
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianLikelihood {
    #[inline]
    fn logp_grad(&self, x: f64) -> (f64, f64) {
        let r = x - self.mean;
        (
            normal_logpdf(x, self.mean, self.sigma),
            -r / (self.sigma * self.sigma),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralizedFunnelSpec {
    pub n_local: usize,
    /// `log10 z_i ~ Uniform(-a_bound, a_bound)`.
    pub a_bound: f64,
}

impl Default for GeneralizedFunnelSpec {
    fn default() -> Self {
        Self {
            n_local: 9,
            a_bound: 4.0,
        }
    }
}

fn local_names(n: usize, prefix: &str) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Classic funnel, optionally with a per-coordinate Gaussian likelihood.
/// Parameter order: `x_1 .. x_n`, then `y`.
#[derive(Debug, Clone)]
pub struct NealFunnel {
    spec: ClassicFunnelSpec,
    likelihood: Option<GaussianLikelihood>,
    space: ParameterSpace,
}

impl NealFunnel {
    pub fn classic(spec: ClassicFunnelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::build(spec, None))
    }

    pub fn with_likelihood(spec: LikelihoodFunnelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::build(spec.funnel, Some(spec.likelihood())))
    }

    fn build(spec: ClassicFunnelSpec, likelihood: Option<GaussianLikelihood>) -> Self {
        let mut b = ParameterSpace::builder();
        for name in local_names(spec.n_local, "x") {
            b = b.unbounded(name, Block::Local);
        }
        let space = b.unbounded("y", Block::Hyper).build().expect("unique names");
        Self {
            spec,
            likelihood,
            space,
        }
    }

    pub fn spec(&self) -> &ClassicFunnelSpec {
        &self.spec
    }

    pub fn likelihood(&self) -> Option<&GaussianLikelihood> {
        self.likelihood.as_ref()
    }
}

impl TargetModel for NealFunnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.spec.n_local;
        let y = theta[n];
        let s = self.spec.hyper_sigma;
        let inv_var = (-y).exp();
        let mut lp = normal_logpdf(y, 0.0, s);
        let mut gy = -y / (s * s);
        for i in 0..n {
            let x = theta[i];
            lp += -LN_SQRT_2PI - 0.5 * y - 0.5 * x * x * inv_var;
            gy += -0.5 + 0.5 * x * x * inv_var;
            grad[i] = -x * inv_var;
            if let Some(lik) = &self.likelihood {
                let (l, g) = lik.logp_grad(x);
                lp += l;
                grad[i] += g;
            }
        }
        grad[n] = gy;
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let y: f64 = self.spec.hyper_sigma * rng.sample::<f64, _>(StandardNormal);
        let sd = (0.5 * y).exp();
        let mut theta: Vec<f64> = (0..self.spec.n_local)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        theta.push(y);
        Some(theta)
    }
}

/// `log N(y; 0, sigma_y) + sum_i log N(x_i; 0, e^{y/2})`.
pub fn classic_funnel_logp(spec: &ClassicFunnelSpec, x: &[f64], y: f64) -> f64 {
    let m = NealFunnel::build(
        ClassicFunnelSpec {
            n_local: x.len(),
            ..*spec
        },
        None,
    );
    let mut theta = x.to_vec();
    theta.push(y);
    m.log_density(&theta)
}

/// Classic funnel plus `sum_i log N(x_i; data_mean, data_sigma)`.
pub fn likelihood_funnel_logp(spec: &LikelihoodFunnelSpec, x: &[f64], y: f64) -> f64 {
    let lik = spec.likelihood();
    classic_funnel_logp(&spec.funnel, x, y) + x.iter().map(|&xi| lik.logp_grad(xi).0).sum::<f64>()
}

/// Marginal `log p(y | d)` of the likelihood funnel, up to a constant:
/// `log N(y; 0, sigma_y) + n log N(data_mean; 0, sqrt(data_sigma^2 + e^y))`.
pub fn likelihood_funnel_analytic_marginal(y: f64, spec: &LikelihoodFunnelSpec) -> f64 {
    let n = spec.funnel.n_local as f64;
    let sd = (spec.data_sigma * spec.data_sigma + y.exp()).sqrt();
    normal_logpdf(y, 0.0, spec.funnel.hyper_sigma) + n * normal_logpdf(spec.data_mean, 0.0, sd)
}

/// Derivative of [`likelihood_funnel_analytic_marginal`] with respect to `y`.
pub fn likelihood_funnel_analytic_marginal_grad(y: f64, spec: &LikelihoodFunnelSpec) -> f64 {
    let n = spec.funnel.n_local as f64;
    let ey = y.exp();
    let v = spec.data_sigma * spec.data_sigma + ey;
    let mu2 = spec.data_mean * spec.data_mean;
    let s = spec.funnel.hyper_sigma;
    -y / (s * s) + n * ey * (-0.5 / v + 0.5 * mu2 / (v * v))
}

/// Generalized funnel: `x_i | z_i ~ N(0, z_i)` with `log10 z_i ~ Uniform(-a, a)`,
/// sampled over `log10 z`. Parameter order: `x_1 .. x_n`, then `log10_z_1 .. log10_z_n`.
#[derive(Debug, Clone)]
pub struct GeneralizedFunnel {
    spec: GeneralizedFunnelSpec,
    likelihood: Option<GaussianLikelihood>,
    space: ParameterSpace,
}

impl GeneralizedFunnel {
    pub fn new(spec: GeneralizedFunnelSpec, likelihood: Option<GaussianLikelihood>) -> Result<Self> {
        if spec.n_local == 0 || !(spec.a_bound > 0.0) || !spec.a_bound.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid generalized funnel spec {spec:?}")));
        }
        let mut b = ParameterSpace::builder();
        for name in local_names(spec.n_local, "x") {
            b = b.unbounded(name, Block::Local);
        }
        for name in local_names(spec.n_local, "log10_z") {
            b = b.interval(name, -spec.a_bound, spec.a_bound, Block::Hyper);
        }
        Ok(Self {
            spec,
            likelihood,
            space: b.build()?,
        })
    }

    pub fn spec(&self) -> &GeneralizedFunnelSpec {
        &self.spec
    }

    pub fn likelihood(&self) -> Option<&GaussianLikelihood> {
        self.likelihood.as_ref()
    }
}

impl TargetModel for GeneralizedFunnel {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.spec.n_local;
        let a = self.spec.a_bound;
        let log_box = -(2.0 * a).ln();
        let mut lp = 0.0;
        for i in 0..n {
            let x = theta[i];
            let l = theta[n + i];
            if !(l > -a && l < a) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::NEG_INFINITY;
            }
            let inv_var = (-2.0 * LN_10 * l).exp();
            lp += -LN_SQRT_2PI - LN_10 * l - 0.5 * x * x * inv_var + log_box;
            grad[i] = -x * inv_var;
            grad[n + i] = LN_10 * (x * x * inv_var - 1.0);
            if let Some(lik) = &self.likelihood {
                let (v, g) = lik.logp_grad(x);
                lp += v;
                grad[i] += g;
            }
        }
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let n = self.spec.n_local;
        let a = self.spec.a_bound;
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(-a..a)).collect();
        let mut theta: Vec<f64> = l
            .iter()
            .map(|&li| 10f64.powf(li) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        theta.extend(l);
        Some(theta)
    }
}

/// Generalized-funnel log-density with an explicit support check.
pub fn generalized_funnel_logp(spec: &GeneralizedFunnelSpec, x: &[f64], log10_z: &[f64]) -> Result<f64> {
    if x.len() != log10_z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: log10_z.len(),
        });
    }
    let m = GeneralizedFunnel::new(
        GeneralizedFunnelSpec {
            n_local: x.len(),
            ..*spec
        },
        None,
    )?;
    let mut theta = x.to_vec();
    theta.extend_from_slice(log10_z);
    m.space().check(&theta)?;
    Ok(m.log_density(&theta))
}

/// `log10 z_i = (y / 2) log10 e` for every component: the embedding of the
/// classic hyper-parameter in the generalized model.
pub fn funnel_constraint(y: f64, n_local: usize) -> Vec<f64> {
    vec![0.5 * y * LOG10_E; n_local]
}
