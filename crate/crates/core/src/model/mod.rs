//! Differentiable log-density targets and the parameter spaces they live on.
//!
//! Every model, baseline and pipeline stage is exposed to the sampler only
//! through [`TargetModel`]. Bounded coordinates are handled by
//! [`UnconstrainedTarget`], which moves the density to the real line with a
//! logit-affine map and folds in the log-Jacobian.

mod space;
mod transform;

pub use space::{Block, Bound, ParamEntry, ParameterSpace, SpaceBuilder};
pub use transform::Transform;

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};

/// Unnormalized log-density with an analytic gradient.
///
/// Implementations must be pure: evaluation may happen concurrently from
/// several chains. `log_density` may return `-inf` only outside the declared
/// bounds of [`TargetModel::space`].
pub trait TargetModel: Send + Sync {
    fn space(&self) -> &ParameterSpace;

    /// Writes the gradient into `grad` and returns the log-density.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.log_density_grad(theta, &mut g)
    }

    fn grad_log_density(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.log_density_grad(theta, &mut g);
        g
    }

    fn dim(&self) -> usize {
        self.space().len()
    }

    /// A draw from the model's prior, when the model knows how to produce one.
    /// Used for overdispersed chain initialization.
    fn prior_draw(&self, _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }
}

impl<T: TargetModel + ?Sized> TargetModel for Arc<T> {
    fn space(&self) -> &ParameterSpace {
        (**self).space()
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(theta, grad)
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        (**self).prior_draw(rng)
    }
}

impl<T: TargetModel + ?Sized> TargetModel for &T {
    fn space(&self) -> &ParameterSpace {
        (**self).space()
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(theta, grad)
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (**self).log_density(theta)
    }
    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        (**self).prior_draw(rng)
    }
}

/// Maps `theta` to the unconstrained space. Returns the image and
/// `ln |det d(theta_u)/d(theta)|`.
pub fn to_unconstrained(space: &ParameterSpace, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    space.check(theta)?;
    let mut logdet = 0.0;
    let u = space
        .entries()
        .iter()
        .zip(theta)
        .map(|(e, &x)| {
            let t = e.bound.transform();
            logdet += t.log_det_forward(x);
            t.forward(x)
        })
        .collect();
    Ok((u, logdet))
}

/// Inverse of [`to_unconstrained`]. Returns `theta` and `ln |det d(theta)/d(theta_u)|`.
pub fn to_constrained(space: &ParameterSpace, u: &[f64]) -> (Vec<f64>, f64) {
    let mut logdet = 0.0;
    let theta = space
        .entries()
        .iter()
        .zip(u)
        .map(|(e, &v)| {
            let t = e.bound.transform();
            logdet += t.log_det_inverse(v);
            t.inverse(v)
        })
        .collect();
    (theta, logdet)
}

/// A model re-expressed over the unconstrained space, with the log-Jacobian
/// of the inverse transform added to the density.
#[derive(Debug, Clone)]
pub struct UnconstrainedTarget<M> {
    inner: M,
    transforms: Vec<Transform>,
    space: ParameterSpace,
}

pub fn unconstrained_target<M: TargetModel>(model: M) -> UnconstrainedTarget<M> {
    UnconstrainedTarget::new(model)
}

impl<M: TargetModel> UnconstrainedTarget<M> {
    pub fn new(inner: M) -> Self {
        let transforms = inner.space().transforms();
        let entries = inner
            .space()
            .entries()
            .iter()
            .map(|e| ParamEntry {
                name: e.name.clone(),
                bound: Bound::Unbounded,
                block: e.block,
            })
            .collect();
        let space = ParameterSpace::new(entries).expect("names already validated");
        Self {
            inner,
            transforms,
            space,
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn to_constrained(&self, u: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(u).map(|(t, &v)| t.inverse(v)).collect()
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        to_unconstrained(self.inner.space(), theta).map(|(u, _)| u)
    }
}

impl<M: TargetModel> TargetModel for UnconstrainedTarget<M> {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let theta = self.to_constrained(u);
        let lp = self.inner.log_density_grad(&theta, grad);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut logdet = 0.0;
        for ((g, t), &v) in grad.iter_mut().zip(&self.transforms).zip(u) {
            logdet += t.log_det_inverse(v);
            *g = *g * t.inverse_derivative(v) + t.log_det_inverse_grad(v);
        }
        lp + logdet
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let theta = self.inner.prior_draw(rng)?;
        self.to_unconstrained(&theta).ok()
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with step `h`: `max_i |g_i - fd_i| / (|g_i| + 1e-12)`.
pub fn check_gradient<M: TargetModel + ?Sized>(model: &M, theta: &[f64], h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::Precondition(format!("finite-difference step must be positive, got {h}")));
    }
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: theta.len(),
        });
    }
    let mut grad = vec![0.0; theta.len()];
    let lp = model.log_density_grad(theta, &mut grad);
    if !lp.is_finite() {
        return Err(Error::NonFiniteDensity {
            context: format!("{theta:?}"),
        });
    }
    let mut worst = 0.0f64;
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = model.log_density(&probe);
        probe[i] = theta[i] - h;
        let down = model.log_density(&probe);
        probe[i] = theta[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteDensity {
                context: format!("stencil of coordinate {i} at {theta:?}"),
            });
        }
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / (grad[i].abs() + 1e-12));
    }
    Ok(worst)
}
