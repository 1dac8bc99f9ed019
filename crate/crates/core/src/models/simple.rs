//! Reference targets with known moments, used to validate the sampler.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal as Gauss;

use crate::model::{Block, Bound, ParamEntry, ParameterSpace, TargetModel};
use crate::special::LN_SQRT_2PI;

/// Independent standard normals.
#[derive(Debug, Clone)]
pub struct StandardNormal {
    space: ParameterSpace,
}

impl StandardNormal {
    pub fn new(dim: usize) -> Self {
        let entries = (0..dim)
            .map(|i| ParamEntry {
                name: format!("x_{}", i + 1),
                bound: Bound::Unbounded,
                block: Block::Local,
            })
            .collect();
        Self {
            space: ParameterSpace::new(entries).expect("generated names are unique"),
        }
    }
}

impl TargetModel for StandardNormal {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (g, &x) in grad.iter_mut().zip(theta) {
            lp -= 0.5 * x * x + LN_SQRT_2PI;
            *g = -x;
        }
        lp
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some((0..self.space.len()).map(|_| rng.sample::<f64, _>(Gauss)).collect())
    }
}

/// Uniform density on an axis-aligned box `(lower, upper)^dim`.
#[derive(Debug, Clone)]
pub struct UniformBox {
    space: ParameterSpace,
    lower: f64,
    upper: f64,
}

impl UniformBox {
    pub fn new(dim: usize, lower: f64, upper: f64) -> Self {
        let entries = (0..dim)
            .map(|i| ParamEntry {
                name: format!("u_{}", i + 1),
                bound: Bound::Interval { lower, upper },
                block: Block::Hyper,
            })
            .collect();
        Self {
            space: ParameterSpace::new(entries).expect("valid box"),
            lower,
            upper,
        }
    }
}

impl TargetModel for UniformBox {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if !self.space.contains(theta) {
            return f64::NEG_INFINITY;
        }
        -(theta.len() as f64) * (self.upper - self.lower).ln()
    }

    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(
            (0..self.space.len())
                .map(|_| rng.random_range(self.lower..self.upper))
                .collect(),
        )
    }
}

/// Diagonal Gaussian truncated to a box; exercises the bounded-coordinate path.
#[derive(Debug, Clone)]
pub struct DiagGaussianBox {
    space: ParameterSpace,
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl DiagGaussianBox {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>, lower: f64, upper: f64) -> Self {
        let entries = (0..mean.len())
            .map(|i| ParamEntry {
                name: format!("g_{}", i + 1),
                bound: Bound::Interval { lower, upper },
                block: Block::Hyper,
            })
            .collect();
        Self {
            space: ParameterSpace::new(entries).expect("valid box"),
            mean,
            sd,
        }
    }
}

impl TargetModel for DiagGaussianBox {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        if !self.space.contains(theta) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for i in 0..theta.len() {
            let z = (theta[i] - self.mean[i]) / self.sd[i];
            lp -= 0.5 * z * z;
            grad[i] = -z / self.sd[i];
        }
        lp
    }
}
