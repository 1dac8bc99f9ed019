//! Concrete densities: Neal's funnel and its generalization, the PTA
//! red-noise models, and the constraint maps between hyper-models.

pub mod constraint;
pub mod funnel;
pub mod pta;
pub mod simple;

pub use constraint::ConstraintMap;

use rand::RngCore;

use crate::model::{ParameterSpace, TargetModel};

/// The hierarchical models the sampling schemes know how to reparameterize.
#[derive(Debug, Clone)]
pub enum HierarchicalModel {
    /// Classic funnel, with or without the per-coordinate likelihood.
    Funnel(funnel::NealFunnel),
    Generalized(funnel::GeneralizedFunnel),
    PowerLaw(pta::PowerLawModel),
    FreeSpectral(pta::FreeSpectralModel),
}

impl HierarchicalModel {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Funnel(m) if m.likelihood().is_some() => "likelihood funnel",
            Self::Funnel(_) => "classic funnel",
            Self::Generalized(_) => "generalized funnel",
            Self::PowerLaw(_) => "power-law PTA model",
            Self::FreeSpectral(_) => "free-spectral PTA model",
        }
    }

    fn inner(&self) -> &dyn TargetModel {
        match self {
            Self::Funnel(m) => m,
            Self::Generalized(m) => m,
            Self::PowerLaw(m) => m,
            Self::FreeSpectral(m) => m,
        }
    }
}

impl TargetModel for HierarchicalModel {
    fn space(&self) -> &ParameterSpace {
        self.inner().space()
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.inner().log_density_grad(theta, grad)
    }
    fn prior_draw(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        self.inner().prior_draw(rng)
    }
}
