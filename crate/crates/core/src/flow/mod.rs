//! Density estimation for stage-2 resampling: a normalizing flow made of a
//! standardizer, an optional per-coordinate Gaussianizing layer and affine
//! coupling layers, plus a Gaussian KDE for the grid path.
//!
//! Density direction: `x -> standardize -> marginal CDF layer -> couplings -> u`,
//! with `u` standard normal.

mod coupling;
mod kde;
mod marginal;
mod train;

pub use coupling::{layer_mask, CouplingLayer, S_MAX};
pub use kde::KdeModel;
pub use marginal::{MarginalCdf, MarginalEval};
pub use train::{train_flow, Checkpoint, LrDecay, TrainConfig, TrainReport};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterSpace, TargetModel};
use crate::rng::seeded;
use crate::special::LN_SQRT_2PI;

pub const FLOW_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Trained (or identity) flow. Immutable after construction and safe to
/// evaluate from several threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub version: u64,
    pub dim: usize,
    pub standardizer: Standardizer,
    /// One Gaussianizing map per coordinate, or none.
    pub marginal: Option<Vec<MarginalCdf>>,
    pub layers: Vec<CouplingLayer>,
}

/// `dL/dx` contribution of the per-coordinate layers.
struct PreEval {
    m: Vec<f64>,
    log_det: f64,
    /// `dm/dx` per coordinate.
    dm: Vec<f64>,
    /// `d(log det)/dx` per coordinate.
    d_log_det: Vec<f64>,
}

impl FlowModel {
    /// Flow whose couplings emit zero scale and shift, with an identity
    /// standardizer: the density is the standard normal.
    pub fn identity(dim: usize, n_layers: usize, hidden: usize) -> Self {
        let mut rng = seeded(0);
        let layers = if dim >= 2 {
            (0..n_layers)
                .map(|k| CouplingLayer::new(layer_mask(dim, k), hidden, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            version: FLOW_VERSION,
            dim,
            standardizer: Standardizer::identity(dim),
            marginal: None,
            layers,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.dim == 0 {
            return Err("flow dimension must be positive".into());
        }
        let s = &self.standardizer;
        if s.mean.len() != self.dim || s.std.len() != self.dim {
            return Err("standardizer length differs from dim".into());
        }
        if s.std.iter().any(|v| !(*v > 0.0 && v.is_finite())) || s.mean.iter().any(|v| !v.is_finite()) {
            return Err("standardizer must be finite with positive scales".into());
        }
        if let Some(m) = &self.marginal {
            if m.len() != self.dim {
                return Err("marginal layer length differs from dim".into());
            }
            m.iter().try_for_each(|c| c.validate())?;
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.mask.len() != self.dim {
                return Err(format!("layer {k} mask length differs from dim"));
            }
            l.validate().map_err(|e| format!("layer {k}: {e}"))?;
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn pre(&self, x: &[f64]) -> PreEval {
        let st = &self.standardizer;
        let mut m = Vec::with_capacity(self.dim);
        let mut dm = Vec::with_capacity(self.dim);
        let mut d_log_det = Vec::with_capacity(self.dim);
        let mut log_det = st.log_det();
        for j in 0..self.dim {
            let s = (x[j] - st.mean[j]) / st.std[j];
            match &self.marginal {
                Some(cdfs) => {
                    let e = cdfs[j].eval(s);
                    m.push(e.z);
                    log_det += e.log_dz;
                    dm.push(e.dz / st.std[j]);
                    d_log_det.push(e.d_log_dz / st.std[j]);
                }
                None => {
                    m.push(s);
                    dm.push(1.0 / st.std[j]);
                    d_log_det.push(0.0);
                }
            }
        }
        PreEval { m, log_det, dm, d_log_det }
    }

    /// Per-coordinate layers only: standardized and Gaussianized rows.
    pub(crate) fn pre_batch(&self, rows: &[Vec<f64>]) -> (DMatrix<f64>, Vec<f64>) {
        let mut m = DMatrix::zeros(rows.len(), self.dim);
        let mut ld = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let p = self.pre(r);
            for j in 0..self.dim {
                m[(i, j)] = p.m[j];
            }
            ld.push(p.log_det);
        }
        (m, ld)
    }

    /// Log-density of the coupling stack on Gaussianized rows.
    pub(crate) fn coupling_log_density(&self, m: &DMatrix<f64>) -> DVector<f64> {
        let mut u = m.clone();
        let mut total = DVector::zeros(m.nrows());
        for l in &self.layers {
            let (next, ld, _) = l.inverse_batch(&u);
            total += ld;
            u = next;
        }
        for i in 0..u.nrows() {
            total[i] += u.row(i).iter().map(|v| -0.5 * v * v - LN_SQRT_2PI).sum::<f64>();
        }
        total
    }

    /// Log-density and its gradient in `x`.
    pub fn log_density_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        let p = self.pre(x);
        let mut u = p.m.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut lp = p.log_det;
        for l in &self.layers {
            let (next, ld, tape) = l.inverse_point(&u);
            lp += ld;
            tapes.push(tape);
            u = next;
        }
        lp += u.iter().map(|v| -0.5 * v * v - LN_SQRT_2PI).sum::<f64>();
        let mut g: Vec<f64> = u.iter().map(|v| -v).collect();
        for (l, tape) in self.layers.iter().zip(&tapes).rev() {
            g = l.backward_point(tape, &g, 1.0);
        }
        let grad = (0..self.dim).map(|j| g[j] * p.dm[j] + p.d_log_det[j]).collect();
        Ok((lp, grad))
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let p = self.pre(x);
        let mut u = p.m;
        let mut lp = p.log_det;
        for l in &self.layers {
            let (next, ld, _) = l.inverse_point(&u);
            lp += ld;
            u = next;
        }
        Ok(lp + u.iter().map(|v| -0.5 * v * v - LN_SQRT_2PI).sum::<f64>())
    }

    pub fn log_density_batch(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let (m, ld) = self.pre_batch(rows);
        let c = self.coupling_log_density(&m);
        c.iter().zip(ld).map(|(a, b)| a + b).collect()
    }

    /// Maps a base point to data space.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        let mut m = u.to_vec();
        for l in self.layers.iter().rev() {
            m = l.forward(&m);
        }
        let st = &self.standardizer;
        Ok((0..self.dim)
            .map(|j| {
                let s = match &self.marginal {
                    Some(cdfs) => cdfs[j].invert(m[j]),
                    None => m[j],
                };
                st.mean[j] + st.std[j] * s
            })
            .collect())
    }

    /// Maps a data point to the base space.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut u = self.pre(x).m;
        for l in &self.layers {
            u = l.inverse_point(&u).0;
        }
        Ok(u)
    }

    /// `ln |det du/dx|` at `x`.
    pub fn inverse_log_det(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let p = self.pre(x);
        let mut u = p.m;
        let mut total = p.log_det;
        for l in &self.layers {
            let (next, ld, _) = l.inverse_point(&u);
            total += ld;
            u = next;
        }
        Ok(total)
    }

    /// `n` draws; deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                self.forward(&u).expect("dimension matches")
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::format(context, Some(e.line()), e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(FLOW_VERSION) => {}
            Some(found) => {
                return Err(Error::VersionMismatch {
                    found,
                    expected: FLOW_VERSION,
                })
            }
            None => return Err(Error::format(context, None, "missing integer `version`")),
        }
        let flow: FlowModel = serde_json::from_value(value).map_err(|e| Error::format(context, None, e.to_string()))?;
        flow.validate().map_err(|e| Error::format(context, None, e))?;
        Ok(flow)
    }
}

/// A flow viewed as a target density over its own coordinates.
#[derive(Debug, Clone)]
pub struct FlowTarget {
    flow: FlowModel,
    space: ParameterSpace,
}

impl FlowTarget {
    pub fn new(flow: FlowModel, names: &[String]) -> Result<Self> {
        if names.len() != flow.dim {
            return Err(Error::DimensionMismatch {
                expected: flow.dim,
                found: names.len(),
            });
        }
        let mut b = ParameterSpace::builder();
        for n in names {
            b = b.unbounded(n.clone(), crate::model::Block::Hyper);
        }
        Ok(Self { flow, space: b.build()? })
    }

    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }
}

impl TargetModel for FlowTarget {
    fn space(&self) -> &ParameterSpace {
        &self.space
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        match self.flow.log_density_grad(theta) {
            Ok((lp, g)) => {
                grad.copy_from_slice(&g);
                lp
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}
