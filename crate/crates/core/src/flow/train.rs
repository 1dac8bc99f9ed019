use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::coupling::{layer_mask, CouplingLayer, LayerGrad};
use super::{FlowModel, MarginalCdf, Standardizer, FLOW_VERSION};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    /// `lr * (1 + cos(pi * epoch / max_epochs)) / 2`.
    Cosine,
    /// Halve every `step` epochs.
    Step { every: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_layers: usize,
    pub hidden_width: usize,
    pub batch: usize,
    pub max_epochs: usize,
    pub learn_rate: f64,
    pub decay: LrDecay,
    pub val_frac: f64,
    pub patience: usize,
    /// Validation gain (nats per point) needed to count as a new best.
    pub min_delta: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Fit a per-coordinate Gaussianizing layer before the couplings.
    pub marginal_layer: bool,
    /// Cap on the rows used for the coupling layers and validation. The
    /// standardizer and marginal layer always see every training row.
    pub max_coupling_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            hidden_width: 64,
            batch: 256,
            max_epochs: 500,
            learn_rate: 1e-3,
            decay: LrDecay::Cosine,
            val_frac: 0.1,
            patience: 20,
            min_delta: 0.0,
            clip_norm: 10.0,
            marginal_layer: true,
            max_coupling_samples: 20_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("flow training: {m}")));
        if self.n_layers == 0 || self.hidden_width == 0 || self.batch == 0 || self.max_epochs == 0 || self.patience == 0
            || self.max_coupling_samples == 0
        {
            return bad("counts must be positive");
        }
        if !(self.val_frac > 0.0 && self.val_frac < 0.5) {
            return bad("val_frac must lie in (0, 0.5)");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        if !(self.learn_rate > 0.0 && self.clip_norm > 0.0) {
            return bad("learn_rate and clip_norm must be positive");
        }
        if let LrDecay::Step { every: 0 } = self.decay {
            return bad("step decay needs a positive period");
        }
        Ok(())
    }

    fn lr(&self, epoch: usize) -> f64 {
        match self.decay {
            LrDecay::Cosine => {
                let x = epoch as f64 / self.max_epochs as f64;
                0.5 * self.learn_rate * (1.0 + (std::f64::consts::PI * x).cos())
            }
            LrDecay::Step { every } => self.learn_rate * 0.5f64.powi((epoch / every) as i32),
        }
    }
}

/// A new best validation score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_logp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_val: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Mean log-density per epoch (epoch 0 is the initial model).
    pub train_logp: Vec<f64>,
    pub val_logp: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [&mut f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            **p -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn params_mut(layers: &mut [CouplingLayer]) -> Vec<&mut f64> {
    layers
        .iter_mut()
        .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()).flatten())
        .collect()
}

fn flatten(grads: &[LayerGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.biases.iter()).flatten().copied())
        .collect()
}

fn mean(v: &DVector<f64>) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Maximum-likelihood fit of a flow to `samples` (rows are points).
/// Returns the checkpoint with the best validation log-density.
pub fn train_flow(samples: &[Vec<f64>], cfg: &TrainConfig) -> Result<(FlowModel, TrainReport)> {
    cfg.validate()?;
    let n = samples.len();
    let dim = samples.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Precondition("samples must be non-empty vectors".into()));
    }
    if samples.iter().any(|r| r.len() != dim) {
        return Err(Error::Precondition("rows differ in length".into()));
    }
    if let Some(i) = samples.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Precondition(format!("sample {i} is not finite")));
    }
    let n_cap = n.min(cfg.max_coupling_samples);
    let n_val = ((n_cap as f64 * cfg.val_frac).round() as usize).max(1);
    let needed = (2 * dim).max(n_val + 2);
    if n < needed || n - n_val < 2 * dim {
        return Err(Error::TooFewSamples { needed, got: n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(cfg.seed, "flow-split"));
    let val: Vec<Vec<f64>> = order[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train: Vec<Vec<f64>> = order[n_val..].iter().map(|&i| samples[i].clone()).collect();

    let standardizer = Standardizer::fit(&train);
    let marginal = cfg.marginal_layer.then(|| {
        (0..dim)
            .map(|j| {
                let col = |rows: &[Vec<f64>]| -> Vec<f64> {
                    rows.iter()
                        .map(|r| (r[j] - standardizer.mean[j]) / standardizer.std[j])
                        .collect()
                };
                MarginalCdf::fit_cv(&col(&train), &col(&val))
            })
            .collect()
    });
    let mut init = substream(cfg.seed, "flow-init");
    let layers = if dim >= 2 {
        (0..cfg.n_layers)
            .map(|k| CouplingLayer::new(layer_mask(dim, k), cfg.hidden_width, &mut init))
            .collect()
    } else {
        Vec::new()
    };
    let mut flow = FlowModel {
        version: FLOW_VERSION,
        dim,
        standardizer,
        marginal,
        layers,
    };

    let n_fit = train.len().min(n_cap.saturating_sub(n_val).max(2 * dim));
    let train = &train[..n_fit];
    let (m_train, ld_train) = flow.pre_batch(train);
    let (m_val, ld_val) = flow.pre_batch(&val);
    let pre_train = ld_train.iter().sum::<f64>() / ld_train.len() as f64;
    let pre_val = ld_val.iter().sum::<f64>() / ld_val.len() as f64;
    let score = |f: &FlowModel, m: &DMatrix<f64>, pre: f64| mean(&f.coupling_log_density(m)) + pre;

    let mut report = TrainReport {
        n_train: train.len(),
        n_val,
        epochs_run: 0,
        best_epoch: 0,
        train_logp: vec![score(&flow, &m_train, pre_train)],
        val_logp: vec![score(&flow, &m_val, pre_val)],
        checkpoints: Vec::new(),
    };
    let mut best_val = report.val_logp[0];
    if !best_val.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            detail: "initial validation log-density".into(),
        });
    }
    report.checkpoints.push(Checkpoint {
        epoch: 0,
        val_logp: best_val,
    });
    if flow.layers.is_empty() {
        return Ok((flow, report));
    }

    let n_params = params_mut(&mut flow.layers).len();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut best = flow.clone();
    let mut since_best = 0;
    let mut shuffle_rng = substream(cfg.seed, "flow-batches");
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        idx.shuffle(&mut shuffle_rng);
        let lr = cfg.lr(epoch - 1);
        for chunk in idx.chunks(cfg.batch) {
            let b = chunk.len();
            let mut u = m_train.select_rows(chunk);
            let mut tapes = Vec::with_capacity(flow.layers.len());
            let mut total_ld = DVector::zeros(b);
            for l in &flow.layers {
                let (next, ld, tape) = l.inverse_batch(&u);
                total_ld += ld;
                tapes.push(tape);
                u = next;
            }
            // loss = -mean(log N(u) + sum log det)
            let mut g = &u / b as f64;
            let g_ld = DVector::from_element(b, -1.0 / b as f64);
            let mut grads: Vec<LayerGrad> = flow.layers.iter().map(LayerGrad::zeros_like).collect();
            for ((l, tape), lg) in flow.layers.iter().zip(&tapes).zip(grads.iter_mut()).rev() {
                g = l.backward(tape, &g, &g_ld, Some(lg));
            }
            let mut flat = flatten(&grads);
            let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("gradient norm {norm}"),
                });
            }
            if norm > cfg.clip_norm {
                flat.iter_mut().for_each(|v| *v *= cfg.clip_norm / norm);
            }
            adam.step(&mut params_mut(&mut flow.layers), &flat, lr);
        }
        let tr = score(&flow, &m_train, pre_train);
        let va = score(&flow, &m_val, pre_val);
        report.train_logp.push(tr);
        report.val_logp.push(va);
        report.epochs_run = epoch;
        if !(tr.is_finite() && va.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("train {tr}, validation {va}"),
            });
        }
        if va > best_val + cfg.min_delta {
            best_val = va;
            best = flow.clone();
            report.best_epoch = epoch;
            report.checkpoints.push(Checkpoint { epoch, val_logp: va });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_2d(n: usize, rho: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![a, rho * a + (1.0 - rho * rho).sqrt() * b]
            })
            .collect()
    }

    fn gaussian_logp(x: &[f64], rho: f64) -> f64 {
        let det = 1.0 - rho * rho;
        let q = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det;
        -0.5 * q - std::f64::consts::LN_2 - std::f64::consts::PI.ln() - 0.5 * det.ln()
    }

    fn fast() -> TrainConfig {
        TrainConfig {
            n_layers: 4,
            hidden_width: 32,
            max_epochs: 60,
            patience: 10,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn learns_gaussians() {
        for (rho, marginal) in [(0.0, true), (0.8, true), (0.8, false)] {
            let cfg = TrainConfig {
                marginal_layer: marginal,
                ..fast()
            };
            let (flow, report) = train_flow(&gaussian_2d(20000, rho, 1), &cfg).unwrap();
            let held = gaussian_2d(2000, rho, 99);
            let err = held
                .iter()
                .map(|x| (flow.log_density(x).unwrap() - gaussian_logp(x, rho)).abs())
                .sum::<f64>()
                / held.len() as f64;
            assert!(err < 0.05, "rho {rho}, marginal {marginal}: {err} ({} epochs)", report.epochs_run);
        }
    }

    #[test]
    fn uniform_box_is_flat_inside() {
        let mut rng = seeded(4);
        let xs: Vec<Vec<f64>> = (0..20000)
            .map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
            .collect();
        let (flow, _) = train_flow(&xs, &fast()).unwrap();
        let mut vals = Vec::new();
        for i in 0..21 {
            for j in 0..21 {
                let x = [-3.0 + 0.3 * i as f64, -3.0 + 0.3 * j as f64];
                vals.push(flow.log_density(&x).unwrap());
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        assert!(sd < 0.1, "{sd}");
        assert!((m - (-(64f64).ln())).abs() < 0.1, "{m}");
    }

    #[test]
    fn checkpoints_improve_and_training_is_deterministic() {
        let xs = gaussian_2d(3000, 0.5, 7);
        let cfg = TrainConfig {
            max_epochs: 15,
            ..fast()
        };
        let (a, ra) = train_flow(&xs, &cfg).unwrap();
        let (b, rb) = train_flow(&xs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.checkpoints.windows(2).all(|w| w[1].val_logp > w[0].val_logp));
        let last = ra.checkpoints.last().unwrap();
        assert_eq!(last.epoch, ra.best_epoch);
        assert!(ra.val_logp.iter().all(|v| *v <= last.val_logp));
    }

    #[test]
    fn too_few_samples() {
        let xs = gaussian_2d(3, 0.0, 1);
        assert!(matches!(train_flow(&xs, &fast()), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn one_dimensional_data() {
        let mut rng = seeded(8);
        let xs: Vec<Vec<f64>> = (0..5000).map(|_| vec![2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)]).collect();
        let (flow, _) = train_flow(&xs, &fast()).unwrap();
        let lp = flow.log_density(&[2.0]).unwrap();
        let want = crate::special::normal_logpdf(2.0, 2.0, 0.5);
        assert!((lp - want).abs() < 0.05, "{lp} {want}");
    }
}
