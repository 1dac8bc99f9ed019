//! Hamiltonian Monte Carlo with a jittered number of leapfrog steps,
//! dual-averaging step-size adaptation and diagonal mass adaptation.

mod adapt;
mod chain;
mod integrator;

pub use adapt::{DualAveraging, WelfordVar};
pub use chain::{Chain, ChainStats};
pub use integrator::{kinetic, leapfrog};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TargetModel, UnconstrainedTarget};
use crate::rng::{derive_seed, seeded, StreamRng};

/// Energy error above which a trajectory counts as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_leapfrog: usize,
    pub init_step: f64,
    pub mass_adapt: bool,
    pub jitter_steps: bool,
    /// Integration time; the step count is `min(max_leapfrog, ceil(path_length / eps))`.
    pub path_length: f64,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_warmup: 1000,
            n_samples: 1000,
            target_accept: 0.8,
            max_leapfrog: 1024,
            init_step: 0.1,
            mass_adapt: true,
            jitter_steps: true,
            path_length: 3.0,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("hmc: {m}")));
        if self.n_warmup == 0 || self.n_samples == 0 || self.max_leapfrog == 0 {
            return bad("counts must be positive");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !(self.init_step > 0.0 && self.init_step.is_finite()) {
            return bad("init_step must be positive");
        }
        if !(self.path_length > 0.0 && self.path_length.is_finite()) {
            return bad("path_length must be positive");
        }
        Ok(())
    }

    fn n_steps(&self, eps: f64, rng: &mut StreamRng) -> usize {
        let l = ((self.path_length / eps).ceil() as usize).clamp(1, self.max_leapfrog);
        if self.jitter_steps {
            rng.random_range(1..=l)
        } else {
            l
        }
    }
}

struct State {
    q: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
}

struct Transition {
    accept_stat: f64,
    divergent: bool,
    grad_evals: usize,
}

fn transition<M: TargetModel + ?Sized>(
    target: &M,
    state: &mut State,
    eps: f64,
    inv_mass: &[f64],
    cfg: &HmcConfig,
    rng: &mut StreamRng,
) -> Transition {
    let dim = state.q.len();
    let n = cfg.n_steps(eps, rng);
    let mut p: Vec<f64> = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let u: f64 = rng.random();
    let h0 = -state.lp + kinetic(&p, inv_mass);
    let mut q = state.q.clone();
    let mut grad = state.grad.clone();
    let result = leapfrog(|x, g| target.log_density_grad(x, g), &mut q, &mut p, &mut grad, eps, n, inv_mass);
    let (accept_stat, divergent) = match result {
        Ok(lp) => {
            let dh = -lp + kinetic(&p, inv_mass) - h0;
            if !dh.is_finite() || dh.abs() > DIVERGENCE_THRESHOLD {
                (0.0, true)
            } else {
                let a = (-dh).exp().min(1.0);
                if u < a {
                    state.q = q;
                    state.lp = lp;
                    state.grad = grad;
                }
                (a, false)
            }
        }
        Err(_) => (0.0, true),
    };
    debug_assert_eq!(state.q.len(), dim);
    Transition {
        accept_stat,
        divergent,
        grad_evals: n,
    }
}

fn initial_point<M: TargetModel>(
    target: &UnconstrainedTarget<M>,
    init: Option<&[f64]>,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let space = target.inner().space();
    match init {
        Some(theta) => {
            if theta.len() != space.len() {
                return Err(Error::DimensionMismatch {
                    expected: space.len(),
                    found: theta.len(),
                });
            }
            if !space.contains(theta) {
                return Err(Error::InitOutOfSupport);
            }
            target.to_unconstrained(theta).map_err(|_| Error::InitOutOfSupport)
        }
        None => match target.prior_draw(rng) {
            Some(u) => Ok(u),
            None => Ok(vec![0.0; space.len()]),
        },
    }
}

/// Runs one chain. Bounded coordinates are sampled on the real line and
/// mapped back; returned draws and `logp` are in the model's native space.
pub fn sample<M: TargetModel>(model: &M, cfg: &HmcConfig, init: Option<&[f64]>) -> Result<Chain> {
    cfg.validate()?;
    let target = UnconstrainedTarget::new(model);
    let dim = target.dim();
    let mut rng = seeded(cfg.seed);
    let q = initial_point(&target, init, &mut rng)?;
    let mut grad = vec![0.0; dim];
    let lp = target.log_density_grad(&q, &mut grad);
    if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::InitOutOfSupport);
    }
    let mut state = State { q, lp, grad };
    let mut inv_mass = vec![1.0; dim];
    let mut da = DualAveraging::new(cfg.init_step, cfg.target_accept);
    let mut eps = cfg.init_step;
    let mut grad_evals = 1u64;

    let w = cfg.n_warmup;
    let (window_start, window_end) = (w / 2, (w * 17) / 20);
    let adapt_mass = cfg.mass_adapt && window_end > window_start + 10;
    let mut welford = WelfordVar::new(dim);
    let mut warmup_divergences = 0;
    for it in 0..w {
        let t = transition(&target, &mut state, eps, &inv_mass, cfg, &mut rng);
        grad_evals += t.grad_evals as u64;
        warmup_divergences += t.divergent as usize;
        eps = da.update(t.accept_stat);
        if adapt_mass && it >= window_start && it < window_end {
            welford.push(&state.q);
            if it + 1 == window_end {
                inv_mass = welford.regularized_variance();
                da = DualAveraging::new(da.final_step(), cfg.target_accept);
                eps = da.current();
            }
        }
    }
    if 2 * warmup_divergences > w {
        return Err(Error::AllDivergent {
            divergent: warmup_divergences,
            total: w,
        });
    }
    eps = da.final_step();

    let mut draws = Vec::with_capacity(cfg.n_samples);
    let mut logp = Vec::with_capacity(cfg.n_samples);
    let mut accept_sum = 0.0;
    let mut divergences = 0;
    for _ in 0..cfg.n_samples {
        let t = transition(&target, &mut state, eps, &inv_mass, cfg, &mut rng);
        grad_evals += t.grad_evals as u64;
        accept_sum += t.accept_stat;
        divergences += t.divergent as usize;
        let theta = target.to_constrained(&state.q);
        logp.push(model.log_density(&theta));
        draws.push(theta);
    }
    Ok(Chain {
        names: model.space().names().iter().map(|s| s.to_string()).collect(),
        draws,
        logp,
        stats: ChainStats {
            accept_rate: accept_sum / cfg.n_samples as f64,
            step_size: eps,
            mass_diag: inv_mass,
            divergences,
            warmup_divergences,
            grad_evals,
            seed: cfg.seed,
            config: cfg.clone(),
        },
    })
}

/// Runs `n_chains` independent chains; chain `k` uses seed
/// `derive_seed(cfg.seed, k)` and its own prior-draw initialization.
pub fn sample_chains<M: TargetModel>(model: &M, cfg: &HmcConfig, n_chains: usize) -> Result<Vec<Chain>> {
    if n_chains == 0 {
        return Err(Error::Precondition("n_chains must be at least 1".into()));
    }
    (0..n_chains)
        .into_par_iter()
        .map(|k| {
            let c = HmcConfig {
                seed: derive_seed(cfg.seed, k as u64),
                ..cfg.clone()
            };
            sample(model, &c, None)
        })
        .collect()
}
