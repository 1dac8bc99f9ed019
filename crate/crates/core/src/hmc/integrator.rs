use crate::error::{Error, Result};

/// `n_steps` leapfrog steps (half kick, drift, half kick) with a diagonal
/// inverse mass. `logp_grad` writes the gradient and returns the log-density.
/// On entry `grad` must hold the gradient at `q`; on exit it holds the
/// gradient at the final position, whose log-density is returned.
pub fn leapfrog<F>(
    mut logp_grad: F,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    n_steps: usize,
    inv_mass: &[f64],
) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("step size must be positive, got {eps}")));
    }
    let mut lp = f64::NAN;
    for _ in 0..n_steps {
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
            q[i] += eps * inv_mass[i] * p[i];
        }
        lp = logp_grad(q, grad);
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                energy_error: f64::INFINITY,
            });
        }
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
    }
    if n_steps == 0 {
        lp = logp_grad(q, grad);
    }
    Ok(lp)
}

pub fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}
