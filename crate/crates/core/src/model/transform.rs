use serde::{Deserialize, Serialize};

/// Per-coordinate bijection from a constrained value `x` to an unconstrained `u`.
///
/// `forward` maps `x -> u`, `inverse` maps `u -> x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `u = scale * x + shift`
    Affine { scale: f64, shift: f64 },
    /// `u = log10(x)` for `x > 0`
    Log10,
    /// `u = logit((x - lower) / (upper - lower))`
    LogitAffine { lower: f64, upper: f64 },
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Transform {
    pub fn forward(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::Affine { scale, shift } => scale * x + shift,
            Transform::Log10 => x.log10(),
            Transform::LogitAffine { lower, upper } => {
                let p = (x - lower) / (upper - lower);
                p.ln() - (-p).ln_1p()
            }
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Affine { scale, shift } => (u - shift) / scale,
            Transform::Log10 => 10f64.powf(u),
            Transform::LogitAffine { lower, upper } => {
                // Anchor at the nearer endpoint to keep precision near either bound.
                if u < 0.0 {
                    lower + (upper - lower) * sigmoid(u)
                } else {
                    upper - (upper - lower) * sigmoid(-u)
                }
            }
        }
    }

    /// `ln |du/dx|` at `x`.
    pub fn log_det_forward(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Affine { scale, .. } => scale.abs().ln(),
            Transform::Log10 => -(x * std::f64::consts::LN_10).ln(),
            Transform::LogitAffine { lower, upper } => {
                let w = upper - lower;
                let p = (x - lower) / w;
                -(w.ln() + p.ln() + (-p).ln_1p())
            }
        }
    }

    /// `ln |dx/du|` at `u`.
    pub fn log_det_inverse(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Affine { scale, .. } => -scale.abs().ln(),
            Transform::Log10 => std::f64::consts::LN_10.ln() + u * std::f64::consts::LN_10,
            Transform::LogitAffine { lower, upper } => (upper - lower).ln() - softplus(-u) - softplus(u),
        }
    }

    /// `dx/du` at `u`.
    pub fn inverse_derivative(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => 1.0,
            Transform::Affine { scale, .. } => 1.0 / scale,
            Transform::Log10 => std::f64::consts::LN_10 * 10f64.powf(u),
            Transform::LogitAffine { lower, upper } => {
                let s = sigmoid(u);
                (upper - lower) * s * (1.0 - s)
            }
        }
    }

    /// `d/du ln |dx/du|` at `u`.
    pub fn log_det_inverse_grad(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity | Transform::Affine { .. } => 0.0,
            Transform::Log10 => std::f64::consts::LN_10,
            Transform::LogitAffine { .. } => 1.0 - 2.0 * sigmoid(u),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds() -> Vec<Transform> {
        vec![
            Transform::Identity,
            Transform::Affine { scale: -2.5, shift: 0.75 },
            Transform::Log10,
            Transform::LogitAffine { lower: -4.0, upper: 4.0 },
            Transform::LogitAffine { lower: 0.0, upper: 1.0 },
        ]
    }

    fn interior(t: &Transform, frac: f64) -> f64 {
        match *t {
            Transform::LogitAffine { lower, upper } => lower + (upper - lower) * frac,
            Transform::Log10 => 10f64.powf(-3.0 + 6.0 * frac),
            _ => -5.0 + 10.0 * frac,
        }
    }

    proptest! {
        #[test]
        fn round_trip_and_log_det_consistency(frac in 0.001f64..0.999) {
            for t in kinds() {
                let x = interior(&t, frac);
                let u = t.forward(x);
                let back = t.inverse(u);
                prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs()), "{t:?}: {x} -> {back}");
                let sum = t.log_det_forward(x) + t.log_det_inverse(u);
                prop_assert!(sum.abs() < 1e-10, "{t:?}: logdet sum {sum}");
            }
        }
    }

    #[test]
    fn inverse_derivatives_match_finite_differences() {
        let h = 1e-6;
        for t in kinds() {
            for &u in &[-3.0, -0.4, 0.0, 1.3] {
                let fd = (t.inverse(u + h) - t.inverse(u - h)) / (2.0 * h);
                let an = t.inverse_derivative(u);
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{t:?} at {u}");
                let fd_ld = (t.log_det_inverse(u + h) - t.log_det_inverse(u - h)) / (2.0 * h);
                assert!((fd_ld - t.log_det_inverse_grad(u)).abs() < 1e-6, "{t:?} at {u}");
                assert!((t.inverse_derivative(u).abs().ln() - t.log_det_inverse(u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logit_inverse_stays_inside_for_moderate_arguments() {
        let t = Transform::LogitAffine { lower: -4.0, upper: 4.0 };
        for &u in &[-30.0, -10.0, 10.0, 30.0] {
            let x = t.inverse(u);
            assert!(x > -4.0 && x < 4.0, "{u} -> {x}");
        }
    }
}
