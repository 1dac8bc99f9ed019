//! Affine embeddings of an original hyper-model inside a generalized one.

use nalgebra::DMatrix;
use std::f64::consts::LOG10_E;

use crate::error::{Error, Result};
use crate::model::{Block, ParameterSpace};
use crate::models::funnel::GeneralizedFunnelSpec;
use crate::models::pta::{check_distinct_freqs, FreeSpectralSpec, PowerLawSpec};

/// `z = offset + J y`, mapping `hyper_in` (dim m) into `hyper_out` (dim M > m).
#[derive(Debug, Clone)]
pub struct ConstraintMap {
    name: String,
    hyper_in: ParameterSpace,
    hyper_out: ParameterSpace,
    offset: Vec<f64>,
    jacobian: DMatrix<f64>,
}

impl ConstraintMap {
    pub fn new(
        name: impl Into<String>,
        hyper_in: ParameterSpace,
        hyper_out: ParameterSpace,
        offset: Vec<f64>,
        jacobian: DMatrix<f64>,
    ) -> Result<Self> {
        let (m_out, m_in) = jacobian.shape();
        if m_in != hyper_in.len() || m_out != hyper_out.len() || offset.len() != m_out {
            return Err(Error::DimensionMismatch {
                expected: hyper_out.len(),
                found: m_out,
            });
        }
        if m_out <= m_in {
            return Err(Error::InvalidConfig(format!(
                "constraint must embed {m_in} dimensions into more than {m_in}, got {m_out}"
            )));
        }
        let sv = jacobian.clone().svd(false, false).singular_values;
        let max = sv.max();
        if !(sv.min() > 1e-12 * max) {
            return Err(Error::DegenerateFrequencies(
                "constraint Jacobian is rank deficient".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            hyper_in,
            hyper_out,
            offset,
            jacobian,
        })
    }

    /// `log10 z_i = (y / 2) log10 e` for each local component.
    pub fn funnel(spec: &GeneralizedFunnelSpec) -> Result<Self> {
        let hyper_in = ParameterSpace::builder().unbounded("y", Block::Hyper).build()?;
        let mut b = ParameterSpace::builder();
        for i in 1..=spec.n_local {
            b = b.interval(format!("log10_z_{i}"), -spec.a_bound, spec.a_bound, Block::Hyper);
        }
        let n = spec.n_local;
        if n < 2 {
            return Err(Error::InvalidConfig("funnel constraint needs at least 2 local components".into()));
        }
        Self::new(
            "funnel",
            hyper_in,
            b.build()?,
            vec![0.0; n],
            DMatrix::from_element(n, 1, 0.5 * LOG10_E),
        )
    }

    /// `log10 rho_i = log10_A - gamma log10(f_i / f_ref)`.
    pub fn power_law(pl: &PowerLawSpec, fs: &FreeSpectralSpec, freqs: &[f64], f_ref: f64) -> Result<Self> {
        check_distinct_freqs(freqs)?;
        if freqs.len() != fs.n_freq {
            return Err(Error::DimensionMismatch {
                expected: fs.n_freq,
                found: freqs.len(),
            });
        }
        let jac = DMatrix::from_fn(freqs.len(), 2, |i, j| if j == 0 { 1.0 } else { -(freqs[i] / f_ref).log10() });
        Self::new("power_law", pl.hyper_space(), fs.hyper_space(), vec![0.0; freqs.len()], jac)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn hyper_in(&self) -> &ParameterSpace {
        &self.hyper_in
    }
    pub fn hyper_out(&self) -> &ParameterSpace {
        &self.hyper_out
    }
    pub fn in_dim(&self) -> usize {
        self.hyper_in.len()
    }
    pub fn out_dim(&self) -> usize {
        self.hyper_out.len()
    }
    /// `dz / dy`, shape `M x m`.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.out_dim())
            .map(|i| self.offset[i] + (0..self.in_dim()).map(|j| self.jacobian[(i, j)] * y[j]).sum::<f64>())
            .collect()
    }

    /// `J^T g`: pulls a gradient with respect to `z` back to `y`.
    pub fn pullback(&self, grad_z: &[f64]) -> Vec<f64> {
        (0..self.in_dim())
            .map(|j| (0..self.out_dim()).map(|i| self.jacobian[(i, j)] * grad_z[i]).sum())
            .collect()
    }

    pub fn image_in_bounds(&self, y: &[f64]) -> bool {
        self.hyper_out.contains(&self.apply(y))
    }

    /// Corners of the bounded input box whose image leaves `hyper_out`.
    /// Unbounded input coordinates are probed at `+-probe`.
    pub fn corners_outside(&self, probe: f64) -> Vec<Vec<f64>> {
        let m = self.in_dim();
        let ranges: Vec<(f64, f64)> = self
            .hyper_in
            .entries()
            .iter()
            .map(|e| match e.bound {
                crate::model::Bound::Interval { lower, upper } => (lower, upper),
                crate::model::Bound::Unbounded => (-probe, probe),
            })
            .collect();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|j| if mask >> j & 1 == 0 { ranges[j].0 } else { ranges[j].1 })
                    .collect::<Vec<f64>>()
            })
            .filter(|c| {
                let z = self.apply(c);
                self.hyper_out.entries().iter().zip(&z).any(|(e, &v)| match e.bound {
                    crate::model::Bound::Interval { lower, upper } => v < lower || v > upper,
                    crate::model::Bound::Unbounded => false,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::funnel::funnel_constraint;
    use crate::models::pta::pta_constraint;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn funnel_map_matches_closed_form() {
        let c = ConstraintMap::funnel(&GeneralizedFunnelSpec::default()).unwrap();
        assert_eq!(c.apply(&[0.0]), vec![0.0; 9]);
        for z in c.apply(&[2.0]) {
            assert!((z - 0.434294481903).abs() < 1e-10);
        }
        for z in c.apply(&[-2.0 * std::f64::consts::LN_10]) {
            assert!((z + 1.0).abs() < 1e-14);
        }
        assert_eq!(c.apply(&[1.7]), funnel_constraint(1.7, 9));
        assert!(c.image_in_bounds(&[9.0]) && !c.image_in_bounds(&[20.0]));
    }

    #[test]
    fn power_law_map_matches_closed_form() {
        let freqs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let c = ConstraintMap::power_law(&PowerLawSpec::default(), &FreeSpectralSpec::default(), &freqs, 1.0).unwrap();
        let z = c.apply(&[0.4, 3.1]);
        let want = pta_constraint(0.4, 3.1, &freqs, 1.0).unwrap();
        for (a, b) in z.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        // The steepest, faintest corner falls below the free-spectral floor in
        // the top bin and is reported.
        let out = c.corners_outside(0.0);
        assert_eq!(out, vec![vec![-2.0, 7.0]]);
    }

    #[test]
    fn maps_are_injective_on_sampled_inputs() {
        let freqs: Vec<f64> = (1..=10).map(|i| i as f64 / 3.0).collect();
        let pl = ConstraintMap::power_law(&PowerLawSpec::default(), &FreeSpectralSpec::default(), &freqs, 1.0 / 3.0).unwrap();
        let fu = ConstraintMap::funnel(&GeneralizedFunnelSpec::default()).unwrap();
        let mut rng = seeded(1);
        let ins: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..7.0)])
            .collect();
        let outs: Vec<Vec<f64>> = ins.iter().map(|y| pl.apply(y)).collect();
        for i in 0..ins.len() {
            for j in 0..i {
                let dist = outs[i].iter().zip(&outs[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dist > 1e-9);
            }
        }
        let ys: Vec<f64> = (0..1000).map(|i| -10.0 + 0.02 * i as f64).collect();
        let zs: Vec<f64> = ys.iter().map(|y| fu.apply(&[*y])[0]).collect();
        assert!(zs.windows(2).all(|w| w[1] - w[0] > 1e-9));
    }

    #[test]
    fn pullback_is_the_transpose() {
        let freqs = [1.0, 2.0, 4.0];
        let fs = FreeSpectralSpec {
            n_freq: 3,
            ..Default::default()
        };
        let c = ConstraintMap::power_law(&PowerLawSpec::default(), &fs, &freqs, 1.0).unwrap();
        let g = c.pullback(&[1.0, 1.0, 1.0]);
        assert!((g[0] - 3.0).abs() < 1e-15);
        assert!((g[1] + (2f64.log10() + 4f64.log10())).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let fs = FreeSpectralSpec {
            n_freq: 2,
            ..Default::default()
        };
        assert!(matches!(
            ConstraintMap::power_law(&PowerLawSpec::default(), &fs, &[3.0, 3.0], 1.0),
            Err(Error::DegenerateFrequencies(_))
        ));
    }
}
