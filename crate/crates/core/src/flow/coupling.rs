use nalgebra::{DMatrix, DMatrixView, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Bound on the log-scale emitted by a conditioner: `s = S_MAX tanh(raw)`.
pub const S_MAX: f64 = 3.0;

/// Affine coupling layer. In the density direction the conditioned
/// coordinates pass through and the others become `(x_b - t) e^{-s}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    /// `true` marks a conditioning (pass-through) coordinate.
    pub mask: Vec<bool>,
    /// Row-major `[w1 (d_a x h), w2 (h x h), w3 (h x 2 d_b)]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations kept from a batched density-direction pass.
pub(crate) struct Tape {
    xa: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    s: DMatrix<f64>,
    ub: DMatrix<f64>,
}

/// Activations kept from a single-point density-direction pass.
pub(crate) struct PointTape {
    h1: Vec<f64>,
    h2: Vec<f64>,
    s: Vec<f64>,
    ub: Vec<f64>,
}

/// Parameter gradients laid out like the layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerGrad {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &CouplingLayer) -> Self {
        Self {
            weights: layer.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: layer.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// `b + x W` for a row-major `W` of shape `x.len() x b.len()`.
fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (xi, row) in x.iter().zip(w.chunks_exact(b.len())) {
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

/// `W g` for a row-major `W` with `g.len()` columns.
fn dense_back(g: &[f64], w: &[f64]) -> Vec<f64> {
    w.chunks_exact(g.len())
        .map(|row| row.iter().zip(g).map(|(a, b)| a * b).sum())
        .collect()
}

/// View of a row-major `rows x cols` matrix.
fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrixView<'_, f64, Dyn, Dyn> {
    DMatrixView::from_slice_with_strides(data, rows, cols, cols, 1)
}

/// Transposed view of a row-major `rows x cols` matrix.
fn mat_t(rows: usize, cols: usize, data: &[f64]) -> DMatrixView<'_, f64> {
    DMatrixView::from_slice(data, cols, rows)
}

fn add_row(m: &mut DMatrix<f64>, b: &[f64]) {
    for mut row in m.row_iter_mut() {
        for (x, bi) in row.iter_mut().zip(b) {
            *x += bi;
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl CouplingLayer {
    /// Conditioner with Glorot-uniform hidden weights and a zero output
    /// layer, so the layer starts as the identity.
    pub fn new(mask: Vec<bool>, hidden: usize, rng: &mut impl Rng) -> Self {
        let da = mask.iter().filter(|m| **m).count();
        let db = mask.len() - da;
        let glorot = |fan_in: usize, fan_out: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-lim..lim)).collect()
        };
        Self {
            mask,
            weights: vec![glorot(da, hidden, rng), glorot(hidden, hidden, rng), vec![0.0; hidden * 2 * db]],
            biases: vec![vec![0.0; hidden], vec![0.0; hidden], vec![0.0; 2 * db]],
        }
    }

    pub fn hidden(&self) -> usize {
        self.biases[0].len()
    }

    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let a = (0..self.mask.len()).filter(|&i| self.mask[i]).collect();
        let b = (0..self.mask.len()).filter(|&i| !self.mask[i]).collect();
        (a, b)
    }

    /// Checks the parameter shapes against the mask.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (a, b) = self.split();
        let h = self.hidden();
        if a.is_empty() || b.is_empty() {
            return Err("mask must contain both conditioning and transformed coordinates".into());
        }
        let want_w = [a.len() * h, h * h, h * 2 * b.len()];
        let want_b = [h, h, 2 * b.len()];
        if self.weights.len() != 3 || self.biases.len() != 3 {
            return Err("conditioner must have three weight matrices".into());
        }
        for k in 0..3 {
            if self.weights[k].len() != want_w[k] || self.biases[k].len() != want_b[k] {
                return Err(format!("conditioner layer {k} has the wrong shape"));
            }
        }
        if self.weights.iter().chain(&self.biases).flatten().any(|v| !v.is_finite()) {
            return Err("non-finite conditioner parameter".into());
        }
        Ok(())
    }

    fn conditioner(&self, xa: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = xa.nrows();
        let h = self.hidden();
        let db = self.mask.len() - xa.ncols();
        let mut h1 = xa * mat(xa.ncols(), h, &self.weights[0]);
        add_row(&mut h1, &self.biases[0]);
        h1.apply(|v| *v = v.tanh());
        let mut h2 = &h1 * mat(h, h, &self.weights[1]);
        add_row(&mut h2, &self.biases[1]);
        h2.apply(|v| *v = v.tanh());
        let mut o = &h2 * mat(h, 2 * db, &self.weights[2]);
        add_row(&mut o, &self.biases[2]);
        let s = o.columns(0, db).map(|v| S_MAX * v.tanh());
        let t = o.columns(db, db).into_owned();
        debug_assert_eq!(s.nrows(), n);
        (h1, h2, s, t)
    }

    fn conditioner_point(&self, xa: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let db = self.mask.len() - xa.len();
        let mut h1 = dense(xa, &self.weights[0], &self.biases[0]);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = dense(&h1, &self.weights[1], &self.biases[1]);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut o = dense(&h2, &self.weights[2], &self.biases[2]);
        let t = o.split_off(db);
        let s = o.iter().map(|v| S_MAX * v.tanh()).collect();
        (h1, h2, s, t)
    }

    /// Density direction for one point: output, log-determinant and tape.
    pub(crate) fn inverse_point(&self, x: &[f64]) -> (Vec<f64>, f64, PointTape) {
        let xa: Vec<f64> = x.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let (h1, h2, s, t) = self.conditioner_point(&xa);
        let mut u = x.to_vec();
        let mut ub = Vec::with_capacity(s.len());
        let b = (0..self.mask.len()).filter(|&j| !self.mask[j]);
        for (k, j) in b.enumerate() {
            u[j] = (x[j] - t[k]) * (-s[k]).exp();
            ub.push(u[j]);
        }
        let logdet = -s.iter().sum::<f64>();
        (u, logdet, PointTape { h1, h2, s, ub })
    }

    /// Single-point counterpart of [`Self::backward`] without parameter gradients.
    pub(crate) fn backward_point(&self, tape: &PointTape, g_u: &[f64], g_ld: f64) -> Vec<f64> {
        let db = tape.s.len();
        let mut d_o = vec![0.0; 2 * db];
        let mut d_x = g_u.to_vec();
        let b = (0..self.mask.len()).filter(|&j| !self.mask[j]);
        for (k, j) in b.enumerate() {
            let s = tape.s[k];
            let e = (-s).exp();
            let d_s = -g_u[j] * tape.ub[k] - g_ld;
            d_o[k] = d_s * (S_MAX - s * s / S_MAX);
            d_o[db + k] = -g_u[j] * e;
            d_x[j] = g_u[j] * e;
        }
        let mut d_h2 = dense_back(&d_o, &self.weights[2]);
        d_h2.iter_mut().zip(&tape.h2).for_each(|(d, h)| *d *= 1.0 - h * h);
        let mut d_h1 = dense_back(&d_h2, &self.weights[1]);
        d_h1.iter_mut().zip(&tape.h1).for_each(|(d, h)| *d *= 1.0 - h * h);
        let d_xa = dense_back(&d_h1, &self.weights[0]);
        let a = (0..self.mask.len()).filter(|&j| self.mask[j]);
        for (k, j) in a.enumerate() {
            d_x[j] += d_xa[k];
        }
        d_x
    }

    /// Density direction on a batch (rows are points). Returns the output,
    /// per-row log-determinant and the tape for [`Self::backward`].
    pub(crate) fn inverse_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, Tape) {
        let (a, b) = self.split();
        let xa = x.select_columns(&a);
        let xb = x.select_columns(&b);
        let (h1, h2, s, t) = self.conditioner(&xa);
        let ub = (xb - t).component_mul(&s.map(|v| (-v).exp()));
        let mut u = x.clone();
        for (k, &j) in b.iter().enumerate() {
            u.set_column(j, &ub.column(k));
        }
        let logdet = -s.column_sum();
        (u, logdet, Tape { xa, h1, h2, s, ub })
    }

    /// Sampling direction for one point.
    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        let ua: Vec<f64> = u.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let (_, _, s, t) = self.conditioner_point(&ua);
        let mut x = u.to_vec();
        let b = (0..self.mask.len()).filter(|&j| !self.mask[j]);
        for (k, j) in b.enumerate() {
            x[j] = u[j] * s[k].exp() + t[k];
        }
        x
    }

    /// Backpropagates `g_u = dL/du` and a per-row weight `g_ld` on the
    /// log-determinant. Returns `dL/dx`; parameter gradients accumulate into
    /// `grad` when given.
    pub(crate) fn backward(
        &self,
        tape: &Tape,
        g_u: &DMatrix<f64>,
        g_ld: &DVector<f64>,
        grad: Option<&mut LayerGrad>,
    ) -> DMatrix<f64> {
        let (a, b) = self.split();
        let h = self.hidden();
        let db = b.len();
        let n = g_u.nrows();
        let gub = g_u.select_columns(&b);
        let e_neg_s = tape.s.map(|v| (-v).exp());
        // u_b = (x_b - t) e^{-s};  logdet = -sum s
        let mut d_s = -gub.component_mul(&tape.ub);
        for mut col in d_s.column_iter_mut() {
            col -= g_ld;
        }
        let d_t = -gub.component_mul(&e_neg_s);
        let d_xb = gub.component_mul(&e_neg_s);
        let d_raw = d_s.zip_map(&tape.s, |g, s| g * (S_MAX - s * s / S_MAX));
        let mut d_o = DMatrix::zeros(n, 2 * db);
        d_o.columns_mut(0, db).copy_from(&d_raw);
        d_o.columns_mut(db, db).copy_from(&d_t);

        let w3t = mat_t(h, 2 * db, &self.weights[2]);
        let w2t = mat_t(h, h, &self.weights[1]);
        let w1t = mat_t(a.len(), h, &self.weights[0]);
        let d_h2 = (&d_o * w3t).component_mul(&tape.h2.map(|v| 1.0 - v * v));
        let d_h1 = (&d_h2 * w2t).component_mul(&tape.h1.map(|v| 1.0 - v * v));
        let d_xa = &d_h1 * w1t;
        if let Some(g) = grad {
            let acc = |dst: &mut Vec<f64>, m: DMatrix<f64>| {
                for (d, v) in dst.iter_mut().zip(row_major(&m)) {
                    *d += v;
                }
            };
            acc(&mut g.weights[0], tape.xa.transpose() * &d_h1);
            acc(&mut g.weights[1], tape.h1.transpose() * &d_h2);
            acc(&mut g.weights[2], tape.h2.transpose() * &d_o);
            for (k, d) in [&d_h1, &d_h2, &d_o].into_iter().enumerate() {
                for (dst, v) in g.biases[k].iter_mut().zip(d.row_sum().iter()) {
                    *dst += v;
                }
            }
        }
        let mut d_x = DMatrix::zeros(n, self.mask.len());
        for (k, &j) in a.iter().enumerate() {
            d_x.set_column(j, &(g_u.column(j) + d_xa.column(k)));
        }
        for (k, &j) in b.iter().enumerate() {
            d_x.set_column(j, &d_xb.column(k));
        }
        d_x
    }

    /// Random perturbation of every parameter, for tests that need a
    /// non-trivial layer.
    pub fn jitter(&mut self, scale: f64, rng: &mut impl Rng) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Mask of layer `k` for `dim` coordinates: alternating parity masks,
/// interleaved with half splits every other pair of layers.
pub fn layer_mask(dim: usize, k: usize) -> Vec<bool> {
    let m: Vec<bool> = match k % 4 {
        0 => (0..dim).map(|i| i % 2 == 0).collect(),
        1 => (0..dim).map(|i| i % 2 == 1).collect(),
        2 => (0..dim).map(|i| i < dim.div_ceil(2)).collect(),
        _ => (0..dim).map(|i| i >= dim.div_ceil(2)).collect(),
    };
    m
}
