//! Minimal neural-net core with hand-written backprop.
//!
//! Everything is f32 on ndarray. Layers cache their forward activations and
//! accumulate parameter gradients on `backward`; an optimizer visits every
//! `Tensor` in a fixed order, which keeps training bit-reproducible on a
//! single thread.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub mod archive;
pub mod attention;
pub mod lstm;
pub mod optim;
pub mod transformer;

/// A parameter matrix plus its gradient accumulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tensor {
    pub v: Array2<f32>,
    #[serde(skip)]
    pub g: Array2<f32>,
}

impl Tensor {
    pub fn new(v: Array2<f32>) -> Self {
        let g = Array2::zeros(v.raw_dim());
        Self { v, g }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform init in [-a, a].
    pub fn uniform(rows: usize, cols: usize, a: f32, rng: &mut impl Rng) -> Self {
        let v = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a));
        Self::new(v)
    }

    /// Xavier-uniform init for a (fan_in, fan_out) weight.
    pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (rows + cols) as f32).sqrt();
        Self::uniform(rows, cols, a, rng)
    }

    /// Restore the gradient buffer after deserialization.
    pub fn ensure_grad(&mut self) {
        if self.g.raw_dim() != self.v.raw_dim() {
            self.g = Array2::zeros(self.v.raw_dim());
        }
    }

    pub fn add_grad(&mut self, g: &Array2<f32>) {
        self.ensure_grad();
        self.g += g;
    }
}

/// Visitor over every parameter tensor of a model, in a fixed order.
pub trait VisitTensors {
    fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn zero_grads(&mut self) {
        self.visit(&mut |_, t| {
            t.ensure_grad();
            t.g.fill(0.0);
        });
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.v.len());
        n
    }
}

/// Fully connected layer, rows are positions or batch items.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
    #[serde(skip)]
    cache_x: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: Tensor::xavier(d_in, d_out, rng),
            b: Tensor::zeros(1, d_out),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        self.cache_x = Some(x.clone());
        x.dot(&self.w.v) + &self.b.v
    }

    /// Forward without caching, for inference paths.
    pub fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.w.v) + &self.b.v
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        self.w.add_grad(&x.t().dot(gy));
        let gb = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.b.add_grad(&gb);
        gy.dot(&self.w.v.t())
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Token embedding table. Backward takes the ids again, so one table can be
/// shared by several forward passes per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            table: Tensor::uniform(vocab, dim, 0.05, rng),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Array2<f32> {
        let dim = self.table.v.ncols();
        let mut out = Array2::zeros((ids.len(), dim));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&self.table.v.row(id));
        }
        out
    }

    pub fn backward(&mut self, ids: &[usize], gy: &Array2<f32>) {
        self.table.ensure_grad();
        for (i, &id) in ids.iter().enumerate() {
            let mut row = self.table.g.row_mut(id);
            row += &gy.row(i);
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.table"), &mut self.table);
    }
}

/// LayerNorm over the last dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
    #[serde(skip)]
    cache: Option<(Array2<f32>, Array1<f32>)>, // (xhat, inv_std per row)
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::new(Array2::ones((1, dim))),
            beta: Tensor::zeros(1, dim),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let d = x.ncols() as f32;
        let mean = x.mean_axis(Axis(1)).unwrap();
        let mut xhat = x.clone();
        for (mut row, &m) in xhat.rows_mut().into_iter().zip(mean.iter()) {
            row -= m;
        }
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        for (mut row, &s) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
            row *= s;
        }
        let y = &xhat * &self.gamma.v + &self.beta.v;
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let (xhat, inv_std) = self.cache.as_ref().expect("forward before backward");
        let d = gy.ncols() as f32;
        self.gamma.add_grad(
            &(gy * xhat)
                .sum_axis(Axis(0))
                .insert_axis(Axis(0)),
        );
        self.beta
            .add_grad(&gy.sum_axis(Axis(0)).insert_axis(Axis(0)));

        let gxhat = gy * &self.gamma.v;
        let mut gx = Array2::zeros(gy.raw_dim());
        for i in 0..gy.nrows() {
            let gxh = gxhat.row(i);
            let xh = xhat.row(i);
            let m1 = gxh.sum() / d;
            let m2 = gxh
                .iter()
                .zip(xh.iter())
                .map(|(a, b)| a * b)
                .sum::<f32>()
                / d;
            let s = inv_std[i];
            for j in 0..gy.ncols() {
                gx[(i, j)] = s * (gxh[j] - m1 - xh[j] * m2);
            }
        }
        gx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// RMSNorm over the last dimension (no mean subtraction, no bias).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsNorm {
    pub gamma: Tensor,
    pub eps: f32,
    #[serde(skip)]
    cache: Option<(Array2<f32>, Array1<f32>)>, // (x, inv_rms per row)
}

impl RmsNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::new(Array2::ones((1, dim))),
            eps: 1e-6,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let d = x.ncols() as f32;
        let ms = x.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_rms = ms.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut y = x.clone();
        for (mut row, &s) in y.rows_mut().into_iter().zip(inv_rms.iter()) {
            row *= s;
        }
        y *= &self.gamma.v;
        self.cache = Some((x.clone(), inv_rms));
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let (x, inv_rms) = self.cache.as_ref().expect("forward before backward");
        let d = x.ncols() as f32;
        let mut ggamma = Array2::zeros((1, x.ncols()));
        let mut gx = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let s = inv_rms[i];
            let dot: f32 = (0..x.ncols())
                .map(|j| gy[(i, j)] * self.gamma.v[(0, j)] * x[(i, j)])
                .sum();
            for j in 0..x.ncols() {
                ggamma[(0, j)] += gy[(i, j)] * x[(i, j)] * s;
                gx[(i, j)] =
                    gy[(i, j)] * self.gamma.v[(0, j)] * s - x[(i, j)] * dot * s * s * s / d;
            }
        }
        self.gamma.add_grad(&ggamma);
        gx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
    }
}

/// Activation used inside feed-forward blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        match self {
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Gelu => x.mapv(gelu),
        }
    }

    pub fn backward(&self, x: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
        match self {
            Activation::Relu => {
                let mut g = gy.clone();
                g.zip_mut_with(x, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            Activation::Gelu => {
                let mut g = gy.clone();
                g.zip_mut_with(x, |g, &x| *g *= gelu_deriv(x));
                g
            }
        }
    }
}

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044715;

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &Array2<f32>) -> Array2<f32> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f32 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Backward through a row-wise softmax: gx = y * (gy - sum(gy * y)).
pub fn softmax_backward(y: &Array2<f32>, gy: &Array2<f32>) -> Array2<f32> {
    let mut gx = Array2::zeros(y.raw_dim());
    for i in 0..y.nrows() {
        let dot: f32 = y.row(i).iter().zip(gy.row(i).iter()).map(|(a, b)| a * b).sum();
        for j in 0..y.ncols() {
            gx[(i, j)] = y[(i, j)] * (gy[(i, j)] - dot);
        }
    }
    gx
}

/// log(softmax(row)) for one logit row, stable.
pub fn log_softmax_row(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f32>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference gradient checking shared by the nn test suites.

    use super::*;

    /// Compare analytic gradients against central differences.
    ///
    /// `eval` must run forward for the current parameters and return the
    /// scalar loss; `backprop` must run forward+backward once, leaving
    /// gradients accumulated. `probes` picks (tensor index, element index)
    /// pairs to test.
    pub fn check<M: VisitTensors>(
        model: &mut M,
        mut eval: impl FnMut(&mut M) -> f32,
        mut backprop: impl FnMut(&mut M),
        probes: &[(usize, usize)],
        eps: f32,
        tol_abs: f32,
        tol_rel: f32,
    ) {
        model.zero_grads();
        backprop(model);
        let mut analytic = Vec::new();
        for &(ti, ei) in probes {
            let mut k = 0;
            let mut got = None;
            model.visit(&mut |_, t| {
                if k == ti {
                    got = Some(t.g.as_slice().unwrap()[ei % t.g.len()]);
                }
                k += 1;
            });
            analytic.push(got.expect("probe tensor index in range"));
        }
        for (p, &(ti, ei)) in probes.iter().enumerate() {
            let mut set = |m: &mut M, delta: f32| {
                let mut k = 0;
                m.visit(&mut |_, t| {
                    if k == ti {
                        let n = t.v.len();
                        t.v.as_slice_mut().unwrap()[ei % n] += delta;
                    }
                    k += 1;
                });
            };
            set(model, eps);
            let lp = eval(model);
            set(model, -2.0 * eps);
            let lm = eval(model);
            set(model, eps);
            let fd = (lp - lm) / (2.0 * eps);
            let an = analytic[p] as f64;
            let err = (fd as f64 - an).abs();
            assert!(
                err <= tol_abs as f64 + tol_rel as f64 * an.abs().max(fd.abs() as f64),
                "grad mismatch at probe {p}: analytic {an}, fd {fd}"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct LinearModel(Linear);
    impl VisitTensors for LinearModel {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.0.visit("lin", f);
        }
    }

    #[test]
    fn linear_gradients_match_fd() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0f32));
        let mut model = LinearModel(Linear::new(4, 5, &mut rng));
        let eval = |m: &mut LinearModel| (m.0.forward(&x) * &wsum).sum();
        let backprop = |m: &mut LinearModel| {
            m.0.forward(&x);
            m.0.backward(&wsum);
        };
        gradcheck::check(&mut model, eval, backprop, &[(0, 0), (0, 7), (1, 2)], 1e-2, 1e-3, 2e-2);
    }

    #[test]
    fn layernorm_gradients_match_fd() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0f32));
        struct M(LayerNorm);
        impl VisitTensors for M {
            fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
                self.0.visit("ln", f);
            }
        }
        let mut model = M(LayerNorm::new(6));
        // give gamma/beta nontrivial values
        model.0.gamma.v.mapv_inplace(|_| 1.3);
        model.0.beta.v.mapv_inplace(|_| 0.2);
        let eval = |m: &mut M| (m.0.forward(&x) * &wsum).sum();
        let backprop = |m: &mut M| {
            m.0.forward(&x);
            m.0.backward(&wsum);
        };
        gradcheck::check(&mut model, eval, backprop, &[(0, 1), (1, 3)], 1e-2, 1e-3, 2e-2);
    }

    #[test]
    fn rmsnorm_gradients_match_fd() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((2, 5), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array2::from_shape_fn((2, 5), |_| rng.gen_range(-1.0..1.0f32));
        struct M(RmsNorm);
        impl VisitTensors for M {
            fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
                self.0.visit("rms", f);
            }
        }
        let mut model = M(RmsNorm::new(5));
        let eval = |m: &mut M| (m.0.forward(&x) * &wsum).sum();
        let backprop = |m: &mut M| {
            m.0.forward(&x);
            m.0.backward(&wsum);
        };
        gradcheck::check(&mut model, eval, backprop, &[(0, 2)], 1e-2, 1e-3, 2e-2);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_matches_reference_points() {
        // reference values from the tanh approximation itself at x=0 and symmetry
        assert_eq!(gelu(0.0), 0.0);
        assert!(gelu(1.0) > 0.8 && gelu(1.0) < 0.9);
        assert!(gelu(-1.0) > -0.2 && gelu(-1.0) < -0.1);
    }
}
