//! Single-layer LSTM with final-state readout and manual BPTT.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Tensor};

/// Gate layout in the fused weight matrices: input, forget, cell, output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lstm {
    pub w_ih: Tensor, // (d_in, 4h)
    pub w_hh: Tensor, // (h, 4h)
    pub b: Tensor,    // (1, 4h)
    pub hidden: usize,
    #[serde(skip)]
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xs: Array2<f32>,          // (L, d_in)
    gates: Vec<Array1<f32>>,  // post-activation [i f g o] per step, (4h)
    cs: Vec<Array1<f32>>,     // cell states c_1..c_L
    hs: Vec<Array1<f32>>,     // hidden states h_1..h_L
}

impl Lstm {
    pub fn new(d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let a = (1.0 / hidden as f32).sqrt();
        Self {
            w_ih: Tensor::uniform(d_in, 4 * hidden, a, rng),
            w_hh: Tensor::uniform(hidden, 4 * hidden, a, rng),
            b: Tensor::zeros(1, 4 * hidden),
            hidden,
            cache: None,
        }
    }

    /// Run the sequence and return the final hidden state.
    /// Rows beyond `len` are ignored (padding).
    pub fn forward(&mut self, seq: &Array2<f32>, len: usize) -> Array1<f32> {
        let h = self.hidden;
        let steps = len.min(seq.nrows());
        let mut h_prev = Array1::zeros(h);
        let mut c_prev: Array1<f32> = Array1::zeros(h);
        let mut gates = Vec::with_capacity(steps);
        let mut cs = Vec::with_capacity(steps);
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = seq.row(t);
            let z = x_t.dot(&self.w_ih.v) + h_prev.dot(&self.w_hh.v) + self.b.v.row(0);
            let mut gate = Array1::zeros(4 * h);
            for j in 0..h {
                gate[j] = sigmoid(z[j]); // i
                gate[h + j] = sigmoid(z[h + j]); // f
                gate[2 * h + j] = z[2 * h + j].tanh(); // g
                gate[3 * h + j] = sigmoid(z[3 * h + j]); // o
            }
            let mut c = Array1::zeros(h);
            let mut h_t = Array1::zeros(h);
            for j in 0..h {
                c[j] = gate[h + j] * c_prev[j] + gate[j] * gate[2 * h + j];
                h_t[j] = gate[3 * h + j] * c[j].tanh();
            }
            gates.push(gate);
            cs.push(c.clone());
            hs.push(h_t.clone());
            c_prev = c;
            h_prev = h_t;
        }
        self.cache = Some(Cache {
            xs: seq.slice(s![..steps, ..]).to_owned(),
            gates,
            cs,
            hs,
        });
        h_prev
    }

    /// BPTT from the gradient of the final hidden state.
    pub fn backward(&mut self, gh_final: &Array1<f32>) {
        let cache = self.cache.take().expect("forward before backward");
        let h = self.hidden;
        let steps = cache.hs.len();
        if steps == 0 {
            return;
        }
        self.w_ih.ensure_grad();
        self.w_hh.ensure_grad();
        self.b.ensure_grad();

        let mut gh = gh_final.clone();
        let mut gc: Array1<f32> = Array1::zeros(h);
        for t in (0..steps).rev() {
            let gate = &cache.gates[t];
            let c = &cache.cs[t];
            let c_prev = if t == 0 {
                Array1::zeros(h)
            } else {
                cache.cs[t - 1].clone()
            };
            let h_prev = if t == 0 {
                Array1::zeros(h)
            } else {
                cache.hs[t - 1].clone()
            };

            let mut gz = Array1::zeros(4 * h);
            let mut gc_prev = Array1::zeros(h);
            for j in 0..h {
                let (i, f, g, o) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
                let tc = c[j].tanh();
                let go = gh[j] * tc;
                let gcj = gc[j] + gh[j] * o * (1.0 - tc * tc);
                let gi = gcj * g;
                let gf = gcj * c_prev[j];
                let gg = gcj * i;
                gc_prev[j] = gcj * f;
                gz[j] = gi * i * (1.0 - i);
                gz[h + j] = gf * f * (1.0 - f);
                gz[2 * h + j] = gg * (1.0 - g * g);
                gz[3 * h + j] = go * o * (1.0 - o);
            }

            let x_t = cache.xs.row(t);
            for a in 0..x_t.len() {
                for b in 0..4 * h {
                    self.w_ih.g[(a, b)] += x_t[a] * gz[b];
                }
            }
            for a in 0..h {
                for b in 0..4 * h {
                    self.w_hh.g[(a, b)] += h_prev[a] * gz[b];
                }
            }
            for b in 0..4 * h {
                self.b.g[(0, b)] += gz[b];
            }

            gh = self.w_hh.v.dot(&gz);
            gc = gc_prev;
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.w_ih"), &mut self.w_ih);
        f(&format!("{prefix}.w_hh"), &mut self.w_hh);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, VisitTensors};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct M {
        lstm: Lstm,
    }
    impl VisitTensors for M {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.lstm.visit("lstm", f);
        }
    }

    #[test]
    fn lstm_gradients_match_fd() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let seq = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0f32));
        let mut model = M {
            lstm: Lstm::new(3, 4, &mut rng),
        };
        let eval = |m: &mut M| {
            let h = m.lstm.forward(&seq, 5);
            h.iter().zip(wsum.iter()).map(|(a, b)| a * b).sum::<f32>()
        };
        let backprop = |m: &mut M| {
            m.lstm.forward(&seq, 5);
            m.lstm.backward(&wsum);
        };
        gradcheck::check(
            &mut model,
            eval,
            backprop,
            &[(0, 2), (0, 17), (1, 5), (2, 9)],
            1e-2,
            2e-3,
            3e-2,
        );
    }

    #[test]
    fn padding_rows_do_not_affect_state() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let mut lstm = Lstm::new(3, 4, &mut rng);
        let mut seq = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0f32));
        let h1 = lstm.forward(&seq, 4).to_vec();
        // mutate the padding region
        seq.row_mut(5).fill(99.0);
        let h2 = lstm.forward(&seq, 4).to_vec();
        assert_eq!(h1, h2);
    }
}
