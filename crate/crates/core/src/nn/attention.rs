//! Multi-head scaled dot-product attention with manual backprop.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_backward, softmax_rows, Linear, Tensor};

const MASK_NEG: f32 = -1e30;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    #[serde(skip)]
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    attn: Vec<Array2<f32>>, // per head, (Lq, Lk)
}

impl MultiHeadAttention {
    pub fn new(d_model: usize, n_heads: usize, rng: &mut impl Rng) -> Self {
        assert!(d_model % n_heads == 0, "d_model divisible by heads");
        Self {
            wq: Linear::new(d_model, d_model, rng),
            wk: Linear::new(d_model, d_model, rng),
            wv: Linear::new(d_model, d_model, rng),
            wo: Linear::new(d_model, d_model, rng),
            n_heads,
            cache: None,
        }
    }

    /// Attend queries from `x_q` over keys/values from `x_kv`.
    pub fn forward(&mut self, x_q: &Array2<f32>, x_kv: &Array2<f32>, causal: bool) -> Array2<f32> {
        let (lq, d) = (x_q.nrows(), x_q.ncols());
        let lk = x_kv.nrows();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let q = self.wq.forward(x_q);
        let k = self.wk.forward(x_kv);
        let v = self.wv.forward(x_kv);

        let mut ctx = Array2::zeros((lq, d));
        let mut attn_heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            if causal {
                for i in 0..lq {
                    for j in (i + 1)..lk {
                        scores[(i, j)] = MASK_NEG;
                    }
                }
            }
            let attn = softmax_rows(&scores);
            let ctxh = attn.dot(&vh);
            ctx.slice_mut(cols).assign(&ctxh);
            attn_heads.push(attn);
        }
        let out = self.wo.forward(&ctx);
        self.cache = Some(Cache {
            q,
            k,
            v,
            attn: attn_heads,
        });
        out
    }

    /// Returns (grad wrt x_q, grad wrt x_kv); for self-attention add them.
    pub fn backward(&mut self, gy: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        let cache = self.cache.take().expect("forward before backward");
        let d = cache.q.ncols();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let gctx = self.wo.backward(gy);
        let mut gq = Array2::zeros(cache.q.raw_dim());
        let mut gk = Array2::zeros(cache.k.raw_dim());
        let mut gv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let attn = &cache.attn[h];
            let gctxh = gctx.slice(cols);

            let gattn = gctxh.dot(&vh.t());
            let gvh = attn.t().dot(&gctxh);
            let gscores = softmax_backward(attn, &gattn);
            let gqh = gscores.dot(&kh) * scale;
            let gkh = gscores.t().dot(&qh) * scale;

            gq.slice_mut(cols).assign(&gqh);
            gk.slice_mut(cols).assign(&gkh);
            gv.slice_mut(cols).assign(&gvh);
        }
        let gx_q = self.wq.backward(&gq);
        let gx_kv = self.wk.backward(&gk) + self.wv.backward(&gv);
        (gx_q, gx_kv)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.wq.visit(&format!("{prefix}.wq"), f);
        self.wk.visit(&format!("{prefix}.wk"), f);
        self.wv.visit(&format!("{prefix}.wv"), f);
        self.wo.visit(&format!("{prefix}.wo"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, VisitTensors};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct M {
        attn: MultiHeadAttention,
        causal: bool,
    }
    impl VisitTensors for M {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.attn.visit("attn", f);
        }
    }

    fn check_attention(causal: bool, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array2::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0f32));
        let mut model = M {
            attn: MultiHeadAttention::new(8, 2, &mut rng),
            causal,
        };
        let eval = |m: &mut M| (m.attn.forward(&x, &x, m.causal) * &wsum).sum();
        let backprop = |m: &mut M| {
            m.attn.forward(&x, &x, m.causal);
            m.attn.backward(&wsum);
        };
        gradcheck::check(
            &mut model,
            eval,
            backprop,
            &[(0, 3), (2, 11), (4, 20), (6, 5)],
            1e-2,
            2e-3,
            3e-2,
        );
    }

    #[test]
    fn attention_gradients_match_fd() {
        check_attention(false, 10);
    }

    #[test]
    fn causal_attention_gradients_match_fd() {
        check_attention(true, 11);
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut attn = MultiHeadAttention::new(8, 2, &mut rng);
        let x = Array2::from_shape_fn((5, 8), |_| rng.gen_range(-1.0..1.0f32));
        let full = attn.forward(&x, &x, true);
        // truncating the suffix must not change earlier rows under a causal mask
        let x3 = x.slice(s![..3, ..]).to_owned();
        let part = attn.forward(&x3, &x3, true);
        for i in 0..3 {
            for j in 0..8 {
                assert!((full[(i, j)] - part[(i, j)]).abs() < 1e-5);
            }
        }
    }
}
