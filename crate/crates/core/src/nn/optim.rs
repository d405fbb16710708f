//! AdamW with decoupled weight decay. State is kept in visit order, so the
//! same model must be stepped with the same optimizer instance throughout.

use ndarray::Array2;

use super::{Tensor, VisitTensors};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: u64,
    state: Vec<(Array2<f32>, Array2<f32>)>, // (m, v) per tensor
}

impl AdamW {
    pub fn new(lr: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            state: Vec::new(),
        }
    }

    /// Plain Adam (no decoupled decay).
    pub fn adam(lr: f32) -> Self {
        Self::new(lr, 0.0)
    }

    /// Apply one update, scaling the base learning rate by `lr_scale`,
    /// then zero all gradients.
    pub fn step<M: VisitTensors>(&mut self, model: &mut M, lr_scale: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.lr * lr_scale;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let state = &mut self.state;
        let mut i = 0usize;
        model.visit(&mut |_, t: &mut Tensor| {
            t.ensure_grad();
            if state.len() == i {
                state.push((Array2::zeros(t.v.raw_dim()), Array2::zeros(t.v.raw_dim())));
            }
            let (m, v) = &mut state[i];
            m.zip_mut_with(&t.g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(&t.g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            for ((p, &m), &v) in t.v.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
            }
            t.g.fill(0.0);
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct M(Linear);
    impl VisitTensors for M {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.0.visit("lin", f);
        }
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        // minimize ||x W - y||^2 over W
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0f32));
        let y = Array2::from_shape_fn((8, 2), |_| rng.gen_range(-1.0..1.0f32));
        let mut model = M(Linear::new(3, 2, &mut rng));
        let mut opt = AdamW::new(0.05, 0.0);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let pred = model.0.forward(&x);
            let diff = &pred - &y;
            losses.push(diff.mapv(|v| v * v).sum());
            model.0.backward(&(&diff * 2.0));
            opt.step(&mut model, 1.0);
        }
        assert!(losses[199] < 0.05 * losses[0], "loss should collapse: {losses:?}");
    }

    #[test]
    fn weight_decay_shrinks_unused_params() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut model = M(Linear::new(2, 2, &mut rng));
        let before = model.0.w.v.mapv(f32::abs).sum();
        let mut opt = AdamW::new(0.01, 0.5);
        for _ in 0..50 {
            // zero gradient step: only decay acts
            model.zero_grads();
            opt.step(&mut model, 1.0);
        }
        let after = model.0.w.v.mapv(f32::abs).sum();
        assert!(after < before * 0.9);
    }
}
