//! Encoder/decoder transformer blocks in two flavors: pre-RMSNorm with ReLU
//! and post-LayerNorm with GELU.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::MultiHeadAttention;
use super::{Activation, LayerNorm, Linear, RmsNorm, Tensor};

/// Architectural flavor of a transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    /// Pre-norm RMSNorm + ReLU feed-forward (T5-style).
    PreRms,
    /// Post-norm LayerNorm + GELU feed-forward (BART-style).
    PostLn,
}

impl Flavor {
    fn activation(&self) -> Activation {
        match self {
            Flavor::PreRms => Activation::Relu,
            Flavor::PostLn => Activation::Gelu,
        }
    }
}

/// Either norm type behind one interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Norm {
    Rms(RmsNorm),
    Ln(LayerNorm),
}

impl Norm {
    fn new(flavor: Flavor, dim: usize) -> Self {
        match flavor {
            Flavor::PreRms => Norm::Rms(RmsNorm::new(dim)),
            Flavor::PostLn => Norm::Ln(LayerNorm::new(dim)),
        }
    }

    fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        match self {
            Norm::Rms(n) => n.forward(x),
            Norm::Ln(n) => n.forward(x),
        }
    }

    fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        match self {
            Norm::Rms(n) => n.backward(gy),
            Norm::Ln(n) => n.backward(gy),
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Norm::Rms(n) => n.visit(prefix, f),
            Norm::Ln(n) => n.visit(prefix, f),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
    act: Activation,
    #[serde(skip)]
    cache_pre: Option<Array2<f32>>,
}

impl FeedForward {
    pub fn new(d_model: usize, d_ff: usize, act: Activation, rng: &mut impl Rng) -> Self {
        Self {
            lin1: Linear::new(d_model, d_ff, rng),
            lin2: Linear::new(d_ff, d_model, rng),
            act,
            cache_pre: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let pre = self.lin1.forward(x);
        let a = self.act.forward(&pre);
        self.cache_pre = Some(pre);
        self.lin2.forward(&a)
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let pre = self.cache_pre.take().expect("forward before backward");
        let ga = self.lin2.backward(gy);
        let gpre = self.act.backward(&pre, &ga);
        self.lin1.backward(&gpre)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.lin1.visit(&format!("{prefix}.lin1"), f);
        self.lin2.visit(&format!("{prefix}.lin2"), f);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderLayer {
    flavor: Flavor,
    norm1: Norm,
    attn: MultiHeadAttention,
    norm2: Norm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(flavor: Flavor, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            flavor,
            norm1: Norm::new(flavor, d_model),
            attn: MultiHeadAttention::new(d_model, n_heads, rng),
            norm2: Norm::new(flavor, d_model),
            ffn: FeedForward::new(d_model, d_ff, flavor.activation(), rng),
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        match self.flavor {
            Flavor::PreRms => {
                let n1 = self.norm1.forward(x);
                let a = x + &self.attn.forward(&n1, &n1, false);
                let n2 = self.norm2.forward(&a);
                &a + &self.ffn.forward(&n2)
            }
            Flavor::PostLn => {
                let a = self.norm1.forward(&(x + &self.attn.forward(x, x, false)));
                self.norm2.forward(&(&a + &self.ffn.forward(&a)))
            }
        }
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        match self.flavor {
            Flavor::PreRms => {
                let ga = gy + &self.norm2.backward(&self.ffn.backward(gy));
                let (gq, gkv) = self.attn.backward(&ga);
                &ga + &self.norm1.backward(&(gq + gkv))
            }
            Flavor::PostLn => {
                let g2 = self.norm2.backward(gy);
                let ga = &g2 + &self.ffn.backward(&g2);
                let g1 = self.norm1.backward(&ga);
                let (gq, gkv) = self.attn.backward(&g1);
                &g1 + &(gq + gkv)
            }
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderLayer {
    flavor: Flavor,
    norm1: Norm,
    self_attn: MultiHeadAttention,
    norm2: Norm,
    cross_attn: MultiHeadAttention,
    norm3: Norm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(flavor: Flavor, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            flavor,
            norm1: Norm::new(flavor, d_model),
            self_attn: MultiHeadAttention::new(d_model, n_heads, rng),
            norm2: Norm::new(flavor, d_model),
            cross_attn: MultiHeadAttention::new(d_model, n_heads, rng),
            norm3: Norm::new(flavor, d_model),
            ffn: FeedForward::new(d_model, d_ff, flavor.activation(), rng),
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, enc_out: &Array2<f32>) -> Array2<f32> {
        match self.flavor {
            Flavor::PreRms => {
                let n1 = self.norm1.forward(x);
                let a = x + &self.self_attn.forward(&n1, &n1, true);
                let n2 = self.norm2.forward(&a);
                let b = &a + &self.cross_attn.forward(&n2, enc_out, false);
                let n3 = self.norm3.forward(&b);
                &b + &self.ffn.forward(&n3)
            }
            Flavor::PostLn => {
                let a = self
                    .norm1
                    .forward(&(x + &self.self_attn.forward(x, x, true)));
                let b = self
                    .norm2
                    .forward(&(&a + &self.cross_attn.forward(&a, enc_out, false)));
                self.norm3.forward(&(&b + &self.ffn.forward(&b)))
            }
        }
    }

    /// Returns (grad wrt x, grad wrt enc_out).
    pub fn backward(&mut self, gy: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        match self.flavor {
            Flavor::PreRms => {
                let gb = gy + &self.norm3.backward(&self.ffn.backward(gy));
                let (gq_cross, genc) = self.cross_attn.backward(&gb);
                let ga = &gb + &self.norm2.backward(&gq_cross);
                let (gq_self, gkv_self) = self.self_attn.backward(&ga);
                let gx = &ga + &self.norm1.backward(&(gq_self + gkv_self));
                (gx, genc)
            }
            Flavor::PostLn => {
                let g3 = self.norm3.backward(gy);
                let gb = &g3 + &self.ffn.backward(&g3);
                let g2 = self.norm2.backward(&gb);
                let (gq_cross, genc) = self.cross_attn.backward(&g2);
                let ga = &g2 + &gq_cross;
                let g1 = self.norm1.backward(&ga);
                let (gq_self, gkv_self) = self.self_attn.backward(&g1);
                let gx = &g1 + &(gq_self + gkv_self);
                (gx, genc)
            }
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.cross_attn.visit(&format!("{prefix}.cross_attn"), f);
        self.norm3.visit(&format!("{prefix}.norm3"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
    }
}

/// Transformer encoder stack; pre-norm flavors get a final norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub final_norm: Option<RmsNorm>,
}

impl Encoder {
    pub fn new(flavor: Flavor, n_layers: usize, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..n_layers)
            .map(|_| EncoderLayer::new(flavor, d_model, n_heads, d_ff, rng))
            .collect();
        let final_norm = match flavor {
            Flavor::PreRms => Some(RmsNorm::new(d_model)),
            Flavor::PostLn => None,
        };
        Self { layers, final_norm }
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h);
        }
        if let Some(n) = &mut self.final_norm {
            h = n.forward(&h);
        }
        h
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let mut g = gy.clone();
        if let Some(n) = &mut self.final_norm {
            g = n.backward(&g);
        }
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("{prefix}.layer{i}"), f);
        }
        if let Some(n) = &mut self.final_norm {
            n.visit(&format!("{prefix}.final_norm"), f);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub final_norm: Option<RmsNorm>,
}

impl Decoder {
    pub fn new(flavor: Flavor, n_layers: usize, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..n_layers)
            .map(|_| DecoderLayer::new(flavor, d_model, n_heads, d_ff, rng))
            .collect();
        let final_norm = match flavor {
            Flavor::PreRms => Some(RmsNorm::new(d_model)),
            Flavor::PostLn => None,
        };
        Self { layers, final_norm }
    }

    pub fn forward(&mut self, x: &Array2<f32>, enc_out: &Array2<f32>) -> Array2<f32> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, enc_out);
        }
        if let Some(n) = &mut self.final_norm {
            h = n.forward(&h);
        }
        h
    }

    /// Returns (grad wrt x, grad wrt enc_out accumulated over layers).
    pub fn backward(&mut self, gy: &Array2<f32>, enc_rows: usize, d_model: usize) -> (Array2<f32>, Array2<f32>) {
        let mut g = gy.clone();
        if let Some(n) = &mut self.final_norm {
            g = n.backward(&g);
        }
        let mut genc = Array2::zeros((enc_rows, d_model));
        for layer in self.layers.iter_mut().rev() {
            let (gx, ge) = layer.backward(&g);
            g = gx;
            genc += &ge;
        }
        (g, genc)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("{prefix}.layer{i}"), f);
        }
        if let Some(n) = &mut self.final_norm {
            n.visit(&format!("{prefix}.final_norm"), f);
        }
    }
}

/// Positional information added to token embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PosEnc {
    Sinusoidal { table: Array2<f32> },
    Learned { emb: Tensor },
}

impl PosEnc {
    pub fn sinusoidal(max_positions: usize, d_model: usize) -> Self {
        let mut table = Array2::zeros((max_positions, d_model));
        for pos in 0..max_positions {
            for i in 0..d_model / 2 {
                let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
                let angle = pos as f64 * rate;
                table[(pos, 2 * i)] = angle.sin() as f32;
                table[(pos, 2 * i + 1)] = angle.cos() as f32;
            }
        }
        PosEnc::Sinusoidal { table }
    }

    pub fn learned(max_positions: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        PosEnc::Learned {
            emb: Tensor::uniform(max_positions, d_model, 0.05, rng),
        }
    }

    pub fn max_positions(&self) -> usize {
        match self {
            PosEnc::Sinusoidal { table } => table.nrows(),
            PosEnc::Learned { emb } => emb.v.nrows(),
        }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let l = x.nrows();
        match self {
            PosEnc::Sinusoidal { table } => x + &table.slice(ndarray::s![..l, ..]),
            PosEnc::Learned { emb } => x + &emb.v.slice(ndarray::s![..l, ..]),
        }
    }

    /// Positional grads accumulate for learned tables; token grad passes through.
    pub fn backward(&mut self, gy: &Array2<f32>) {
        if let PosEnc::Learned { emb } = self {
            emb.ensure_grad();
            let l = gy.nrows();
            let mut rows = emb.g.slice_mut(ndarray::s![..l, ..]);
            rows += gy;
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let PosEnc::Learned { emb } = self {
            f(&format!("{prefix}.pos"), emb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, VisitTensors};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct EncModel {
        enc: Encoder,
    }
    impl VisitTensors for EncModel {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.enc.visit("enc", f);
        }
    }

    fn check_encoder(flavor: Flavor, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0f32));
        let mut model = EncModel {
            enc: Encoder::new(flavor, 2, 8, 2, 16, &mut rng),
        };
        let eval = |m: &mut EncModel| (m.enc.forward(&x) * &wsum).sum();
        let backprop = |m: &mut EncModel| {
            m.enc.forward(&x);
            m.enc.backward(&wsum);
        };
        gradcheck::check(
            &mut model,
            eval,
            backprop,
            &[(0, 0), (3, 5), (9, 2), (14, 7)],
            1e-2,
            2e-3,
            4e-2,
        );
    }

    #[test]
    fn encoder_pre_rms_gradients() {
        check_encoder(Flavor::PreRms, 21);
    }

    #[test]
    fn encoder_post_ln_gradients() {
        check_encoder(Flavor::PostLn, 22);
    }

    struct DecModel {
        dec: Decoder,
        enc_out: Array2<f32>,
    }
    impl VisitTensors for DecModel {
        fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            self.dec.visit("dec", f);
        }
    }

    #[test]
    fn decoder_gradients_match_fd() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let x = Array2::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0f32));
        let enc_out = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0f32));
        let wsum = Array2::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0f32));
        let mut model = DecModel {
            dec: Decoder::new(Flavor::PreRms, 1, 8, 2, 16, &mut rng),
            enc_out,
        };
        let eval = |m: &mut DecModel| (m.dec.forward(&x, &m.enc_out.clone()) * &wsum).sum();
        let backprop = |m: &mut DecModel| {
            let e = m.enc_out.clone();
            m.dec.forward(&x, &e);
            m.dec.backward(&wsum, 3, 8);
        };
        gradcheck::check(
            &mut model,
            eval,
            backprop,
            &[(0, 4), (8, 9), (16, 1)],
            1e-2,
            2e-3,
            4e-2,
        );
    }

    #[test]
    fn sinusoidal_positions_distinguish_order() {
        let pos = PosEnc::sinusoidal(16, 8);
        let x = Array2::zeros((3, 8));
        let y = pos.forward(&x);
        assert!(y.row(0) != y.row(1));
        assert!(y.row(1) != y.row(2));
    }
}
