//! Learnable tensors and their canonical naming.
//!
//! Tensor traversal order is fixed and shared by initialization, optimizer
//! state, and checkpoints, so every consumer agrees on which slot is which.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::numerics::{real, Scalar, SeedRng, Tensor};

/// Weights of one transformer layer, shared by both streams.
#[derive(Debug, Clone)]
pub struct LayerParams<F: Scalar> {
    pub wq: Tensor<F>,
    pub wke: Tensor<F>,
    pub wkr: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub ffn_w1: Tensor<F>,
    pub ffn_b1: Tensor<F>,
    pub ffn_w2: Tensor<F>,
    pub ffn_b2: Tensor<F>,
    pub ln1_g: Tensor<F>,
    pub ln1_b: Tensor<F>,
    pub ln2_g: Tensor<F>,
    pub ln2_b: Tensor<F>,
}

/// All learnable tensors: the embedding table (also the tied output
/// projection), the query-stream seed vector, the global attention biases,
/// the style-classifier head, and the per-layer weights.
#[derive(Debug, Clone)]
pub struct Params<F: Scalar> {
    pub embed: Tensor<F>,
    pub q_init: Tensor<F>,
    pub u: Tensor<F>,
    pub v: Tensor<F>,
    pub cls_w: Tensor<F>,
    pub cls_b: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
}

fn truncated_normal<F: Scalar>(rng: &mut SeedRng, shape: Vec<usize>, sigma: f64) -> Tensor<F> {
    let dist = Normal::new(0.0, sigma).expect("valid sigma");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mut x = dist.sample(rng);
            while x.abs() > 2.0 * sigma {
                x = dist.sample(rng);
            }
            real(x)
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl<F: Scalar> Params<F> {
    /// Draws fresh parameters: truncated normal (σ = 0.02, clipped at 2σ)
    /// for weights, zeros for additive biases, ones for layer-norm gains.
    pub fn init(config: &ModelConfig, rng: &mut SeedRng) -> Self {
        let d = config.d_model;
        let mut draw = |shape: Vec<usize>| truncated_normal(rng, shape, 0.02);
        let embed = draw(vec![config.vocab_size, d]);
        let q_init = draw(vec![d]);
        let u = draw(vec![d]);
        let v = draw(vec![d]);
        let cls_w = draw(vec![d, config.num_styles]);
        let cls_b = Tensor::zeros(vec![config.num_styles]);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: draw(vec![d, d]),
                wke: draw(vec![d, d]),
                wkr: draw(vec![d, d]),
                wv: draw(vec![d, d]),
                wo: draw(vec![d, d]),
                ffn_w1: draw(vec![d, config.d_ff]),
                ffn_b1: Tensor::zeros(vec![config.d_ff]),
                ffn_w2: draw(vec![config.d_ff, d]),
                ffn_b2: Tensor::zeros(vec![d]),
                ln1_g: Tensor::full(vec![d], F::one()),
                ln1_b: Tensor::zeros(vec![d]),
                ln2_g: Tensor::full(vec![d], F::one()),
                ln2_b: Tensor::zeros(vec![d]),
            })
            .collect();
        Params { embed, q_init, u, v, cls_w, cls_b, layers }
    }

    /// All-zero parameters of the right shapes. A zero model emits uniform
    /// distributions, which several identities in the tests rely on.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut rng = SeedRng::new(0);
        let mut p = Self::init(config, &mut rng);
        for (_, t) in p.named_tensors_mut() {
            for x in t.data_mut() {
                *x = F::zero();
            }
        }
        p
    }

    /// Tensors paired with their canonical names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = vec![
            ("embed".into(), &self.embed),
            ("q_init".into(), &self.q_init),
            ("u".into(), &self.u),
            ("v".into(), &self.v),
            ("cls_w".into(), &self.cls_w),
            ("cls_b".into(), &self.cls_b),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend([
                (format!("layer{l}.wq"), &layer.wq),
                (format!("layer{l}.wke"), &layer.wke),
                (format!("layer{l}.wkr"), &layer.wkr),
                (format!("layer{l}.wv"), &layer.wv),
                (format!("layer{l}.wo"), &layer.wo),
                (format!("layer{l}.ffn_w1"), &layer.ffn_w1),
                (format!("layer{l}.ffn_b1"), &layer.ffn_b1),
                (format!("layer{l}.ffn_w2"), &layer.ffn_w2),
                (format!("layer{l}.ffn_b2"), &layer.ffn_b2),
                (format!("layer{l}.ln1_g"), &layer.ln1_g),
                (format!("layer{l}.ln1_b"), &layer.ln1_b),
                (format!("layer{l}.ln2_g"), &layer.ln2_g),
                (format!("layer{l}.ln2_b"), &layer.ln2_b),
            ]);
        }
        out
    }

    /// Mutable variant of [`Params::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = vec![
            ("embed".into(), &mut self.embed),
            ("q_init".into(), &mut self.q_init),
            ("u".into(), &mut self.u),
            ("v".into(), &mut self.v),
            ("cls_w".into(), &mut self.cls_w),
            ("cls_b".into(), &mut self.cls_b),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend([
                (format!("layer{l}.wq"), &mut layer.wq),
                (format!("layer{l}.wke"), &mut layer.wke),
                (format!("layer{l}.wkr"), &mut layer.wkr),
                (format!("layer{l}.wv"), &mut layer.wv),
                (format!("layer{l}.wo"), &mut layer.wo),
                (format!("layer{l}.ffn_w1"), &mut layer.ffn_w1),
                (format!("layer{l}.ffn_b1"), &mut layer.ffn_b1),
                (format!("layer{l}.ffn_w2"), &mut layer.ffn_w2),
                (format!("layer{l}.ffn_b2"), &mut layer.ffn_b2),
                (format!("layer{l}.ln1_g"), &mut layer.ln1_g),
                (format!("layer{l}.ln1_b"), &mut layer.ln1_b),
                (format!("layer{l}.ln2_g"), &mut layer.ln2_g),
                (format!("layer{l}.ln2_b"), &mut layer.ln2_b),
            ]);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        Params {
            embed: self.embed.cast(),
            q_init: self.q_init.cast(),
            u: self.u.cast(),
            v: self.v.cast(),
            cls_w: self.cls_w.cast(),
            cls_b: self.cls_b.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: l.wq.cast(),
                    wke: l.wke.cast(),
                    wkr: l.wkr.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ffn_w1: l.ffn_w1.cast(),
                    ffn_b1: l.ffn_b1.cast(),
                    ffn_w2: l.ffn_w2.cast(),
                    ffn_b2: l.ffn_b2.cast(),
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                })
                .collect(),
        }
    }

    /// Adds `scale * noise` to every weight; used by tests that need a
    /// nearby but different model.
    pub fn perturb(&mut self, rng: &mut SeedRng, scale: f64) {
        for (_, t) in self.named_tensors_mut() {
            for x in t.data_mut() {
                *x += real::<F>(rng.gen_range(-1.0..1.0) * scale);
            }
        }
    }
}
