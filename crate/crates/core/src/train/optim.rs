use ndarray::{Array2, Zip};

use crate::autograd::Gradients;
use crate::model::ModelParams;

/// Adam with decoupled weight decay. Only slots that receive a gradient are
/// touched, so an optimizer over the decoder leaves every other tensor
/// bit-identical.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: Vec<u64>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.tensors().iter().map(|t| Array2::zeros(t.dim())).collect();
        AdamW {
            lr,
            weight_decay,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: vec![0; zeros.len()],
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients) {
        for slot in 0..params.len() {
            let Some(g) = grads.get(slot) else { continue };
            self.step[slot] += 1;
            let t = self.step[slot] as i32;
            let (b1, b2) = (self.beta1, self.beta2);
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let (lr, wd, eps) = (self.lr, self.weight_decay, self.eps);
            Zip::from(params.get_mut(slot))
                .and(&mut self.m[slot])
                .and(&mut self.v[slot])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *p -= lr * wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::model::{Ablations, ModelConfig};

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr·sign(g).
        let cfg = ModelConfig { n_heads: 2, hidden_enc: 4, ..ModelConfig::for_rois(4) };
        let mut params = ModelParams::init(&cfg, &Ablations::default(), 1);
        let before = params.clone();
        let mut g = Graph::new();
        let s = params.layout().summary;
        let v = g.param(s, params.get(s).clone());
        let sq = g.sum(v);
        let grads = g.backward(sq, params.len());
        let mut opt = AdamW::new(&params, 0.01, 0.0);
        opt.update(&mut params, &grads);
        for (a, b) in params.get(s).iter().zip(before.get(s)) {
            assert!((b - a - 0.01).abs() < 1e-9);
        }
        for slot in (0..params.len()).filter(|&k| k != s) {
            assert_eq!(params.get(slot), before.get(slot));
        }
    }

    #[test]
    fn decay_is_decoupled() {
        let cfg = ModelConfig { n_heads: 2, hidden_enc: 4, ..ModelConfig::for_rois(4) };
        let mut params = ModelParams::init(&cfg, &Ablations::default(), 1);
        let s = params.layout().summary;
        let before = params.get(s).clone();
        let mut g = Graph::new();
        let v = g.param(s, before.clone());
        let zero = g.scale(v, 0.0);
        let loss = g.sum(zero);
        let grads = g.backward(loss, params.len());
        let mut opt = AdamW::new(&params, 0.1, 0.5);
        opt.update(&mut params, &grads);
        for (a, b) in params.get(s).iter().zip(&before) {
            assert!((a - b * 0.95).abs() < 1e-12);
        }
    }
}
