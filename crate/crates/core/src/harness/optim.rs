use std::f64::consts::PI;

use ndarray::ArrayD;

use crate::nn::{Grads, Model, Scalar};

/// Cosine decay from `lr` at step 0 to 0 at `total` steps.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    0.5 * lr * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Grads<T>, lr: f64) {
        let grads = grads.named_tensors();
        let mut params = model.trainable_tensors_mut();
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c = |x: f64| T::from_f64(x).expect("finite constant");
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let (lr_t, eps, wd) = (c(lr), c(self.eps), c(self.weight_decay));
        for (k, ((pn, p), (gn, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            assert_eq!(pn, gn);
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps) + wd * *p;
                *p -= lr_t * update;
            });
        }
    }
}
