use std::collections::HashMap;

use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Adaptive-moment optimizer with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Float> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, clip_norm: Option<f64>) -> Self {
        Self { beta1, beta2, eps, clip_norm, step: 0, moments: HashMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Step count and first/second moments, sorted by parameter name.
    pub fn export_state(&self) -> (u64, Vec<(String, Tensor<T>, Tensor<T>)>) {
        let mut m: Vec<_> = self.moments.iter().map(|(k, (a, b))| (k.clone(), a.clone(), b.clone())).collect();
        m.sort_by(|a, b| a.0.cmp(&b.0));
        (self.step, m)
    }

    pub fn import_state(&mut self, step: u64, moments: Vec<(String, Tensor<T>, Tensor<T>)>) {
        self.step = step;
        self.moments = moments.into_iter().map(|(k, a, b)| (k, (a, b))).collect();
    }

    /// Applies one update to every trainable parameter that has a gradient.
    /// Returns the pre-clipping global gradient norm.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> f64 {
        let norm = grads
            .params()
            .filter(|(name, _)| params.get(name).is_some_and(|p| p.trainable))
            .map(|(_, g)| g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let step_size = T::lit(lr * bc2.sqrt() / bc1);
        let eps_hat = T::lit(self.eps * bc2.sqrt());
        let scale = T::lit(scale);
        for (name, g) in grads.params() {
            let Some(p) = params.get_mut(name) else { continue };
            if !p.trainable {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi * scale;
                md[i] = b1 * md[i] + (T::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (T::one() - b2) * gi * gi;
                *w -= step_size * md[i] / (vd[i].sqrt() + eps_hat);
            }
        }
        norm
    }
}

/// Cosine decay from `lr_max` to `lr_min` over `total` steps.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total <= 1 {
        return lr_max;
    }
    let t = (step.min(total - 1)) as f64 / (total - 1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
