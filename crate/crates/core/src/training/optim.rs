use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, ParamId, ParamStore, Tensor};

fn default_betas() -> (f64, f64) {
    (0.9, 0.98)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    1.0
}
fn default_warmup() -> usize {
    4000
}
fn default_anneal_steps() -> Vec<usize> {
    vec![300_000, 400_000, 500_000]
}
fn default_anneal_rate() -> f64 {
    0.3
}
fn default_patience() -> usize {
    5
}

/// Optimizer and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps_adam: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Apply warmup and annealing; constant `lr` otherwise.
    #[serde(default)]
    pub schedule: bool,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_anneal_steps")]
    pub anneal_steps: Vec<usize>,
    #[serde(default = "default_anneal_rate")]
    pub anneal_rate: f64,
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(lr: f64, batch_size: usize, max_epochs: usize) -> Self {
        Self {
            lr,
            batch_size,
            betas: default_betas(),
            eps_adam: default_eps(),
            grad_clip: default_clip(),
            schedule: false,
            warmup_steps: default_warmup(),
            anneal_steps: default_anneal_steps(),
            anneal_rate: default_anneal_rate(),
            max_epochs,
            patience: default_patience(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push("lr");
        }
        if self.batch_size == 0 {
            bad.push("batch_size");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            bad.push("betas");
        }
        if !(self.eps_adam > 0.0) {
            bad.push("eps_adam");
        }
        if !(self.grad_clip > 0.0) {
            bad.push("grad_clip");
        }
        if !(self.anneal_rate > 0.0) {
            bad.push("anneal_rate");
        }
        if self.max_epochs == 0 {
            bad.push("max_epochs");
        }
        if self.patience == 0 {
            bad.push("patience");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            config_err(format!("invalid training fields: {}", bad.join(", ")))
        }
    }
}

/// Learning rate for optimizer step `step`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    if !config.schedule {
        return config.lr;
    }
    if step < config.warmup_steps {
        return config.lr * step as f64 / config.warmup_steps as f64;
    }
    let passed = config.anneal_steps.iter().filter(|&&b| step >= b).count();
    config.lr * config.anneal_rate.powi(passed as i32)
}

/// Rescales `grads` so their global norm is at most `threshold`; returns the original norm.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Gradients<T>, threshold: T) -> T {
    let norm = grads.global_norm();
    if norm > threshold {
        let s = threshold / norm;
        for (_, g) in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    state: BTreeMap<ParamId, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            beta1: T::of(config.betas.0),
            beta2: T::of(config.betas.1),
            eps: T::of(config.eps_adam),
            t: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// First and second moments of `id`, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.state.get(&id).map(|s| (&s.m, &s.v))
    }

    /// One update of every trainable parameter. A trainable parameter with no
    /// gradient entry is treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        for (id, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::Divergence(format!("non-finite gradient for {}", store.get(id).name)));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::of(lr);
        for id in store.trainable_ids() {
            let shape = store.value(id).shape().to_vec();
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            });
            let g = grads.get(id);
            let value = store.value_mut(id).data_mut();
            for (i, p) in value.iter_mut().enumerate() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                let m = &mut st.m.data_mut()[i];
                *m = b1 * *m + (T::one() - b1) * gi;
                let mi = *m;
                let v = &mut st.v.data_mut()[i];
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                let vi = *v;
                *p -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
