use numcore::{Float, ParamId, ParamStore};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the parameters (AdamW) instead of
    /// adding `weight_decay * theta` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, decoupled: false }
    }
}

/// Adam with bias correction over every trainable entry of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T: Float> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    lr_scale: Vec<f64>,
}

impl<T: Float> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |(_, e): (ParamId, &numcore::ParamEntry<T>)| {
            if e.is_trainable() {
                vec![T::zero(); e.value().len()]
            } else {
                Vec::new()
            }
        };
        Adam {
            config,
            t: 0,
            m: store.entries().map(zeros).collect(),
            v: store.entries().map(zeros).collect(),
            lr_scale: vec![1.0; store.len()],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Multiply the learning rate of one parameter by `scale`.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.lr_scale[id.index()] = scale;
    }

    /// One update at learning rate `lr` using the gradients held by `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer built for {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let ids: Vec<ParamId> = store.entries().filter(|(_, e)| e.is_trainable()).map(|(id, _)| id).collect();
        if let Some(&id) = ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(Error::Config(format!("missing gradient for trainable parameter `{}`", store.entry(id).name)));
        }
        self.t += 1;
        let c = &self.config;
        let t = self.t as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one_b1 = T::from_f64_lossy(1.0 - c.beta1);
        let one_b2 = T::from_f64_lossy(1.0 - c.beta2);
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let eps = T::from_f64_lossy(c.eps);
        let wd = T::from_f64_lossy(c.weight_decay);
        for id in ids {
            let i = id.index();
            let lr_i = T::from_f64_lossy(lr * self.lr_scale[i]);
            let grad = store.grad(id).expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let theta = store.value_mut(id).data_mut();
            for (((p, &g0), m), v) in theta.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = if c.decoupled { g0 } else { g0 + wd * *p };
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                if c.decoupled {
                    *p = *p - lr_i * (update + wd * *p);
                } else {
                    *p = *p - lr_i * update;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use numcore::{ParamKind, Tensor};

    use super::*;

    fn scalar_store(theta: f64, grad: Option<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::scalar(theta), ParamKind::Trainable).unwrap();
        if let Some(g) = grad {
            let tape = numcore::Tape::new();
            let x = s.bind(&tape, id);
            let loss = tape.scale(&x, g);
            s.accumulate(&tape.backward(&loss).unwrap());
        }
        (s, id)
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = scalar_store(1.0, None);
        let mut adam = Adam::new(&s, AdamConfig::default());
        assert!(adam.step(&mut s, 1e-3).is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = scalar_store(0.75, Some(0.0));
        let mut adam = Adam::new(&s, AdamConfig { weight_decay: 0.0, ..Default::default() });
        adam.step(&mut s, 0.1).unwrap();
        assert_eq!(s.value(id).item(), 0.75);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02] {
            let (mut s, id) = scalar_store(1.0, Some(g));
            let mut adam = Adam::new(&s, AdamConfig { weight_decay: 0.0, ..Default::default() });
            adam.step(&mut s, 0.01).unwrap();
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((s.value(id).item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_scale_freezes_a_parameter() {
        let (mut s, id) = scalar_store(2.0, Some(1.0));
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.set_lr_scale(id, 0.0);
        adam.step(&mut s, 0.1).unwrap();
        assert_eq!(s.value(id).item(), 2.0);
    }
}
