//! Adam optimizer over a parameter store.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::Tensor;

use super::{GradMap, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state: per-parameter first/second moments plus a shared step
/// counter. The effective step size of a parameter is
/// `lr * lr_mult * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState { cfg, step: 0, moments: BTreeMap::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over every parameter in the store.
    /// Every parameter must have a gradient entry.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap) -> Result<()> {
        for name in store.names() {
            if !grads.contains_key(&name) {
                return Err(Error::contract(format!("missing gradient for `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        let names = store.names();
        for name in names {
            let param = store.get(&name)?;
            let lr = self.cfg.lr * param.lr_mult;
            let shape = param.value.shape().to_vec();
            let grad = &grads[&name];
            if grad.shape() != shape.as_slice() {
                return Err(Error::dimension(format!(
                    "gradient shape {:?} for parameter `{name}` of shape {:?}",
                    grad.shape(),
                    shape
                )));
            }
            let slots = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; param.value.numel()],
                v: vec![0.0; param.value.numel()],
            });
            let mut next = param.value.values().to_vec();
            for i in 0..next.len() {
                let g = grad.values()[i] + self.cfg.weight_decay * next[i];
                slots.m[i] = self.cfg.beta1 * slots.m[i] + (1.0 - self.cfg.beta1) * g;
                slots.v[i] = self.cfg.beta2 * slots.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = slots.m[i] / bc1;
                let v_hat = slots.v[i] / bc2;
                next[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            store.set_value(&name, Tensor::from_parts(shape, next))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(name: &str, v: f64, mult: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store
            .insert_with_mult(name, Tensor::from_vec(vec![1], vec![v]).unwrap(), mult)
            .unwrap();
        store
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = scalar_store("p", 1.5, 1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.1));
        let mut grads = GradMap::new();
        grads.insert("p".to_string(), Tensor::zeros(vec![1]));
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.value("p").unwrap().values(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // constant gradient 1.0: bias correction makes the first step
        // lr * 1 / (1 + eps)
        let mut store = scalar_store("p", 0.0, 1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.1));
        let mut grads = GradMap::new();
        grads.insert("p".to_string(), Tensor::filled(vec![1], 1.0));
        adam.step(&mut store, &grads).unwrap();
        let p = store.value("p").unwrap().values()[0];
        assert!((p - (-0.1)).abs() < 1e-8, "first step {p}");
    }

    #[test]
    fn lr_multiplier_scales_displacement_linearly() {
        let mut store = ParamStore::new();
        store
            .insert("base", Tensor::from_vec(vec![1], vec![0.0]).unwrap())
            .unwrap();
        store
            .insert_with_mult("boosted", Tensor::from_vec(vec![1], vec![0.0]).unwrap(), 10.0)
            .unwrap();
        let mut adam = AdamState::new(AdamConfig::new(0.01));
        let mut grads = GradMap::new();
        grads.insert("base".to_string(), Tensor::filled(vec![1], 0.37));
        grads.insert("boosted".to_string(), Tensor::filled(vec![1], 0.37));
        adam.step(&mut store, &grads).unwrap();
        let base = store.value("base").unwrap().values()[0];
        let boosted = store.value("boosted").unwrap().values()[0];
        assert!((boosted / base - 10.0).abs() < 1e-9, "{boosted} vs {base}");
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = scalar_store("p", 1.0, 1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.1));
        let grads = GradMap::new();
        assert!(matches!(
            adam.step(&mut store, &grads),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut store = scalar_store("p", 2.0, 1.0);
        let mut adam = AdamState::new(AdamConfig::new(0.05).with_weight_decay(0.1));
        let mut grads = GradMap::new();
        grads.insert("p".to_string(), Tensor::zeros(vec![1]));
        for _ in 0..10 {
            adam.step(&mut store, &grads).unwrap();
        }
        let p = store.value("p").unwrap().values()[0];
        assert!(p < 2.0 && p > 0.0, "decayed value {p}");
    }
}
