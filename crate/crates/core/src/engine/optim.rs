//! Adam and the step-decay learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Hyper-parameters of Adam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor<T>>,
    pub second_moment: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// Every parameter must carry a gradient; moments start at zero.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        if params.grad(name).is_none() {
            return Err(Error::MissingGradient(name.clone()));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
    let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
    let lr = T::from_f64_lossy(c.lr);
    let eps = T::from_f64_lossy(c.eps);
    let one = T::one();
    for name in &names {
        let grad = params.grad(name).expect("checked above").clone();
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let p = params.get_mut(name)?;
        let it = p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
            .zip(grad.data());
        for (((p, m), v), &g) in it {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Base rate reduced by 20% every 150 epochs.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    base_lr * 0.8f64.powi((epoch / 150) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w.weight", Tensor::scalar(value)).unwrap();
        s.set_grad("w.weight", Tensor::scalar(grad)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = scalar_store(0.7, 0.0);
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.get("w.weight").unwrap().item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001, m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
        let mut s = scalar_store(0.0, 1.0);
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        let d1 = s.get("w.weight").unwrap().item();
        assert!((d1 + 0.001).abs() < 1e-10, "{d1}");
        assert_eq!(st.step, 1);
        adam_step(&mut s, &mut st).unwrap();
        let d2 = s.get("w.weight").unwrap().item() - d1;
        assert!(d2.abs() <= d1.abs() * 1.05);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = ParamStore::<f32>::new();
        s.insert("lonely.bias", Tensor::scalar(1.0)).unwrap();
        let err = adam_step(&mut s, &mut AdamState::new(AdamConfig::default())).unwrap_err();
        assert!(err.to_string().contains("lonely.bias"));
    }

    #[test]
    fn schedule_steps_every_150_epochs() {
        assert_eq!(lr_schedule(0, 0.001), 0.001);
        assert!((lr_schedule(150, 0.001) - 0.0008).abs() < 1e-15);
        assert!((lr_schedule(299, 0.001) - 0.0008).abs() < 1e-15);
        assert!((lr_schedule(300, 0.001) - 0.00064).abs() < 1e-15);
    }
}
