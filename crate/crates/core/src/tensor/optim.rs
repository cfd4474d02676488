//! Adaptive-moment parameter updates and global-norm gradient clipping.

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state: per-parameter first/second moment
/// accumulators plus a strictly increasing step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    /// Decay rates 0.9/0.999 and epsilon 1e-8.
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected update to every parameter in the store.
    ///
    /// Every parameter must have an accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first.is_empty() {
            for p in store.params() {
                self.first.push(Tensor::zeros(p.value.shape()));
                self.second.push(Tensor::zeros(p.value.shape()));
            }
        }
        if self.first.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, p) in store.params_mut().iter_mut().enumerate() {
            let grad = p.grad.as_ref().ok_or_else(|| {
                Error::Contract(format!("parameter {} has no gradient", p.name))
            })?;
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            let w = p.value.data_mut();
            for ((wi, (mi, vi)), &gi) in w
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(grad.data().iter())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *wi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`;
/// returns the pre-clip norm.
pub fn clip_gradient_norm(store: &mut ParamStore, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for p in store.params() {
        let grad = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("parameter {} has no gradient", p.name)))?;
        for &g in grad.data() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in store.params_mut() {
            if let Some(grad) = p.grad.as_mut() {
                for g in grad.data_mut() {
                    *g *= scale;
                }
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(value).unwrap());
        store
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = scalar_store(1.25);
        store.set_grad(0, Tensor::scalar(0.0).unwrap());
        let mut opt = Adam::new(1e-3);
        opt.step(&mut store).unwrap();
        assert_eq!(store.params()[0].value.scalar_value(), 1.25);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        for g in [2.5, -0.7] {
            let mut store = scalar_store(0.0);
            let mut opt = Adam::new(1e-3);
            for _ in 0..50 {
                store.set_grad(0, Tensor::scalar(g).unwrap());
                opt.step(&mut store).unwrap();
            }
            let w = store.params()[0].value.scalar_value();
            assert!(w * g < 0.0, "w = {w} should oppose gradient {g}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = (w - 5)^2, gradient 2(w - 5), 500 steps at lr 0.1.
        let mut store = scalar_store(0.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let w = store.params()[0].value.scalar_value();
            store.set_grad(0, Tensor::scalar(2.0 * (w - 5.0)).unwrap());
            opt.step(&mut store).unwrap();
        }
        let w = store.params()[0].value.scalar_value();
        assert!((w - 5.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = scalar_store(0.0);
        let mut opt = Adam::new(1e-3);
        assert!(matches!(opt.step(&mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn clip_below_threshold_returns_norm_unchanged() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        store.set_grad(0, Tensor::new(vec![2], vec![1.2, 1.6]).unwrap());
        let norm = clip_gradient_norm(&mut store, 5.0).unwrap();
        assert!((norm - 2.0).abs() < 1e-12);
        assert_eq!(store.params()[0].grad.as_ref().unwrap().data(), &[1.2, 1.6]);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        store.set_grad(0, Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let norm = clip_gradient_norm(&mut store, 2.5).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        let g = store.params()[0].grad.as_ref().unwrap();
        assert!((g.data()[0] - 1.5).abs() < 1e-12);
        assert!((g.data()[1] - 2.0).abs() < 1e-12);
        let post: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((post - 2.5).abs() < 1e-9);
    }
}
