//! Adam with bias correction.

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3.0e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// One optimizer step over every trainable parameter. Requires gradients to
/// be populated; non-trainable entries (running statistics) are skipped.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, cfg: &AdamConfig) -> Result<()> {
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one_m_b1 = S::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = S::from_f64(1.0 - cfg.beta2);
    let eps = S::from_f64(cfg.eps);
    for p in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let grad = p
            .grad
            .as_ref()
            .ok_or_else(|| NnError::MissingGradient(p.name.clone()))?;
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = S::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
        let c2 = S::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
        let lr = S::from_f64(cfg.lr);
        for ((v, g), (m, vv)) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(p.adam_m.iter_mut().zip(p.adam_v.iter_mut()))
        {
            *m = b1 * *m + one_m_b1 * *g;
            *vv = b2 * *vv + one_m_b2 * *g * *g;
            let m_hat = *m * c1;
            let v_hat = *vv * c2;
            *v -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(vec![3], vec![0.5, -0.25, 1.0]).unwrap(), true);
        store.accumulate_grad(id, &[0.0, 0.0, 0.0]);
        adam_step(&mut store, &AdamConfig::default()).unwrap();
        assert_eq!(store.value(id).data(), &[0.5, -0.25, 1.0]);
        assert_eq!(store.get(id).step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_sign_of_gradient() {
        // Closed form at t = 1: m_hat = g, v_hat = g^2, so the update is
        // -lr * g / (|g| + eps) ~= -lr * sign(g).
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(), true);
        store.accumulate_grad(id, &[0.37, -4.2]);
        let cfg = AdamConfig::with_lr(1e-3);
        adam_step(&mut store, &cfg).unwrap();
        let v = store.value(id).data();
        assert!((v[0] + 1e-3).abs() < 1e-9, "{v:?}");
        assert!((v[1] - 1e-3).abs() < 1e-9, "{v:?}");
    }

    #[test]
    fn identical_setups_produce_identical_updates() {
        let build = || {
            let mut store = ParamStore::<f32>::new();
            let id = store.add(
                "w",
                Tensor::new(vec![4], vec![0.5, -0.5, 0.25, 2.0]).unwrap(),
                true,
            );
            store.accumulate_grad(id, &[0.1, 0.2, -0.6, 0.05]);
            (store, id)
        };
        let (mut a, ida) = build();
        let (mut b, idb) = build();
        for _ in 0..3 {
            a.get_mut(ida).grad = Some(vec![0.1, 0.2, -0.6, 0.05]);
            b.get_mut(idb).grad = Some(vec![0.1, 0.2, -0.6, 0.05]);
            adam_step(&mut a, &AdamConfig::default()).unwrap();
            adam_step(&mut b, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a.value(ida).data(), b.value(idb).data());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(vec![2]), true);
        assert!(matches!(
            adam_step(&mut store, &AdamConfig::default()),
            Err(NnError::MissingGradient(_))
        ));
    }
}
