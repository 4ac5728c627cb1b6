use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// Moment estimates per parameter, kept in `f64`.
#[derive(Clone, Debug, Default)]
pub struct OptimState {
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let t = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

impl AdamW {
    /// One update. `grads` pairs parameter names with their gradients and
    /// `lr_of` gives the learning rate of each name. Parameters without a
    /// gradient are left untouched. Decay is decoupled:
    /// `theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
    pub fn step<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        grads: &[(String, Tensor<T>)],
        state: &mut OptimState,
        lr_of: impl Fn(&str) -> f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if let Some(i) = g.data().iter().position(|v| !v.as_f64().is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{name}` at index {i} in optimizer step {}",
                    state.step + 1
                )));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (name, g) in grads {
            let lr = lr_of(name);
            let p = store.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adamw", format!("`{name}`: param {:?}, grad {:?}", p.shape(), g.shape())));
            }
            let n = p.numel();
            let (m, v) = state.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let decay = 1.0 - lr * self.weight_decay;
            let data: Vec<T> = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(i, (&th, &gr))| {
                    let gr = gr.as_f64();
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gr;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gr * gr;
                    let upd = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    T::of(th.as_f64() * decay - lr * upd)
                })
                .collect();
            let shape = p.shape().to_vec();
            store.set(name, Tensor::new(&shape, data)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Builder;

    fn store(vals: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        Builder::new(&mut s, 0).zeros("w".into(), &[vals.len()]).unwrap();
        s.set("w", Tensor::new(&[vals.len()], vals).unwrap()).unwrap();
        s
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 9e-3, 1e-5), 9e-3);
        assert!((cosine_lr(100, 100, 9e-3, 1e-5) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 9e-3, 1e-5) - (9e-3 + 1e-5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_applies_pure_decay() {
        let opt = AdamW::default();
        let mut s = store(vec![1.5, -2.0, 0.25]);
        let mut st = OptimState::new();
        let lr = 0.1;
        opt.step(&mut s, &[("w".into(), Tensor::zeros(&[3]))], &mut st, |_| lr).unwrap();
        let want = [1.5, -2.0, 0.25].map(|v: f64| v * (1.0 - lr * 1e-2));
        assert_eq!(s.get("w").unwrap().data(), &want);
    }

    #[test]
    fn first_step_closed_form() {
        let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let g = [0.3, -2.0, 1e-3];
        let mut s = store(vec![0.0; 3]);
        let mut st = OptimState::new();
        opt.step(&mut s, &[("w".into(), Tensor::new(&[3], g.to_vec()).unwrap())], &mut st, |_| 0.01).unwrap();
        for (i, &gi) in g.iter().enumerate() {
            // m_hat = g, v_hat = g^2 after bias correction.
            let want = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((s.get("w").unwrap().data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_before_any_update() {
        let opt = AdamW::default();
        let mut s = store(vec![1.0, 2.0]);
        let mut st = OptimState::new();
        let err = opt.step(&mut s, &[("w".into(), Tensor::new(&[2], vec![0.1, f64::NAN]).unwrap())], &mut st, |_| 0.1);
        assert!(err.unwrap_err().to_string().contains("step 1"));
        assert_eq!(s.get("w").unwrap().data(), &[1.0, 2.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let opt = AdamW::default();
            let mut s = store(vec![0.5, -0.5, 1.0]);
            let mut st = OptimState::new();
            for k in 0..10 {
                let g = Tensor::from_fn(&[3], |i| ((k * 3 + i) as f64 * 0.7).sin());
                opt.step(&mut s, &[("w".into(), g)], &mut st, |_| cosine_lr(k, 10, 1e-2, 0.0)).unwrap();
            }
            s
        };
        assert!(run().bit_eq(&run()));
    }
}
