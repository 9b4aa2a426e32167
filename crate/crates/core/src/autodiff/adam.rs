use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::scalar::Real;

use super::params::ParamSet;
use super::tensor::Tensor;

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Self::default() }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One bias-corrected update at step `t` (counted from 1).
pub fn adam_step<T: Real>(cfg: &Adam, t: u64, param: &mut [T], grad: &[T], mom: &mut Moments<T>) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powi(t as i32));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for k in 0..param.len() {
        let g = grad[k];
        mom.m[k] = b1 * mom.m[k] + (T::one() - b1) * g;
        mom.v[k] = b2 * mom.v[k] + (T::one() - b2) * g * g;
        let mh = mom.m[k] / c1;
        let vh = mom.v[k] / c2;
        param[k] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Adam state for a single tensor.
#[derive(Clone, Debug)]
pub struct TensorAdam<T> {
    pub cfg: Adam,
    step: u64,
    mom: Moments<T>,
}

impl<T: Real> TensorAdam<T> {
    pub fn new(cfg: Adam, n: usize) -> Self {
        TensorAdam {
            cfg,
            step: 0,
            mom: Moments::zeros(n),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if param.shape() != grad.shape() || param.numel() != self.mom.m.len() {
            return Err(FpmError::shape(format!(
                "adam: parameter {:?} vs gradient {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        self.step += 1;
        adam_step(&self.cfg, self.step, param.data_mut(), grad.data(), &mut self.mom);
        Ok(())
    }
}

/// Adam state for a whole [`ParamSet`].
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub cfg: Adam,
    step: u64,
    moments: std::collections::BTreeMap<String, Moments<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(cfg: Adam, params: &ParamSet<T>) -> Self {
        OptimState {
            cfg,
            step: 0,
            moments: params.iter().map(|(k, t)| (k.clone(), Moments::zeros(t.numel()))).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        self.step += 1;
        for (name, mom) in self.moments.iter_mut() {
            let g = grads.get(name)?;
            let p = params
                .get_mut(name)
                .ok_or_else(|| FpmError::format(format!("missing parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(FpmError::shape(format!("adam: `{name}` {:?} vs {:?}", p.shape(), g.shape())));
            }
            adam_step(&self.cfg, self.step, p.data_mut(), g.data(), mom);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = Adam::with_lr(0.1);
        let mut p = vec![1.0_f64, -2.0, 0.5];
        let g = vec![3.0, -0.01, 0.0];
        let mut m = Moments::zeros(3);
        adam_step(&cfg, 1, &mut p, &g, &mut m);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-4);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = Adam::with_lr(0.05);
        let mut x = vec![3.0_f64];
        let mut m = Moments::zeros(1);
        for t in 1..=2000 {
            let g = vec![2.0 * (x[0] - 1.0)];
            adam_step(&cfg, t, &mut x, &g, &mut m);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
