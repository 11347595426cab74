use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the update; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub config: AdamConfig,
    pub step: u64,
    pub t: Vec<u64>,
}

/// Adam moments for one [`ParamSet`], plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Per-parameter update counts; parameters without a gradient on a given
    /// step keep their moments and count untouched.
    t: Vec<u64>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let n = m.len();
        Self { config, step: 0, v: m.clone(), m, t: vec![0; n] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Scalars needed to rebuild this optimizer alongside [`Adam::moment_arrays`].
    pub fn meta(&self) -> AdamMeta {
        AdamMeta { config: self.config, step: self.step, t: self.t.clone() }
    }

    /// First moments then second moments, one array per parameter.
    pub fn moment_arrays(&self) -> Vec<&[f64]> {
        self.m.iter().chain(&self.v).map(Vec::as_slice).collect()
    }

    pub fn from_parts(meta: AdamMeta, mut arrays: Vec<Vec<f64>>) -> Result<Self> {
        let n = meta.t.len();
        if arrays.len() != 2 * n {
            return Err(Error::Dimension(format!("expected {} moment arrays, got {}", 2 * n, arrays.len())));
        }
        let v = arrays.split_off(n);
        Ok(Self { config: meta.config, step: meta.step, m: arrays, v, t: meta.t })
    }

    /// One bias-corrected Adam update from the gradients currently stored on
    /// `params`. Parameters with no gradient are skipped. Gradients are left
    /// in place; callers zero them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer built for {} tensors, given {}",
                self.m.len(),
                params.len()
            )));
        }
        if params.tensors().iter().all(|t| t.grad().is_none()) {
            return Err(Error::Contract("adam step with no gradients populated".into()));
        }
        let clip = match self.config.max_grad_norm {
            Some(max) => {
                let norm = params.grad_norm();
                if !norm.is_finite() {
                    return Err(Error::Training(format!("non-finite gradient norm {norm}")));
                }
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        self.step += 1;
        for (idx, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = tensor.grad().map(<[f64]>::to_vec) else { continue };
            self.t[idx] += 1;
            let t = self.t[idx] as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (j, p) in tensor.values_mut().iter_mut().enumerate() {
                let gj = g[j] * clip;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn moves_against_gradient_sign() {
        for g in [2.5, -0.3] {
            let mut p = single(1.0);
            let mut opt = Adam::new(&p, AdamConfig { max_grad_norm: None, ..AdamConfig::with_lr(0.1) });
            p.tensors_mut()[0].accumulate_grad(&[g]).unwrap();
            opt.step(&mut p).unwrap();
            let moved = p.tensors()[0].values()[0] - 1.0;
            assert!(moved * g < 0.0);
            // first bias-corrected step has magnitude lr
            assert!((moved.abs() - 0.1).abs() < 1e-6);
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = single(0.7);
        let mut opt = Adam::new(&p, AdamConfig::with_lr(0.1));
        p.tensors_mut()[0].accumulate_grad(&[0.0]).unwrap();
        opt.step(&mut p).unwrap();
        assert_eq!(p.tensors()[0].values()[0], 0.7);
    }

    #[test]
    fn missing_gradients_are_a_contract_error() {
        let mut p = single(0.7);
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(matches!(opt.step(&mut p), Err(Error::Contract(_))));
    }

    #[test]
    fn two_steps_reduce_a_quadratic() {
        // loss = (w - 3)^2, w0 = 0
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        let mut p = single(0.0);
        let mut opt = Adam::new(&p, AdamConfig::with_lr(0.05));
        let start = loss(0.0);
        for _ in 0..2 {
            let w = p.tensors()[0].values()[0];
            p.zero_grad();
            p.tensors_mut()[0].accumulate_grad(&[2.0 * (w - 3.0)]).unwrap();
            opt.step(&mut p).unwrap();
        }
        assert!(loss(p.tensors()[0].values()[0]) < start);
    }
}
