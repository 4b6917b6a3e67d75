//! Learnable parameters and the Adam update.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let z = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            grad: z.clone(),
            m: z.clone(),
            v: z,
            value,
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam descent step on `param.grad`; zeroes the gradient and
/// bumps `step_count`. For ascent, negate the gradient before calling.
pub fn adam_step(param: &mut Param, cfg: &AdamConfig) -> Result<()> {
    if !param.grad.all_finite() {
        return Err(Error::NonFinite(format!(
            "gradient of parameter `{}`",
            param.name
        )));
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let g = param.grad.data();
    let m = param.m.data_mut();
    for (mi, gi) in m.iter_mut().zip(g) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
    }
    let v = param.v.data_mut();
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
    }
    let (m, v) = (param.m.data(), param.v.data());
    for ((w, mi), vi) in param.value.data_mut().iter_mut().zip(m).zip(v) {
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    param.zero_grad();
    Ok(())
}
