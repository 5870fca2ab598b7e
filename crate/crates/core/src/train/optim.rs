//! Adam with decoupled weight decay, and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `η_min + ½(η₀ − η_min)(1 + cos(πt/T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, eta_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Validation("cosine schedule needs at least one step".into()));
    }
    if t > total {
        return Err(Error::Validation(format!("step {t} is past the last step {total}")));
    }
    Ok(eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (PI * t as f64 / total as f64).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update. Weight decay is decoupled: the parameter
/// is shrunk by `lr·wd·θ` before the Adam delta is applied.
pub fn adam_step<T: Scalar>(
    name: &str,
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::Shape(format!(
            "gradient of `{name}` has {} elements, parameter has {}",
            grad.len(),
            param.len()
        )));
    }
    if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient in `{name}` at element {i}")));
    }
    if state.m.len() != param.len() {
        *state = AdamState::new(param.len());
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = lr * cfg.weight_decay;
    for (i, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let g = g.as_f64();
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let mut theta = p.as_f64();
        theta -= decay * theta;
        theta -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        *p = T::of(theta);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 0.0).unwrap(), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3, 1e-5).unwrap() - 1e-5 < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-4).unwrap() - 5.5e-4).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 1e-3, 0.0).is_err());
    }

    #[test]
    fn first_step_is_about_lr() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = Tensor::<f64>::full([2, 1, 1, 1], 1.0);
        let g = Tensor::full([2, 1, 1, 1], 0.5);
        let mut s = AdamState::new(2);
        adam_step("w", &mut p, &g, &mut s, 1e-3, &cfg).unwrap();
        assert!(((1.0 - p.data()[0]) - 1e-3).abs() < 1e-10);
        assert_eq!(p.data()[0], p.data()[1]);
        let zero = Tensor::zeros([2, 1, 1, 1]);
        let before = p.clone();
        let mut s = AdamState::new(2);
        adam_step("w", &mut p, &zero, &mut s, 1e-3, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::<f32>::zeros([1, 1, 1, 2]);
        let g = Tensor::new([1, 1, 1, 2], vec![0.0, f32::NAN]).unwrap();
        let err = adam_step("head0.out.bias", &mut p, &g, &mut AdamState::default(), 1e-3, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("head0.out.bias"));
    }
}
