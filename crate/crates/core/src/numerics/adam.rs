//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Optimizer hyperparameters. Only the learning rate has a published value
/// for this setting; the betas and epsilon are the usual defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Matrix,
    second_moment: Matrix,
    step: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        AdamState {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step: 0,
            config,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.first_moment.shape()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moment(&self) -> &Matrix {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Matrix {
        &self.second_moment
    }

    /// Applies one update to `param` in place.
    pub fn update(&mut self, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: param.shape(),
                right: grad.shape(),
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        for (((p, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Returns the updated parameter and advances `state`.
pub fn adam_step(param: &Matrix, grad: &Matrix, state: &mut AdamState) -> Result<Matrix> {
    let mut out = param.clone();
    state.update(&mut out, grad)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written straight from the recurrence.
    fn scalar_adam(mut p: f64, grads: &[f64], cfg: AdamConfig) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        p
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let p = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let mut s = AdamState::new(2, 2, AdamConfig::default());
        let out = adam_step(&p, &Matrix::zeros(2, 2), &mut s).unwrap();
        assert_eq!(out, p);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = Matrix::from_rows(&[[1.0]]);
        let g = Matrix::from_rows(&[[1.0]]);
        let mut s = AdamState::new(1, 1, AdamConfig::default());
        let out = adam_step(&p, &g, &mut s).unwrap();
        assert!((out.get(0, 0) - (1.0 - 5e-4)).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let cfg = AdamConfig::default();
        let mut p = Matrix::from_rows(&[[0.3]]);
        let g = Matrix::from_rows(&[[0.7]]);
        let mut s = AdamState::new(1, 1, cfg);
        for _ in 0..2 {
            p = adam_step(&p, &g, &mut s).unwrap();
        }
        let expected = scalar_adam(0.3, &[0.7, 0.7], cfg);
        assert!((p.get(0, 0) - expected).abs() < 1e-12);
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AdamState::new(2, 2, AdamConfig::default());
        assert!(adam_step(&Matrix::zeros(2, 2), &Matrix::zeros(2, 1), &mut s).is_err());
        assert!(adam_step(&Matrix::zeros(3, 2), &Matrix::zeros(3, 2), &mut s).is_err());
        assert_eq!(s.step(), 0);
    }
}
