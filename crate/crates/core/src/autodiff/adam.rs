//! Adam optimizer with bias correction.

use super::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters. The defaults are the training settings used for
/// the adversarial models: a small learning rate with a heavily damped
/// first moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("adam lr {} must be positive", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!(
                    "adam {name} {beta} must be in [0, 1)"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "adam epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Optimizer state: first/second moment estimates per parameter tensor.
///
/// One `step` consumes the gradients currently accumulated on the given
/// tensors (clearing them) and updates their values in place:
///
/// ```text
/// m ← β₁·m + (1-β₁)·g        v ← β₂·v + (1-β₂)·g²
/// ŵ ← w - lr · (m / (1-β₁ᵗ)) / (√(v / (1-β₂ᵗ)) + ε)
/// ```
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Creates state for a fixed list of parameter sizes (element counts,
    /// in the order `step` will receive the tensors).
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamState {
            cfg,
            t: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Replaces the learning rate (used by decay schedules); moments and
    /// the step counter are untouched.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        let cfg = AdamConfig { lr, ..self.cfg };
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    /// Applies one update. Every tensor must carry a gradient of its own
    /// size; gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match p.grad() {
                None => {
                    return Err(Error::invalid(format!(
                        "parameter {i} has no gradient; run backward first"
                    )));
                }
                Some(g) if g.len() != self.m[i].len() => {
                    return Err(Error::shape(format!(
                        "parameter {i}: gradient has {} elements, state expects {}",
                        g.len(),
                        self.m[i].len()
                    )));
                }
                Some(_) => {}
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad().expect("checked above").to_vec();
            for (j, gj) in g.iter().enumerate() {
                let m = &mut self.m[i][j];
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * gj;
                let v = &mut self.v[i][j];
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * gj * gj;
                let m_hat = *m / b1t;
                let v_hat = *v / b2t;
                p.values_mut()[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        // With defaults (lr 2e-4, β₁ 0.5, β₂ 0.999, ε 1e-8) and gradient 1,
        // both bias-corrected moments are exactly 1, so the update is
        // lr / (1 + ε).
        let mut w = Tensor::new(vec![1], vec![1.0]).unwrap().with_requires_grad();
        w.accumulate_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        adam.step(&mut [&mut w]).unwrap();
        assert_eq!(w.values()[0], 1.0 - 0.00019999999800000004);
        assert!(w.grad().is_none(), "step must clear gradients");
    }

    #[test]
    fn converges_on_a_quadratic() {
        // Minimise (w-3)^2 by gradient 2(w-3).
        let mut w = Tensor::scalar(0.0).with_requires_grad();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.1,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            &[1],
        )
        .unwrap();
        for _ in 0..2000 {
            let g = 2.0 * (w.values()[0] - 3.0);
            w.accumulate_grad(&[g]).unwrap();
            adam.step(&mut [&mut w]).unwrap();
        }
        assert!((w.values()[0] - 3.0).abs() < 1e-3, "{}", w.values()[0]);
    }

    #[test]
    fn rejects_bad_configs_and_missing_gradients() {
        assert!(AdamState::new(
            AdamConfig {
                lr: -1.0,
                ..AdamConfig::default()
            },
            &[1]
        )
        .is_err());
        assert!(AdamState::new(
            AdamConfig {
                beta1: 1.0,
                ..AdamConfig::default()
            },
            &[1]
        )
        .is_err());

        let mut w = Tensor::scalar(0.0).with_requires_grad();
        let mut adam = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        assert!(adam.step(&mut [&mut w]).is_err(), "no gradient present");
    }

    #[test]
    fn lr_decay_keeps_moments() {
        let mut w = Tensor::scalar(1.0).with_requires_grad();
        let mut adam = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        w.accumulate_grad(&[1.0]).unwrap();
        adam.step(&mut [&mut w]).unwrap();
        adam.set_lr(0.0001).unwrap();
        assert_eq!(adam.config().lr, 0.0001);
        assert!(adam.set_lr(0.0).is_err());
    }
}
