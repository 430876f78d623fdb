//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Optimizer state. Moment buffers are allocated on the first step and must
/// keep the same shapes afterwards.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one descent step; `params[i]` is updated with `grads[i]`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        check_dim("optimizer parameter groups", params.len(), grads.len())?;
        for (p, g) in params.iter().zip(grads) {
            check_dim("optimizer group", p.len(), g.len())?;
        }
        if self.kind == OptimizerKind::Adam {
            if self.first_moment.is_empty() {
                self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                self.second_moment = self.first_moment.clone();
            }
            check_dim("adam moment groups", self.first_moment.len(), grads.len())?;
            for (m, g) in self.first_moment.iter().zip(grads) {
                check_dim("adam moment", m.len(), g.len())?;
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((pi, gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let mut p = vec![1.0];
        opt.step(vec![&mut p], &[&[1.0]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        opt.step(vec![&mut p], &[&[0.0]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is
        // lr * g / (|g| + 1e-8).
        let mut opt = Optimizer::adam(1e-3).unwrap();
        let mut p = vec![0.5, -0.5];
        opt.step(vec![&mut p], &[&[1.0, -3.0]]).unwrap();
        assert!((p[0] - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-0.5 + 1e-3 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn adam_rejects_shape_change() {
        let mut opt = Optimizer::adam(1e-3).unwrap();
        let mut p = vec![0.0; 2];
        opt.step(vec![&mut p], &[&[1.0, 1.0]]).unwrap();
        let mut q = vec![0.0; 3];
        assert!(opt.step(vec![&mut q], &[&[1.0, 1.0, 1.0]]).is_err());
        assert!(Optimizer::sgd(-1.0).is_err());
    }
}
