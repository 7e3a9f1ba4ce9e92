//! The Adam optimizer with bias correction.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon > 0.0)
        {
            return Err(invalid(format!("invalid Adam configuration {self:?}")));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    /// Moment buffers are allocated for parameters with the given shapes.
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        config.validate()?;
        let first: Vec<Matrix> = shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        let second = first.clone();
        Ok(Self {
            config,
            step: 0,
            first,
            second,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Nothing is modified when a gradient is non-finite.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Matrix>,
        grads: &[Matrix],
    ) -> Result<()> {
        if grads.len() != self.first.len() {
            return Err(invalid(format!(
                "expected {} gradients, got {}",
                self.first.len(),
                grads.len()
            )));
        }
        for (m, g) in self.first.iter().zip(grads) {
            if m.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: m.shape(),
                    right: g.shape(),
                });
            }
        }
        let next = self.step + 1;
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: next as usize,
                detail: format!("non-finite gradient in parameter {k}"),
            });
        }
        self.step = next;

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - math::powi(beta1, next as i32);
        let bc2 = 1.0 - math::powi(beta2, next as i32);

        let mut count = 0;
        for (k, param) in params.into_iter().enumerate() {
            count += 1;
            let g = &grads[k];
            if param.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: param.shape(),
                    right: g.shape(),
                });
            }
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (((p, &gi), mi), vi) in param.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= learning_rate * m_hat / (math::sqrt(v_hat) + epsilon);
            }
        }
        if count != grads.len() {
            return Err(invalid(format!("expected {} parameters, got {count}", grads.len())));
        }
        Ok(())
    }
}
