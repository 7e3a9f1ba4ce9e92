//! CADR estimators: CBRNet, and the MLP, DRNet and linear baselines.
//!
//! Every estimator answers `μ̂(s, x)` through [`CadrEstimator`].

mod dosenet;
mod drnet;
mod linear;

pub use dosenet::{train_cbrnet, train_mlp, CbrNetModel, DoseNet, MlpModel, StepLoss};
pub use drnet::{stratum, train_drnet, DoseHead, DrNetModel, STRATA};
pub use linear::{fit_linear, LinearModel, Penalty, LINEAR_COEFFICIENTS};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::stats;

/// Architecture and optimizer settings shared by the neural estimators.
///
/// `repr_layers` counts the layers of Φ (the DRNet trunk); zero makes Φ the
/// identity. `inference_layers` counts the hidden layers of the inference
/// network (each DRNet head), which end in one linear output unit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NetworkSpec {
    pub repr_layers: usize,
    pub repr_hidden: usize,
    pub repr_dim: usize,
    pub inference_layers: usize,
    pub inference_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub training_steps: usize,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            repr_layers: 2,
            repr_hidden: 32,
            repr_dim: 32,
            inference_layers: 2,
            inference_hidden: 32,
            learning_rate: 1e-3,
            batch_size: 128,
            training_steps: 5000,
            l2_penalty: 0.0,
            seed: 0,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("repr_hidden", self.repr_hidden),
            ("repr_dim", self.repr_dim),
            ("inference_layers", self.inference_layers),
            ("inference_hidden", self.inference_hidden),
            ("batch_size", self.batch_size),
            ("training_steps", self.training_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(invalid(format!("l2_penalty must be >= 0, got {}", self.l2_penalty)));
        }
        Ok(())
    }

    /// Layer widths of Φ for `input` covariates.
    pub fn repr_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.repr_layers + 1);
        sizes.push(input);
        if self.repr_layers > 0 {
            sizes.extend(core::iter::repeat(self.repr_hidden).take(self.repr_layers - 1));
            sizes.push(self.repr_dim);
        }
        sizes
    }
}

/// A trained estimator of `μ(s, x)`.
pub trait CadrEstimator {
    /// Predictions for rows of `x` at the paired doses. Doses must lie in
    /// `[0, 1]`.
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, x: &[f64], s: f64) -> Result<f64> {
        let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.predict_batch(&row, &[s])?[0])
    }
}

/// Rejects doses outside `[0, 1]` and row-count mismatches.
pub fn check_inputs(x: &Matrix, dose: &[f64]) -> Result<()> {
    if x.rows() != dose.len() {
        return Err(invalid(format!("{} rows but {} doses", x.rows(), dose.len())));
    }
    if let Some(s) = dose.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(invalid(format!("dose {s} outside [0, 1]")));
    }
    Ok(())
}

/// Affine standardization of the training targets. Networks fit the
/// standardized outcome; predictions are mapped back.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn fit(y: &[f64]) -> Self {
        let mean = stats::mean(y);
        let std = if y.len() > 1 { stats::sample_std(y) } else { 0.0 };
        Self {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
        }
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// Epoch-wise shuffled mini-batches of row indices.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: Rng,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n).max(1),
            rng,
        }
    }

    /// Steps in one pass over the data; the last batch may be short.
    pub fn steps_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

pub(crate) fn check_training_data(x: &Matrix, dose: &[f64], y: &[f64]) -> Result<()> {
    check_inputs(x, dose)?;
    if y.len() != dose.len() {
        return Err(invalid(format!("{} outcomes for {} rows", y.len(), dose.len())));
    }
    if y.is_empty() {
        return Err(invalid("training data is empty"));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("training data contains non-finite values"));
    }
    Ok(())
}

pub(crate) fn divergence(step: usize, last: Option<&StepLoss>, what: &str) -> Error {
    let detail = match last {
        Some(l) => format!(
            "{what}; last finite losses: mse {:e}, ipm {:e}, total {:e}",
            l.mse, l.ipm, l.total
        ),
        None => String::from(what),
    };
    Error::Divergence { step, detail }
}

/// Adds `l2 · W` to the gradients of weight matrices (even positions in
/// `weight, bias, weight, bias, ...` order).
pub(crate) fn add_weight_decay<'a>(
    grads: &mut [Matrix],
    params: impl Iterator<Item = &'a Matrix>,
    l2: f64,
) {
    if l2 == 0.0 {
        return;
    }
    for (i, (g, p)) in grads.iter_mut().zip(params).enumerate() {
        if i % 2 == 0 {
            g.add_scaled(p, l2);
        }
    }
}

/// Column of doses as an `n × 1` matrix.
pub(crate) fn dose_column(dose: &[f64]) -> Matrix {
    Matrix::column(dose)
}
