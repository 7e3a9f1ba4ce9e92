//! Counterfactual evaluation against the generator's oracle.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dgp::{Oracle, Samples};
use crate::error::{invalid, Result};
use crate::matrix::Matrix;
use crate::models::{check_inputs, CadrEstimator};

/// Default number of equally spaced doses for MISE.
pub const DEFAULT_GRID_SIZE: usize = 65;

impl CadrEstimator for Oracle {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        check_inputs(x, dose)?;
        x.row_iter()
            .zip(dose)
            .map(|(row, &s)| self.response(s, row))
            .collect()
    }
}

/// `size` equally spaced doses from 0 to 1 inclusive.
pub fn dose_grid(size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(invalid(format!("grid size must be at least 2, got {size}")));
    }
    let last = (size - 1) as f64;
    Ok((0..size).map(|i| i as f64 / last).collect())
}

/// Trapezoidal rule for samples on an equally spaced grid over `[0, 1]`.
pub fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let h = 1.0 / (n - 1) as f64;
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Per-unit integrated squared error `∫ (μ − μ̂)² ds` on the dose grid.
pub fn integrated_errors(
    truth: &dyn CadrEstimator,
    model: &dyn CadrEstimator,
    x: &Matrix,
    grid_size: usize,
) -> Result<Vec<f64>> {
    let grid = dose_grid(grid_size)?;
    let n = x.rows();
    if n == 0 {
        return Err(invalid("no units to evaluate"));
    }
    // sq[g * n + i]: squared error of unit i at grid point g
    let mut sq = vec![0.0; grid_size * n];
    let mut doses = vec![0.0; n];
    for (g, &s) in grid.iter().enumerate() {
        doses.iter_mut().for_each(|d| *d = s);
        let mu = truth.predict_batch(x, &doses)?;
        let est = model.predict_batch(x, &doses)?;
        for i in 0..n {
            let e = mu[i] - est[i];
            sq[g * n + i] = e * e;
        }
    }
    let mut column = vec![0.0; grid_size];
    Ok((0..n)
        .map(|i| {
            for g in 0..grid_size {
                column[g] = sq[g * n + i];
            }
            trapezoid(&column)
        })
        .collect())
}

/// Mean over units of the integrated squared error.
pub fn mise(
    truth: &dyn CadrEstimator,
    model: &dyn CadrEstimator,
    x: &Matrix,
    grid_size: usize,
) -> Result<f64> {
    let errs = integrated_errors(truth, model, x, grid_size)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mean squared error at the observed doses.
pub fn factual_mse(model: &dyn CadrEstimator, rows: &Samples) -> Result<f64> {
    if rows.is_empty() {
        return Err(invalid("factual MSE of an empty sample"));
    }
    let pred = model.predict_batch(&rows.x, &rows.dose)?;
    let sse: f64 = pred
        .iter()
        .zip(&rows.outcome)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sse / rows.len() as f64)
}

/// `(s, μ̂(s, x))` on the dose grid for one unit.
pub fn dose_curve(model: &dyn CadrEstimator, x: &[f64], grid_size: usize) -> Result<Vec<(f64, f64)>> {
    let grid = dose_grid(grid_size)?;
    let mut rows = Matrix::zeros(grid_size, x.len());
    for g in 0..grid_size {
        rows.row_mut(g).copy_from_slice(x);
    }
    let est = model.predict_batch(&rows, &grid)?;
    Ok(grid.into_iter().zip(est).collect())
}

/// Test-set evaluation of one trained model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub model_id: String,
    pub mise: f64,
    pub factual_mse: f64,
    pub grid_size: usize,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub per_unit: Option<Vec<f64>>,
}

/// MISE on `test` against `oracle` plus factual MSE on the same rows.
pub fn evaluate(
    model_id: &str,
    model: &dyn CadrEstimator,
    oracle: &Oracle,
    test: &Samples,
    grid_size: usize,
    keep_per_unit: bool,
) -> Result<EvalReport> {
    let errs = integrated_errors(oracle, model, &test.x, grid_size)?;
    let mise = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok(EvalReport {
        model_id: String::from(model_id),
        mise,
        factual_mse: factual_mse(model, test)?,
        grid_size,
        per_unit: keep_per_unit.then_some(errs),
    })
}
