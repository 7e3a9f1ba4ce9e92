use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dgp::{Samples, FEATURE_COUNT};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::matrix::{dot, Matrix};

use super::{check_inputs, check_training_data, CadrEstimator};

/// Coefficients over `[x; s; 1]` for the 16-feature benchmark.
pub const LINEAR_COEFFICIENTS: usize = FEATURE_COUNT + 2;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Penalty {
    #[default]
    None,
    /// `λ₂ ‖β‖²` on every coefficient, intercept included.
    Ridge(f64),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearModel {
    /// Covariate weights, then the dose weight, then the intercept.
    pub coefficients: Vec<f64>,
    pub penalty: Penalty,
}

impl LinearModel {
    pub fn zeros(features: usize) -> Self {
        Self {
            coefficients: vec![0.0; features + 2],
            penalty: Penalty::None,
        }
    }
}

/// In-place Cholesky factorization of a symmetric positive definite
/// matrix; returns `Singular` on a non-positive pivot.
fn cholesky(a: &mut Matrix) -> Result<()> {
    let n = a.rows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-13;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > tol) {
            return Err(Error::Singular);
        }
        let d = math::sqrt(d);
        a[(j, j)] = d;
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = v / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[(i, k)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[(k, i)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    z
}

/// Least squares (or ridge) on `[x; s; 1]` through the normal equations.
pub fn fit_linear(train: &Samples, penalty: Penalty) -> Result<LinearModel> {
    check_training_data(&train.x, &train.dose, &train.outcome)?;
    if let Penalty::Ridge(l) = penalty {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(invalid(format!("ridge penalty must be >= 0, got {l}")));
        }
    }
    let p = train.x.cols() + 2;
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut z = vec![0.0; p];
    for (i, row) in train.x.row_iter().enumerate() {
        z[..p - 2].copy_from_slice(row);
        z[p - 2] = train.dose[i];
        z[p - 1] = 1.0;
        let y = train.outcome[i];
        for a in 0..p {
            rhs[a] += z[a] * y;
            for b in 0..=a {
                gram[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    if let Penalty::Ridge(l) = penalty {
        for a in 0..p {
            gram[(a, a)] += l;
        }
    }
    cholesky(&mut gram)?;
    Ok(LinearModel {
        coefficients: cholesky_solve(&gram, &rhs),
        penalty,
    })
}

impl CadrEstimator for LinearModel {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        check_inputs(x, dose)?;
        let p = self.coefficients.len();
        if x.cols() + 2 != p {
            return Err(invalid(format!("{} covariates for {p} coefficients", x.cols())));
        }
        let (w, rest) = self.coefficients.split_at(p - 2);
        Ok(x.row_iter()
            .zip(dose)
            .map(|(row, &s)| dot(w, row) + rest[0] * s + rest[1])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, d: usize, f: impl Fn(&[f64], f64) -> f64) -> Samples {
        let mut x = Matrix::zeros(n, d);
        let mut dose = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = ((i * (2 * j + 3) + j * j) % 17) as f64 / 16.0;
            }
            let s = ((i * 5) % 11) as f64 / 10.0;
            dose.push(s);
            y.push(f(x.row(i), s));
        }
        Samples::new(x, dose, y).unwrap()
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = LinearModel::zeros(3);
        let x = Matrix::filled(2, 3, 0.7);
        assert_eq!(m.predict_batch(&x, &[0.2, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ols_recovers_exact_coefficients() {
        let truth = [1.5, -2.0, 0.25, 3.0, -0.5];
        let d = data(60, 3, |x, s| truth[0] * x[0] + truth[1] * x[1] + truth[2] * x[2] + truth[3] * s + truth[4]);
        let m = fit_linear(&d, Penalty::None).unwrap();
        for (a, b) in m.coefficients.iter().zip(truth) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn collinear_design_is_singular_without_ridge() {
        let mut d = data(30, 2, |x, _| x[0]);
        for i in 0..30 {
            let v = d.x[(i, 0)];
            d.x[(i, 1)] = 2.0 * v;
        }
        assert_eq!(fit_linear(&d, Penalty::None).unwrap_err(), Error::Singular);
        assert!(fit_linear(&d, Penalty::Ridge(0.1)).is_ok());
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let d = data(80, 3, |x, s| x[0] + 2.0 * s + 1.0);
        let m = fit_linear(&d, Penalty::Ridge(1e6)).unwrap();
        let norm = math::sqrt(m.coefficients.iter().map(|c| c * c).sum());
        assert!(norm <= 1e-3, "{norm}");
    }
}
