//! k-means over joint (covariate, dose) points.
//!
//! Cluster ids are zero-based (`0..k`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};

use crate::error::{invalid, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::rng::{derive_seed, Rng};

/// Weight of the dose coordinate in the joint space: `√16`, so one dose
/// column carries as much spread as the 16 normalized covariates.
pub const DEFAULT_DOSE_WEIGHT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub dose_weight: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iters: 300,
            restarts: 5,
            dose_weight: DEFAULT_DOSE_WEIGHT,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Matrix,
    pub dose_weight: f64,
    pub inertia: f64,
}

/// Trace of one Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step, starting with the initial one.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

/// Rows `[x ; dose_weight · s]`.
pub fn joint_points(x: &Matrix, dose: &[f64], dose_weight: f64) -> Result<Matrix> {
    if x.rows() != dose.len() {
        return Err(invalid(format!("{} covariate rows but {} doses", x.rows(), dose.len())));
    }
    let weighted: Vec<f64> = dose.iter().map(|s| s * dose_weight).collect();
    x.concat_cols(&Matrix::column(&weighted))
}

fn nearest(centroids: &Matrix, p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.row_iter().enumerate() {
        let d = sq_dist(row, p);
        // strict comparison keeps the lowest index on ties
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(points: &Matrix, centroids: &Matrix, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.row_iter().enumerate() {
        let (c, d) = nearest(centroids, p);
        out[i] = c;
        inertia += d;
    }
    inertia
}

/// k-means++ seeding.
pub fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points.row_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.row_iter().enumerate() {
            let d = sq_dist(p, points.row(pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids until the assignment is a
/// fixpoint or `max_iters` updates have run. An empty cluster is moved to
/// the point farthest from its current centroid.
pub fn lloyd(points: &Matrix, init: Matrix, max_iters: usize) -> LloydRun {
    let (n, d) = points.shape();
    let k = init.rows();
    let mut centroids = init;
    let mut assignments = vec![0; n];
    let mut inertia_trace = vec![assign_all(points, &centroids, &mut assignments)];
    let mut converged = false;
    let mut next = vec![0; n];

    for _ in 0..max_iters {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in points.row_iter().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = (0, f64::NEG_INFINITY);
                for (i, p) in points.row_iter().enumerate() {
                    let dist = sq_dist(p, centroids.row(assignments[i]));
                    if dist > far.1 {
                        far = (i, dist);
                    }
                }
                log::warn!("k-means: cluster {c} emptied; reinitialized at point {}", far.0);
                centroids.row_mut(c).copy_from_slice(points.row(far.0));
                assignments[far.0] = c;
            }
        }
        let inertia = assign_all(points, &centroids, &mut next);
        inertia_trace.push(inertia);
        let unchanged = next == assignments;
        core::mem::swap(&mut assignments, &mut next);
        if unchanged {
            converged = true;
            break;
        }
    }
    LloydRun {
        centroids,
        assignments,
        inertia_trace,
        converged,
    }
}

impl KMeansModel {
    /// Best of `config.restarts` k-means++ / Lloyd runs by inertia
    /// (earliest restart on ties).
    pub fn fit(points: &Matrix, config: &KMeansConfig, seed: u64) -> Result<Self> {
        let n = points.rows();
        if config.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if config.k > n {
            return Err(invalid(format!("k = {} exceeds the {n} available points", config.k)));
        }
        if !points.is_finite() {
            return Err(invalid("k-means input contains non-finite values"));
        }
        let mut best: Option<LloydRun> = None;
        for restart in 0..config.restarts.max(1) {
            let mut rng = Rng::seed_from_u64(derive_seed(&[seed, restart as u64]));
            let init = kmeans_plus_plus(points, config.k, &mut rng);
            let run = lloyd(points, init, config.max_iters);
            let better = match &best {
                None => true,
                Some(b) => run.inertia_trace.last() < b.inertia_trace.last(),
            };
            if better {
                best = Some(run);
            }
        }
        let run = best.expect("at least one restart");
        Ok(Self {
            k: config.k,
            inertia: *run.inertia_trace.last().expect("nonempty trace"),
            centroids: run.centroids,
            dose_weight: config.dose_weight,
        })
    }

    /// Fits on joint points built from covariates and doses.
    pub fn fit_joint(x: &Matrix, dose: &[f64], config: &KMeansConfig, seed: u64) -> Result<Self> {
        let points = joint_points(x, dose, config.dose_weight)?;
        Self::fit(&points, config, seed)
    }

    /// Nearest centroid for a point already in the joint space.
    pub fn assign_point(&self, p: &[f64]) -> usize {
        nearest(&self.centroids, p).0
    }

    /// Nearest centroid for covariates `x` at dose `s`.
    pub fn assign(&self, x: &[f64], s: f64) -> usize {
        let mut best = (0, f64::INFINITY);
        let dim = x.len();
        for (c, row) in self.centroids.row_iter().enumerate() {
            let ds = row[dim] - self.dose_weight * s;
            let d = sq_dist(&row[..dim], x) + ds * ds;
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    pub fn assign_batch(&self, x: &Matrix, dose: &[f64]) -> Vec<usize> {
        x.row_iter()
            .zip(dose)
            .map(|(row, &s)| self.assign(row, s))
            .collect()
    }

    /// Sum of squared distances of `points` to their nearest centroid.
    pub fn inertia_of(&self, points: &Matrix) -> f64 {
        points.row_iter().map(|p| nearest(&self.centroids, p).1).sum()
    }

    /// Cluster sizes of an assignment vector.
    pub fn counts(&self, assignments: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &a in assignments {
            counts[a] += 1;
        }
        counts
    }
}
