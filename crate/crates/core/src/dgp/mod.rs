//! The clustered, confounded dose-response generator.
//!
//! Generation runs in three steps: bean types are merged at random into
//! three clusters, each cluster receives a modal dose around which unit
//! doses are drawn from a Beta distribution, and outcomes follow a known
//! response surface plus Gaussian noise. The stored weights make the true
//! response available at any dose.

mod covariates;

pub use covariates::{
    synth_covariates, CovariateTable, DRY_BEAN_CLASSES, DRY_BEAN_FEATURES, FEATURE_COUNT,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{self, Rng};

/// Number of dose-assignment clusters.
pub const CLUSTERS: usize = 3;

/// Lower bound applied to the Beta `b` parameter.
const MIN_BETA_B: f64 = 1e-6;
const MAX_WEIGHT_RESAMPLES: usize = 100;

/// How the Beta `b` parameter is derived from `α` and the modal dose `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DoseFormula {
    /// `b = α/m + 1 − α`; its mode is `m(α−1)/(α−m)`, not `m`.
    #[default]
    AsPrinted,
    /// `b = (α−1)/m + 2 − α`, whose mode is exactly `m` for `α > 1`.
    ModeCorrected,
}

impl DoseFormula {
    pub fn beta_b(self, alpha: f64, modal: f64) -> f64 {
        match self {
            DoseFormula::AsPrinted => alpha / modal + (1.0 - alpha),
            DoseFormula::ModeCorrected => (alpha - 1.0) / modal + 2.0 - alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct DgpConfig {
    /// Confounding strength.
    pub alpha: f64,
    /// Between-cluster dose variability.
    pub beta: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub dose_formula: DoseFormula,
    /// Minimum admissible `w₃ᵀx` over all rows.
    pub weight_guard: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            beta: 0.5,
            noise_std: 1.0,
            seed: 0,
            dose_formula: DoseFormula::AsPrinted,
            weight_guard: 0.05,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.weight_guard >= 0.0) {
            return Err(invalid(format!("weight_guard must be >= 0, got {}", self.weight_guard)));
        }
        Ok(())
    }
}

/// Maps each of `labels` labels to one of `clusters` clusters, uniformly over
/// all surjections.
pub fn form_clusters(labels: usize, clusters: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if labels < clusters {
        return Err(invalid(format!(
            "need at least {clusters} labels to form {clusters} clusters, got {labels}"
        )));
    }
    if clusters == 0 {
        return Err(invalid("cluster count must be positive"));
    }
    loop {
        let map: Vec<usize> = (0..labels).map(|_| rng.random_range(0..clusters)).collect();
        let mut hit = vec![false; clusters];
        map.iter().for_each(|&c| hit[c] = true);
        if hit.iter().all(|&h| h) {
            return Ok(map);
        }
    }
}

/// A random permutation of `{(1−β)/2, 1/2, (1+β)/2}`.
pub fn assign_modal_doses(beta: f64, rng: &mut Rng) -> Result<[f64; CLUSTERS]> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut doses = [(1.0 - beta) / 2.0, 0.5, (1.0 + beta) / 2.0];
    doses.shuffle(rng);
    Ok(doses)
}

/// Draws one dose. `α = 0` is uniform on `[0, 1]`; otherwise
/// `Beta(α, b(α, m))` with `b` from `formula`.
pub fn sample_dose(alpha: f64, modal: f64, formula: DoseFormula, rng: &mut Rng) -> Result<f64> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(rng.random::<f64>());
    }
    if !(modal > 0.0 && modal <= 1.0) {
        return Err(invalid(format!("modal dose must lie in (0, 1], got {modal}")));
    }
    let mut b = formula.beta_b(alpha, modal);
    if !(b > MIN_BETA_B) {
        if b <= 0.0 {
            log::warn!("Beta b = {b} is not positive (alpha {alpha}, modal {modal}, {formula:?}); clamped to {MIN_BETA_B}");
        }
        b = MIN_BETA_B;
    }
    Ok(rng::beta(alpha, b, rng).clamp(0.0, 1.0))
}

/// The three response-surface weight vectors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Oracle {
    pub weights: [Vec<f64>; 3],
    /// Smallest admissible `|w₃ᵀx|`.
    pub guard: f64,
}

impl Oracle {
    /// `μ(s, x) = 10 (w₁ᵀx + 12 s (s − ¾ w₂ᵀx / w₃ᵀx)²)`.
    pub fn response(&self, s: f64, x: &[f64]) -> Result<f64> {
        let [w1, w2, w3] = &self.weights;
        if x.len() != w1.len() {
            return Err(invalid(format!(
                "covariate vector of length {} for {}-dimensional weights",
                x.len(),
                w1.len()
            )));
        }
        let den = dot(w3, x);
        if !(den.abs() >= self.guard) || den == 0.0 {
            return Err(Error::OracleSingularity {
                denominator: den,
                guard: self.guard,
            });
        }
        let shift = s - 0.75 * dot(w2, x) / den;
        Ok(10.0 * (dot(w1, x) + 12.0 * s * shift * shift))
    }
}

fn half_sparse_weights(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.shuffle(rng);
    let mut w = vec![0.0; dim];
    for &j in &idx[..dim / 2] {
        let mut v = 0.0;
        while v == 0.0 {
            v = rng.random::<f64>();
        }
        w[j] = v;
    }
    w
}

fn min_denominator(w3: &[f64], x: &Matrix) -> f64 {
    x.row_iter().map(|r| dot(w3, r)).fold(f64::INFINITY, f64::min)
}

/// Half of each weight vector is drawn from `U(0, 1)`, the rest is zero.
/// `w₃` is redrawn from the same stream until `min_i w₃ᵀxᵢ ≥ guard`.
pub fn sample_weights(x: &Matrix, guard: f64, rng: &mut Rng) -> Result<Oracle> {
    let dim = x.cols();
    let w1 = half_sparse_weights(dim, rng);
    let w2 = half_sparse_weights(dim, rng);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..MAX_WEIGHT_RESAMPLES {
        let w3 = half_sparse_weights(dim, rng);
        let min_den = min_denominator(&w3, x);
        if min_den >= guard && min_den > 0.0 {
            return Ok(Oracle {
                weights: [w1, w2, w3],
                guard,
            });
        }
        best = best.max(min_den);
    }
    Err(Error::Generation {
        attempts: MAX_WEIGHT_RESAMPLES,
        min_denominator: best,
        guard,
    })
}

/// A generated benchmark instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    /// Min-max normalized covariates.
    pub covariates: Matrix,
    pub dose: Vec<f64>,
    pub outcome: Vec<f64>,
    /// Cluster per row, `0..3`.
    pub cluster: Vec<usize>,
    /// Bean type per row.
    pub labels: Vec<usize>,
    /// Cluster of each bean type.
    pub cluster_of_label: Vec<usize>,
    pub modal_doses: [f64; CLUSTERS],
    pub oracle: Oracle,
    pub config: DgpConfig,
}

impl GeneratedDataset {
    pub fn rows(&self) -> usize {
        self.dose.len()
    }

    /// Noise-free response of row `i` at dose `s`.
    pub fn true_response(&self, i: usize, s: f64) -> Result<f64> {
        self.oracle.response(s, self.covariates.row(i))
    }

    pub fn samples(&self, rows: &[usize]) -> Samples {
        Samples {
            x: self.covariates.select_rows(rows),
            dose: rows.iter().map(|&i| self.dose[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    pub fn all_samples(&self) -> Samples {
        Samples {
            x: self.covariates.clone(),
            dose: self.dose.clone(),
            outcome: self.outcome.clone(),
        }
    }

    /// Doses of the rows in each cluster.
    pub fn doses_by_cluster(&self) -> [Vec<f64>; CLUSTERS] {
        let mut out: [Vec<f64>; CLUSTERS] = Default::default();
        for (&c, &s) in self.cluster.iter().zip(&self.dose) {
            out[c].push(s);
        }
        out
    }
}

/// Generates one instance from a normalized table. A pure function of
/// `(config, table)`.
pub fn generate(config: &DgpConfig, table: &CovariateTable) -> Result<GeneratedDataset> {
    config.validate()?;
    if !table.is_unit_scaled() {
        return Err(invalid("covariates must be min-max normalized before generation"));
    }
    let seed = config.seed;
    let cluster_of_label = form_clusters(
        table.class_names().len(),
        CLUSTERS,
        &mut rng::stream(seed, "clusters"),
    )?;
    let modal_doses = assign_modal_doses(config.beta, &mut rng::stream(seed, "modal-doses"))?;
    let x = table.features();
    let oracle = sample_weights(x, config.weight_guard, &mut rng::stream(seed, "weights"))?;

    let n = table.rows();
    let cluster: Vec<usize> = table.labels().iter().map(|&l| cluster_of_label[l]).collect();
    let mut dose_rng = rng::stream(seed, "doses");
    let dose = cluster
        .iter()
        .map(|&c| sample_dose(config.alpha, modal_doses[c], config.dose_formula, &mut dose_rng))
        .collect::<Result<Vec<f64>>>()?;

    let mut noise_rng = rng::stream(seed, "noise");
    let mut outcome = Vec::with_capacity(n);
    for i in 0..n {
        let mu = oracle.response(dose[i], x.row(i))?;
        let eps = if config.noise_std > 0.0 {
            config.noise_std * rng::standard_normal(&mut noise_rng)
        } else {
            0.0
        };
        outcome.push(mu + eps);
    }

    Ok(GeneratedDataset {
        covariates: x.clone(),
        dose,
        outcome,
        cluster,
        labels: table.labels().to_vec(),
        cluster_of_label,
        modal_doses,
        oracle,
        config: *config,
    })
}

/// Observed `(x, s, y)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Matrix,
    pub dose: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl Samples {
    pub fn new(x: Matrix, dose: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        if x.rows() != dose.len() || dose.len() != outcome.len() {
            return Err(invalid(format!(
                "sample parts disagree: {} rows, {} doses, {} outcomes",
                x.rows(),
                dose.len(),
                outcome.len()
            )));
        }
        Ok(Self { x, dose, outcome })
    }

    pub fn len(&self) -> usize {
        self.dose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dose.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Samples {
        Samples {
            x: self.x.select_rows(rows),
            dose: rows.iter().map(|&i| self.dose[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }
}

/// Disjoint train / validation / test row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then a contiguous 70 / 10 / 20 partition.
pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(invalid(format!("need at least 10 rows to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "split"));
    let n_train = crate::math::round(0.7 * n as f64) as usize;
    let n_val = crate::math::round(0.1 * n as f64) as usize;
    let test = idx.split_off(n_train + n_val);
    let validation = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn modal_doses_by_beta() {
        let m = assign_modal_doses(0.0, &mut rng(1)).unwrap();
        assert_eq!(m, [0.5; 3]);
        let mut m = assign_modal_doses(1.0, &mut rng(1)).unwrap();
        m.sort_by(f64::total_cmp);
        assert_eq!(m, [0.0, 0.5, 1.0]);
        let mut m = assign_modal_doses(0.5, &mut rng(2)).unwrap();
        m.sort_by(f64::total_cmp);
        assert_eq!(m, [0.25, 0.5, 0.75]);
        assert!(assign_modal_doses(1.5, &mut rng(0)).is_err());
        assert!(assign_modal_doses(-0.1, &mut rng(0)).is_err());
    }

    #[test]
    fn beta_parameters_by_formula() {
        assert_eq!(DoseFormula::AsPrinted.beta_b(3.0, 0.5), 4.0);
        assert_eq!(DoseFormula::ModeCorrected.beta_b(3.0, 0.5), 3.0);
        assert_eq!(DoseFormula::AsPrinted.beta_b(3.0, 0.75), 2.0);
        let b = DoseFormula::ModeCorrected.beta_b(3.0, 0.75);
        // analytic Beta mode (a − 1)/(a + b − 2)
        assert!((2.0 / (3.0 + b - 2.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_response() {
        // x picks out single coordinates so that w1'x = 0.5, w2'x = 0.4, w3'x = 0.8
        let mut w1 = vec![0.0; 16];
        let mut w2 = vec![0.0; 16];
        let mut w3 = vec![0.0; 16];
        w1[0] = 0.5;
        w2[1] = 0.4;
        w3[2] = 0.8;
        let mut x = vec![0.0; 16];
        x[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let o = Oracle {
            weights: [w1, w2, w3],
            guard: 0.05,
        };
        assert!((o.response(0.5, &x).unwrap() - 5.9375).abs() < 1e-12);
        assert_eq!(o.response(0.0, &x).unwrap(), 5.0);
    }

    #[test]
    fn zero_w2_leaves_cubic() {
        let o = Oracle {
            weights: [vec![0.3, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]],
            guard: 0.05,
        };
        for s in [0.0, 0.25, 0.8, 1.0] {
            let x = [1.0, 0.7];
            let expected = 10.0 * (0.3 + 12.0 * s * s * s);
            assert!((o.response(s, &x).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_denominator() {
        let o = Oracle {
            weights: [vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            guard: 0.05,
        };
        assert!(matches!(
            o.response(0.5, &[1.0, 0.01]),
            Err(Error::OracleSingularity { .. })
        ));
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = split(1000, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (700, 100, 200));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(s, split(1000, 3).unwrap());
        assert!(split(9, 0).is_err());
    }

    #[test]
    fn form_clusters_errors_and_surjectivity() {
        assert!(form_clusters(2, 3, &mut rng(0)).is_err());
        for seed in 0..200 {
            let m = form_clusters(7, 3, &mut rng(seed)).unwrap();
            for c in 0..3 {
                assert!(m.contains(&c));
            }
            assert_eq!(m, form_clusters(7, 3, &mut rng(seed)).unwrap());
        }
    }

    #[test]
    fn modal_dose_zero_rejected_for_beta_branch() {
        assert!(sample_dose(2.0, 0.0, DoseFormula::AsPrinted, &mut rng(0)).is_err());
        assert!(sample_dose(0.0, 0.0, DoseFormula::AsPrinted, &mut rng(0)).is_ok());
    }
}
