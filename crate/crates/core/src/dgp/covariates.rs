use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Number of covariate columns in the bean table.
pub const FEATURE_COUNT: usize = 16;

pub const DRY_BEAN_FEATURES: [&str; FEATURE_COUNT] = [
    "Area",
    "Perimeter",
    "MajorAxisLength",
    "MinorAxisLength",
    "AspectRation",
    "Eccentricity",
    "ConvexArea",
    "EquivDiameter",
    "Extent",
    "Solidity",
    "roundness",
    "Compactness",
    "ShapeFactor1",
    "ShapeFactor2",
    "ShapeFactor3",
    "ShapeFactor4",
];

/// Bean types and their row counts in the public dry-bean table.
pub const DRY_BEAN_CLASSES: [(&str, usize); 7] = [
    ("SEKER", 2027),
    ("BARBUNYA", 1322),
    ("BOMBAY", 522),
    ("CALI", 1630),
    ("HOROZ", 1928),
    ("SIRA", 2636),
    ("DERMASON", 3546),
];

/// Covariates with one categorical label (bean type) per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    features: Matrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl CovariateTable {
    /// `labels[i]` indexes into `class_names`.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.cols() != FEATURE_COUNT {
            return Err(invalid(format!(
                "expected {FEATURE_COUNT} feature columns, got {}",
                features.cols()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(invalid("feature name count does not match columns"));
        }
        if labels.len() != features.rows() {
            return Err(invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(invalid(format!("label {bad} has no class name")));
        }
        for (i, row) in features.row_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!(
                    "row {i}: column `{}` is not finite",
                    feature_names[j]
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            class_names,
            feature_names,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    /// Number of labels that occur at least once.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.class_names.len()];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    }

    /// Min-max scales every column to `[0, 1]` with whole-table statistics.
    pub fn normalized(&self) -> Result<Self> {
        let (n, d) = self.features.shape();
        if n == 0 {
            return Err(invalid("cannot normalize an empty table"));
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in self.features.row_iter() {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        for j in 0..d {
            if !(hi[j] > lo[j]) {
                return Err(Error::ConstantColumn {
                    column: self.feature_names[j].clone(),
                });
            }
        }
        let mut features = self.features.clone();
        for i in 0..n {
            for (j, v) in features.row_mut(i).iter_mut().enumerate() {
                *v = ((*v - lo[j]) / (hi[j] - lo[j])).clamp(0.0, 1.0);
            }
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// True when every entry lies in `[0, 1]`.
    pub fn is_unit_scaled(&self) -> bool {
        self.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

// Latent means (size, elongation, regularity) per bean type, in the order of
// `DRY_BEAN_CLASSES`.
const CLASS_LATENTS: [[f64; 3]; 7] = [
    [-0.3, -1.2, 1.0],
    [0.8, 0.0, -0.5],
    [3.0, 0.3, 0.2],
    [1.0, 0.9, -0.3],
    [0.2, 1.8, -1.0],
    [-0.3, 0.2, 0.2],
    [-0.9, -0.2, 0.5],
];

// Loadings of each feature on the latent factors plus idiosyncratic noise sd.
const LOADINGS: [[f64; 4]; FEATURE_COUNT] = [
    [1.00, 0.10, 0.00, 0.15],
    [0.95, 0.30, -0.10, 0.15],
    [0.85, 0.50, 0.00, 0.15],
    [0.95, -0.30, 0.05, 0.15],
    [0.05, 1.00, 0.00, 0.15],
    [0.05, 0.95, 0.00, 0.20],
    [1.00, 0.10, -0.05, 0.15],
    [0.98, 0.10, 0.00, 0.15],
    [0.00, -0.20, 0.50, 0.50],
    [0.00, -0.10, 0.70, 0.30],
    [-0.10, -0.40, 0.80, 0.25],
    [0.00, -1.00, 0.20, 0.15],
    [-0.90, 0.30, 0.00, 0.20],
    [-0.90, -0.30, 0.00, 0.20],
    [0.00, -1.00, 0.20, 0.15],
    [0.00, -0.10, 0.75, 0.30],
];

const LATENT_SD: f64 = 0.35;
const CLIP: f64 = 8.0;

/// Row counts per class proportional to `weights` (largest remainder), each
/// at least one. Requires `n >= weights.len()`.
fn apportion(n: usize, weights: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|&w| n * w / total).collect();
    let mut rem: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| ((n * w) % total, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = counts.iter().sum();
    for &(_, i) in rem.iter().take(n - assigned) {
        counts[i] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..counts.len()).max_by_key(|&i| (counts[i], usize::MAX - i)).expect("nonempty");
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    counts
}

/// A seven-component Gaussian mixture in 16 dimensions shaped like the
/// dry-bean covariates: class proportions follow the public table and the
/// features load on three shared latent factors. Used when the real CSV is
/// unavailable.
pub fn synth_covariates(n: usize, seed: u64) -> Result<CovariateTable> {
    let k = DRY_BEAN_CLASSES.len();
    if n < k {
        return Err(invalid(format!("synthetic table needs at least {k} rows, got {n}")));
    }
    let weights: Vec<usize> = DRY_BEAN_CLASSES.iter().map(|c| c.1).collect();
    let counts = apportion(n, &weights);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| core::iter::repeat(c).take(m))
        .collect();
    let mut rng = rng::stream(seed, "synth-covariates");
    labels.shuffle(&mut rng);

    let mut features = Matrix::zeros(n, FEATURE_COUNT);
    for (i, &label) in labels.iter().enumerate() {
        let mut z = CLASS_LATENTS[label];
        for v in &mut z {
            let e = rng::standard_normal(&mut rng);
            *v += LATENT_SD * e;
        }
        for (j, out) in features.row_mut(i).iter_mut().enumerate() {
            let [a, b, c, sd] = LOADINGS[j];
            let e = rng::standard_normal(&mut rng);
            *out = (a * z[0] + b * z[1] + c * z[2] + sd * e).clamp(-CLIP, CLIP);
        }
    }
    CovariateTable::new(
        features,
        labels,
        DRY_BEAN_CLASSES.iter().map(|c| c.0.to_string()).collect(),
        DRY_BEAN_FEATURES.iter().map(|s| s.to_string()).collect(),
    )
}
