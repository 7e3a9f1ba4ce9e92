//! Differentiable two-sample integral probability metrics and the
//! multi-cluster balancing loss built from them.
//!
//! All metrics are recorded on a [`Tape`] so their gradients flow back into
//! the representation network. MMD values are squared.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::matrix::{self, Matrix};

/// Kernel bandwidth for the RBF MMD.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled (detached) samples.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum IpmKind {
    MmdLinear,
    MmdRbf { bandwidth: Bandwidth },
    Wasserstein { epsilon: f64, iterations: usize },
}

pub const DEFAULT_SINKHORN_EPSILON: f64 = 0.1;
pub const DEFAULT_SINKHORN_ITERATIONS: usize = 50;

impl IpmKind {
    pub const ALL_NAMES: [&'static str; 3] = ["mmd-lin", "mmd-rbf", "wass"];

    pub fn rbf_median() -> Self {
        IpmKind::MmdRbf {
            bandwidth: Bandwidth::Median,
        }
    }

    pub fn sinkhorn_default() -> Self {
        IpmKind::Wasserstein {
            epsilon: DEFAULT_SINKHORN_EPSILON,
            iterations: DEFAULT_SINKHORN_ITERATIONS,
        }
    }

    /// Short name used in reports: `mmd-lin`, `mmd-rbf`, `wass`.
    pub fn name(&self) -> &'static str {
        match self {
            IpmKind::MmdLinear => "mmd-lin",
            IpmKind::MmdRbf { .. } => "mmd-rbf",
            IpmKind::Wasserstein { .. } => "wass",
        }
    }

    /// Parses a short name into the kind with default settings.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mmd-lin" | "mmd-linear" | "lin" => Ok(IpmKind::MmdLinear),
            "mmd-rbf" | "rbf" => Ok(Self::rbf_median()),
            "wass" | "wasserstein" => Ok(Self::sinkhorn_default()),
            other => Err(invalid(format!(
                "unknown IPM `{other}` (expected one of mmd-lin, mmd-rbf, wass)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            IpmKind::MmdLinear => Ok(()),
            IpmKind::MmdRbf {
                bandwidth: Bandwidth::Fixed(s),
            } if !(s > 0.0 && s.is_finite()) => Err(invalid(format!("RBF bandwidth must be positive, got {s}"))),
            IpmKind::MmdRbf { .. } => Ok(()),
            IpmKind::Wasserstein { epsilon, iterations } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    Err(invalid(format!("sinkhorn epsilon must be positive, got {epsilon}")))
                } else if iterations == 0 {
                    Err(invalid("sinkhorn needs at least one iteration"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn check_pair(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (ma, mb) = (tape.value(a), tape.value(b));
    if ma.rows() == 0 || mb.rows() == 0 {
        return Err(invalid(format!("{op} needs two nonempty samples")));
    }
    if ma.cols() != mb.cols() {
        return Err(Error::Dimension {
            op,
            left: ma.shape(),
            right: mb.shape(),
        });
    }
    Ok(())
}

/// `‖mean(A) − mean(B)‖²`.
pub fn mmd_linear(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    check_pair(tape, a, b, "mmd_linear")?;
    let ma = tape.mean_rows(a)?;
    let mb = tape.mean_rows(b)?;
    let diff = tape.sub(ma, mb)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// Total order on samples so that symmetric metrics evaluate the same
/// operations regardless of argument order.
fn sample_order(a: &Matrix, b: &Matrix) -> Ordering {
    a.shape().cmp(&b.shape()).then_with(|| {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Median pairwise Euclidean distance between distinct rows of the pooled
/// samples; falls back to 1 when every distance is zero.
pub fn median_bandwidth(a: &Matrix, b: &Matrix) -> f64 {
    let pooled: Vec<&[f64]> = a.row_iter().chain(b.row_iter()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(math::sqrt(matrix::sq_dist(pooled[i], pooled[j])));
        }
    }
    if dists.is_empty() {
        log::warn!("median heuristic on a single point; using bandwidth 1");
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median > 0.0 && median.is_finite() {
        median
    } else {
        log::warn!("median pairwise distance is zero; using bandwidth 1");
        1.0
    }
}

fn rbf_mean(tape: &mut Tape, a: Var, b: Var, sigma: f64) -> Result<Var> {
    let d = tape.pairwise_sq_dist(a, b)?;
    let scaled = tape.scale(d, -1.0 / (2.0 * sigma * sigma));
    let k = tape.exp(scaled);
    tape.mean(k)
}

/// Biased (V-statistic) squared MMD with the kernel `exp(−‖u−v‖²/(2σ²))`.
pub fn mmd_rbf(tape: &mut Tape, a: Var, b: Var, bandwidth: Bandwidth) -> Result<Var> {
    check_pair(tape, a, b, "mmd_rbf")?;
    let (a, b) = match sample_order(tape.value(a), tape.value(b)) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_bandwidth(tape.value(a), tape.value(b)),
    };
    let kaa = rbf_mean(tape, a, a, sigma)?;
    let kbb = rbf_mean(tape, b, b, sigma)?;
    let kab = rbf_mean(tape, a, b, sigma)?;
    let own = tape.add(kaa, kbb)?;
    let cross = tape.scale(kab, 2.0);
    tape.sub(own, cross)
}

/// Entropic transport plan between uniform marginals for a cost matrix
/// already scaled to `[0, 1]`.
pub fn sinkhorn_plan(cost: &Matrix, epsilon: f64, iterations: usize) -> Result<Matrix> {
    let (n, m) = cost.shape();
    let kernel = cost.map(|c| math::exp(-c / epsilon));
    let (mu, nu) = (1.0 / n as f64, 1.0 / m as f64);
    let mut u = alloc::vec![1.0; n];
    let mut v = alloc::vec![1.0; m];
    for _ in 0..iterations {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = mu / matrix::dot(kernel.row(i), &v);
        }
        v.iter_mut().for_each(|x| *x = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            for (vj, &k) in v.iter_mut().zip(kernel.row(i)) {
                *vj += ui * k;
            }
        }
        v.iter_mut().for_each(|x| *x = nu / *x);
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(Error::SinkhornDiverged { epsilon });
        }
    }
    let mut plan = kernel;
    for i in 0..n {
        let ui = u[i];
        for (p, &vj) in plan.row_mut(i).iter_mut().zip(&v) {
            *p *= ui * vj;
        }
    }
    if !plan.is_finite() {
        return Err(Error::SinkhornDiverged { epsilon });
    }
    Ok(plan)
}

/// Entropic Wasserstein cost `⟨P, C / max C⟩` on squared Euclidean costs.
///
/// The plan `P` and the normalizer are treated as constants in the backward
/// pass, so gradients flow through the cost matrix only.
pub fn wasserstein(tape: &mut Tape, a: Var, b: Var, epsilon: f64, iterations: usize) -> Result<Var> {
    check_pair(tape, a, b, "wasserstein")?;
    IpmKind::Wasserstein { epsilon, iterations }.validate()?;
    let cost = tape.pairwise_sq_dist(a, b)?;
    let raw = tape.value(cost);
    let max = raw.max();
    let norm = if max > 0.0 { max } else { 1.0 };
    let plan = sinkhorn_plan(&raw.map(|c| c / norm), epsilon, iterations)?;
    let weights = plan.map(|p| p / norm);
    tape.weighted_sum(cost, weights)
}

pub fn ipm(tape: &mut Tape, kind: &IpmKind, a: Var, b: Var) -> Result<Var> {
    match *kind {
        IpmKind::MmdLinear => mmd_linear(tape, a, b),
        IpmKind::MmdRbf { bandwidth } => mmd_rbf(tape, a, b, bandwidth),
        IpmKind::Wasserstein { epsilon, iterations } => wasserstein(tape, a, b, epsilon, iterations),
    }
}

/// Evaluates an IPM on plain matrices.
pub fn ipm_value(kind: &IpmKind, a: &Matrix, b: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let out = ipm(&mut tape, kind, av, bv)?;
    Ok(tape.value(out).item())
}

/// Rows of each cluster, ordered by cluster id.
pub fn group_rows(clusters: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &c) in clusters.iter().enumerate() {
        groups.entry(c).or_default().push(row);
    }
    groups
}

/// Average IPM between every eligible non-base cluster and the base
/// cluster, over representation rows grouped by cluster id.
///
/// Clusters with fewer than two rows are skipped. If the requested base is
/// not eligible, the eligible cluster with the most rows (lowest id on ties)
/// takes its place. With fewer than two eligible clusters the loss is a
/// constant zero.
pub fn cluster_balance_loss(
    tape: &mut Tape,
    reps: Var,
    clusters: &[usize],
    kind: &IpmKind,
    base: usize,
) -> Result<Var> {
    let rows = tape.value(reps).rows();
    if rows != clusters.len() {
        return Err(invalid(format!(
            "{rows} representation rows but {} cluster ids",
            clusters.len()
        )));
    }
    let eligible: Vec<(usize, Vec<usize>)> = group_rows(clusters)
        .into_iter()
        .filter(|(_, r)| r.len() >= 2)
        .collect();
    if eligible.len() < 2 {
        log::debug!(
            "cluster balance loss: {} eligible cluster(s) in batch, returning 0",
            eligible.len()
        );
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let base_pos = eligible.iter().position(|(c, _)| *c == base).unwrap_or_else(|| {
        let mut best = 0;
        for (i, (_, r)) in eligible.iter().enumerate() {
            if r.len() > eligible[best].1.len() {
                best = i;
            }
        }
        best
    });
    let base_rows = tape.select_rows(reps, &eligible[base_pos].1)?;
    let mut total: Option<Var> = None;
    for (i, (_, r)) in eligible.iter().enumerate() {
        if i == base_pos {
            continue;
        }
        let group = tape.select_rows(reps, r)?;
        let d = ipm(tape, kind, group, base_rows)?;
        total = Some(match total {
            Some(t) => tape.add(t, d)?,
            None => d,
        });
    }
    let pairs = (eligible.len() - 1) as f64;
    Ok(tape.scale(total.expect("at least one pair"), 1.0 / pairs))
}

/// Human-readable description of the IPM settings, for run metadata.
pub fn describe(kind: &IpmKind) -> String {
    match kind {
        IpmKind::MmdLinear => String::from("mmd-lin (squared mean embedding distance)"),
        IpmKind::MmdRbf {
            bandwidth: Bandwidth::Median,
        } => String::from("mmd-rbf (biased squared MMD, per-batch median bandwidth)"),
        IpmKind::MmdRbf {
            bandwidth: Bandwidth::Fixed(s),
        } => format!("mmd-rbf (biased squared MMD, bandwidth {s})"),
        IpmKind::Wasserstein { epsilon, iterations } => format!(
            "wass (sinkhorn, epsilon {epsilon} on max-normalized squared cost, {iterations} iterations, fixed-plan gradient)"
        ),
    }
}
