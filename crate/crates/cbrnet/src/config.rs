//! JSON configuration documents. Unknown keys are rejected everywhere.

use std::path::Path;

use anyhow::Result;
use cbrnet_core::clustering::KMeansConfig;
use cbrnet_core::dgp::{DgpConfig, DoseFormula};
use cbrnet_core::ipm::IpmKind;
use cbrnet_core::models::{NetworkSpec, Penalty};
use cbrnet_core::select::{EstimatorKind, Hyper, NetGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::usage;

/// Reads a JSON config; any read or parse problem is a usage error.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub dgp: DgpConfig,
    pub covariates: Covariates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// `linear`, `mlp`, `drnet`, `cbrnet-mmd-lin`, `cbrnet-mmd-rbf` or
    /// `cbrnet-wass`.
    pub estimator: String,
    pub network: NetworkSpec,
    pub lambda: f64,
    pub penalty: Penalty,
    pub clustering: KMeansConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: String::from("cbrnet-wass"),
            network: NetworkSpec::default(),
            lambda: 0.01,
            penalty: Penalty::None,
            clustering: KMeansConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn kind(&self) -> Result<EstimatorKind> {
        EstimatorKind::parse(&self.estimator).map_err(|e| usage(e.to_string()))
    }

    pub fn hyper(&self) -> Result<Hyper> {
        Ok(match self.kind()? {
            EstimatorKind::Linear => Hyper::Linear { penalty: self.penalty },
            _ => Hyper::Net {
                spec: self.network,
                lambda: self.lambda,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Grid-searched estimators over (α, β) cells.
    #[default]
    Benchmark,
    /// CBRNet at fixed settings over λ values.
    Lambda,
    /// CBRNet at fixed settings over cluster counts k.
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub alpha: f64,
    pub beta: f64,
}

/// Generator settings shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpTemplate {
    pub noise_std: f64,
    pub dose_formula: DoseFormula,
    pub weight_guard: f64,
}

impl Default for DgpTemplate {
    fn default() -> Self {
        let d = DgpConfig::default();
        Self {
            noise_std: d.noise_std,
            dose_formula: d.dose_formula,
            weight_guard: d.weight_guard,
        }
    }
}

impl DgpTemplate {
    pub fn config(&self, cell: Cell, seed: u64) -> DgpConfig {
        DgpConfig {
            alpha: cell.alpha,
            beta: cell.beta,
            noise_std: self.noise_std,
            seed,
            dose_formula: self.dose_formula,
            weight_guard: self.weight_guard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    pub mlp: NetGrid,
    pub drnet: NetGrid,
    pub cbrnet: NetGrid,
    pub linear: Vec<Penalty>,
}

impl Default for Grids {
    fn default() -> Self {
        Self::desk()
    }
}

impl Grids {
    /// At most four points per estimator.
    pub fn desk() -> Self {
        let baseline = NetGrid {
            learning_rate: vec![1e-3],
            batch_size: vec![128],
            hidden_size: vec![32, 48],
            l2_penalty: vec![0.0, 0.1],
            lambda: vec![0.0],
        };
        Self {
            mlp: baseline.clone(),
            drnet: baseline,
            cbrnet: NetGrid {
                learning_rate: vec![1e-3, 1e-2],
                batch_size: vec![128],
                hidden_size: vec![32],
                l2_penalty: vec![0.0],
                lambda: vec![0.01, 0.1],
            },
            linear: vec![Penalty::None, Penalty::Ridge(1.0)],
        }
    }

    /// The complete search ranges.
    pub fn full() -> Self {
        let baseline = NetGrid {
            learning_rate: vec![1e-4, 1e-3],
            batch_size: vec![64, 128],
            hidden_size: vec![32, 48],
            l2_penalty: vec![0.0, 0.1],
            lambda: vec![0.0],
        };
        Self {
            mlp: baseline.clone(),
            drnet: baseline,
            cbrnet: NetGrid {
                learning_rate: vec![1e-3, 1e-2],
                batch_size: vec![128, 256],
                hidden_size: vec![32],
                l2_penalty: vec![0.0],
                lambda: vec![0.001, 0.01, 0.1],
            },
            linear: vec![Penalty::None, Penalty::Ridge(1.0)],
        }
    }

    pub fn points(&self, kind: &EstimatorKind, base: &NetworkSpec) -> Result<Vec<Hyper>> {
        Ok(match kind {
            EstimatorKind::Linear => self.linear.iter().map(|&penalty| Hyper::Linear { penalty }).collect(),
            EstimatorKind::Mlp => self.mlp.points(base)?,
            EstimatorKind::DrNet => self.drnet.points(base)?,
            EstimatorKind::CbrNet(_) => self.cbrnet.points(base)?,
        })
    }

    /// Names the first value outside the full search range.
    fn off_range(&self) -> Option<String> {
        let full = Self::full();
        let pairs = [("mlp", &self.mlp, &full.mlp), ("drnet", &self.drnet, &full.drnet), ("cbrnet", &self.cbrnet, &full.cbrnet)];
        for (name, g, f) in pairs {
            let axes_f: [(&str, &[f64], &[f64]); 3] = [
                ("learning_rate", &g.learning_rate, &f.learning_rate),
                ("l2_penalty", &g.l2_penalty, &f.l2_penalty),
                ("lambda", &g.lambda, &f.lambda),
            ];
            for (axis, vals, allowed) in axes_f {
                if let Some(v) = vals.iter().find(|v| !allowed.contains(v)) {
                    return Some(format!("grids.{name}.{axis} value {v} (allowed {allowed:?})"));
                }
            }
            let axes_u: [(&str, &[usize], &[usize]); 2] = [
                ("batch_size", &g.batch_size, &f.batch_size),
                ("hidden_size", &g.hidden_size, &f.hidden_size),
            ];
            for (axis, vals, allowed) in axes_u {
                if let Some(v) = vals.iter().find(|v| !allowed.contains(v)) {
                    return Some(format!("grids.{name}.{axis} value {v} (allowed {allowed:?})"));
                }
            }
        }
        None
    }
}

pub const ALL_ESTIMATORS: [&str; 6] = ["linear", "mlp", "drnet", "cbrnet-mmd-lin", "cbrnet-mmd-rbf", "cbrnet-wass"];

/// The 17 (α, β) benchmark cells.
pub fn benchmark_cells() -> Vec<Cell> {
    let mut cells: Vec<Cell> = [0.0, 1.0, 2.0, 3.0, 4.0].iter().map(|&alpha| Cell { alpha, beta: 0.0 }).collect();
    for beta in [0.25, 0.5, 0.75] {
        cells.extend([1.0, 2.0, 3.0, 4.0].iter().map(|&alpha| Cell { alpha, beta }));
    }
    cells
}

/// The cell used by the λ and k sweeps.
pub fn sweep_cell() -> Cell {
    Cell {
        alpha: 3.0,
        beta: 2.0 / 3.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Defaults to the 17 benchmark cells, or the single sweep cell for
    /// `lambda` and `clusters`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Cell>>,
    pub repetitions: usize,
    pub estimators: Vec<String>,
    pub grids: Grids,
    /// Base settings for grid points; the fixed settings of the λ and k
    /// sweeps.
    pub network: NetworkSpec,
    pub clustering: KMeansConfig,
    pub dgp: DgpTemplate,
    pub master_seed: u64,
    pub lambda_values: Vec<f64>,
    pub k_values: Vec<usize>,
    /// IPMs of the λ and k sweeps: `mmd-lin`, `mmd-rbf`, `wass`.
    pub ipms: Vec<String>,
    /// λ held fixed while k varies.
    pub fixed_lambda: f64,
    pub covariates: Covariates,
    pub grid_size: usize,
    /// Permits grid values outside the full search ranges.
    pub allow_off_range: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Benchmark,
            cells: None,
            repetitions: 3,
            estimators: ALL_ESTIMATORS.iter().map(|s| s.to_string()).collect(),
            grids: Grids::desk(),
            network: NetworkSpec::default(),
            clustering: KMeansConfig::default(),
            dgp: DgpTemplate::default(),
            master_seed: 0,
            lambda_values: vec![0.0, 0.001, 0.01, 0.1, 1.0, 10.0],
            k_values: vec![2, 3, 5, 8, 12],
            ipms: IpmKind::ALL_NAMES.iter().map(|s| s.to_string()).collect(),
            fixed_lambda: 0.01,
            covariates: Covariates::default(),
            grid_size: cbrnet_core::eval::DEFAULT_GRID_SIZE,
            allow_off_range: false,
        }
    }
}

impl SweepConfig {
    /// Ten repetitions and the complete search ranges.
    pub fn full(mut self) -> Self {
        self.repetitions = 10;
        self.grids = Grids::full();
        self
    }

    pub fn cells(&self) -> Vec<Cell> {
        match (&self.cells, self.kind) {
            (Some(c), _) => c.clone(),
            (None, SweepKind::Benchmark) => benchmark_cells(),
            (None, _) => vec![sweep_cell()],
        }
    }

    /// Fills defaulted cells so the echo is complete, then validates.
    pub fn resolve(mut self) -> Result<Self> {
        self.cells = Some(self.cells());
        self.covariates = self.covariates.resolved();
        self.validate()?;
        Ok(self)
    }

    pub fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>> {
        self.estimators
            .iter()
            .map(|e| EstimatorKind::parse(e).map_err(|e| usage(e.to_string())))
            .collect()
    }

    pub fn ipm_kinds(&self) -> Result<Vec<IpmKind>> {
        self.ipms
            .iter()
            .map(|e| IpmKind::from_name(e).map_err(|e| usage(e.to_string())))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(usage(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        let cells = self.cells();
        if cells.is_empty() {
            return bad("no (alpha, beta) cells".into());
        }
        for c in &cells {
            self.dgp.config(*c, 0).validate().map_err(|e| usage(format!("cell {c:?}: {e}")))?;
        }
        self.network.validate().map_err(|e| usage(format!("network: {e}")))?;
        if self.grid_size < 2 {
            return bad(format!("grid_size must be at least 2, got {}", self.grid_size));
        }
        match self.kind {
            SweepKind::Benchmark => {
                let kinds = self.estimator_kinds()?;
                if kinds.is_empty() {
                    return bad("no estimators".into());
                }
                for k in &kinds {
                    let pts = self.grids.points(k, &self.network).map_err(|e| usage(format!("{}: {e}", k.id())))?;
                    if pts.is_empty() {
                        return bad(format!("empty grid for {}", k.id()));
                    }
                }
                if !self.allow_off_range {
                    if let Some(m) = self.grids.off_range() {
                        return bad(format!("{m} is outside the full search range; set allow_off_range to use it"));
                    }
                }
            }
            SweepKind::Lambda | SweepKind::Clusters => {
                if self.ipm_kinds()?.is_empty() {
                    return bad("no IPMs".into());
                }
                if self.kind == SweepKind::Lambda {
                    if self.lambda_values.is_empty() {
                        return bad("no lambda values".into());
                    }
                    if let Some(l) = self.lambda_values.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
                        return bad(format!("lambda {l} must be >= 0"));
                    }
                } else {
                    if self.k_values.is_empty() {
                        return bad("no k values".into());
                    }
                    if let Some(k) = self.k_values.iter().find(|k| !(2..=20).contains(*k)) {
                        return bad(format!("k = {k} outside 2..=20"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads a config file if given, applying `Default` otherwise.
pub fn read_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read(p),
        None => Ok(T::default()),
    }
}
