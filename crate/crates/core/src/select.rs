//! Estimator registry, hyperparameter grids and validation-MSE selection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::clustering::KMeansModel;
use crate::dgp::Samples;
use crate::error::{invalid, Error, Result};
use crate::eval::factual_mse;
use crate::ipm::IpmKind;
use crate::matrix::Matrix;
use crate::models::{
    fit_linear, train_cbrnet, train_drnet, train_mlp, CadrEstimator, CbrNetModel, DrNetModel,
    LinearModel, MlpModel, NetworkSpec, Penalty,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Linear,
    Mlp,
    DrNet,
    CbrNet(IpmKind),
}

impl EstimatorKind {
    /// Report identifier: `linear`, `mlp`, `drnet`, `cbrnet-<ipm>`.
    pub fn id(&self) -> String {
        match self {
            EstimatorKind::Linear => String::from("linear"),
            EstimatorKind::Mlp => String::from("mlp"),
            EstimatorKind::DrNet => String::from("drnet"),
            EstimatorKind::CbrNet(k) => format!("cbrnet-{}", k.name()),
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "linear" => Ok(EstimatorKind::Linear),
            "mlp" => Ok(EstimatorKind::Mlp),
            "drnet" => Ok(EstimatorKind::DrNet),
            other => match other.strip_prefix("cbrnet-") {
                Some(ipm) => Ok(EstimatorKind::CbrNet(IpmKind::from_name(ipm)?)),
                None => Err(invalid(format!(
                    "unknown estimator `{other}` (expected linear, mlp, drnet, cbrnet-<ipm>)"
                ))),
            },
        }
    }

    /// Stable small integer for seed derivation.
    pub fn code(&self) -> u64 {
        match self {
            EstimatorKind::Linear => 0,
            EstimatorKind::Mlp => 1,
            EstimatorKind::DrNet => 2,
            EstimatorKind::CbrNet(IpmKind::MmdLinear) => 3,
            EstimatorKind::CbrNet(IpmKind::MmdRbf { .. }) => 4,
            EstimatorKind::CbrNet(IpmKind::Wasserstein { .. }) => 5,
        }
    }

    pub fn ipm(&self) -> Option<IpmKind> {
        match self {
            EstimatorKind::CbrNet(k) => Some(*k),
            _ => None,
        }
    }
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Hyper {
    Linear { penalty: Penalty },
    Net { spec: NetworkSpec, lambda: f64 },
}

impl Hyper {
    pub fn lambda(&self) -> Option<f64> {
        match self {
            Hyper::Net { lambda, .. } => Some(*lambda),
            Hyper::Linear { .. } => None,
        }
    }
}

/// Axes of a network grid; the grid is their Cartesian product, in the
/// nesting order learning rate, batch size, hidden size, L2, λ.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetGrid {
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    /// Width of every hidden layer and of the representation.
    pub hidden_size: Vec<usize>,
    pub l2_penalty: Vec<f64>,
    /// Balancing weight; ignored by the baselines.
    #[cfg_attr(feature = "serde", serde(default = "zero_lambda"))]
    pub lambda: Vec<f64>,
}

#[cfg(feature = "serde")]
fn zero_lambda() -> Vec<f64> {
    alloc::vec![0.0]
}

impl NetGrid {
    /// Grid points built on top of `base`.
    pub fn points(&self, base: &NetworkSpec) -> Result<Vec<Hyper>> {
        let axes = [
            self.learning_rate.len(),
            self.batch_size.len(),
            self.hidden_size.len(),
            self.l2_penalty.len(),
            self.lambda.len(),
        ];
        if axes.contains(&0) {
            return Err(invalid("every grid axis needs at least one value"));
        }
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &batch_size in &self.batch_size {
                for &hidden in &self.hidden_size {
                    for &l2_penalty in &self.l2_penalty {
                        for &lambda in &self.lambda {
                            let spec = NetworkSpec {
                                learning_rate,
                                batch_size,
                                repr_hidden: hidden,
                                repr_dim: hidden,
                                inference_hidden: hidden,
                                l2_penalty,
                                ..*base
                            };
                            spec.validate()?;
                            out.push(Hyper::Net { spec, lambda });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A trained estimator of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Linear(LinearModel),
    Mlp(MlpModel),
    DrNet(DrNetModel),
    CbrNet(CbrNetModel),
}

impl CadrEstimator for TrainedModel {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Linear(m) => m.predict_batch(x, dose),
            TrainedModel::Mlp(m) => m.predict_batch(x, dose),
            TrainedModel::DrNet(m) => m.predict_batch(x, dose),
            TrainedModel::CbrNet(m) => m.predict_batch(x, dose),
        }
    }
}

/// Trains `kind` at one grid point. CBRNet needs the frozen clustering.
pub fn train_estimator(
    kind: &EstimatorKind,
    hyper: &Hyper,
    train: &Samples,
    delta: Option<&KMeansModel>,
) -> Result<TrainedModel> {
    match (kind, hyper) {
        (EstimatorKind::Linear, Hyper::Linear { penalty }) => {
            Ok(TrainedModel::Linear(fit_linear(train, *penalty)?))
        }
        (EstimatorKind::Mlp, Hyper::Net { spec, .. }) => Ok(TrainedModel::Mlp(train_mlp(train, spec)?)),
        (EstimatorKind::DrNet, Hyper::Net { spec, .. }) => {
            Ok(TrainedModel::DrNet(train_drnet(train, spec)?))
        }
        (EstimatorKind::CbrNet(ipm), Hyper::Net { spec, lambda }) => {
            let delta = delta.ok_or_else(|| invalid("CBRNet needs a fitted clustering"))?;
            Ok(TrainedModel::CbrNet(train_cbrnet(train, spec, *lambda, ipm, delta)?))
        }
        (k, h) => Err(invalid(format!("grid point {h:?} does not fit estimator {}", k.id()))),
    }
}

/// Outcome of a grid search.
#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub hyper: Hyper,
    pub model: TrainedModel,
    pub validation_mse: f64,
    /// Grid points that failed, with their errors.
    pub failures: Vec<(usize, Error)>,
}

/// Trains every grid point and keeps the one with the lowest validation
/// factual MSE (earliest point on ties). Network seeds come from
/// `seed_for(grid_index)`.
pub fn grid_search(
    train: &Samples,
    validation: &Samples,
    kind: &EstimatorKind,
    grid: &[Hyper],
    delta: Option<&KMeansModel>,
    seed_for: impl Fn(usize) -> u64,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(invalid("empty hyperparameter grid"));
    }
    let mut best: Option<Selection> = None;
    let mut failures = Vec::new();
    for (index, hyper) in grid.iter().enumerate() {
        let hyper = match *hyper {
            Hyper::Net { spec, lambda } => Hyper::Net {
                spec: NetworkSpec {
                    seed: seed_for(index),
                    ..spec
                },
                lambda,
            },
            h => h,
        };
        let scored = train_estimator(kind, &hyper, train, delta).and_then(|model| {
            let v = factual_mse(&model, validation)?;
            if v.is_finite() {
                Ok((model, v))
            } else {
                Err(Error::Divergence {
                    step: 0,
                    detail: String::from("non-finite validation MSE"),
                })
            }
        });
        match scored {
            Ok((model, v)) => {
                if best.as_ref().is_none_or(|b| v < b.validation_mse) {
                    best = Some(Selection {
                        index,
                        hyper,
                        model,
                        validation_mse: v,
                        failures: Vec::new(),
                    });
                }
            }
            Err(e) => {
                log::warn!("{} grid point {index} failed: {e}", kind.id());
                failures.push((index, e));
            }
        }
    }
    match best {
        Some(mut s) => {
            s.failures = failures;
            Ok(s)
        }
        None => Err(Error::AllDiverged(
            failures
                .iter()
                .map(|(i, e)| format!("#{i}: {e}"))
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}
