use alloc::format;
use alloc::vec::Vec;

use crate::adam::{Adam, AdamConfig};
use crate::autodiff::{Tape, Var};
use crate::clustering::KMeansModel;
use crate::dgp::Samples;
use crate::error::{invalid, Result};
use crate::ipm::{cluster_balance_loss, IpmKind};
use crate::matrix::Matrix;
use crate::nn::FeedForward;
use crate::rng;

use super::{
    add_weight_decay, check_inputs, check_training_data, divergence, dose_column, BatchSchedule,
    CadrEstimator, NetworkSpec, TargetScale,
};

/// Losses recorded after one optimizer step, on the standardized target
/// scale. `total = mse + λ·ipm`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLoss {
    pub mse: f64,
    pub ipm: f64,
    pub total: f64,
}

/// Φ followed by the inference network I on `[Φ(x); s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseNet {
    pub phi: FeedForward,
    pub inference: FeedForward,
    pub scale: TargetScale,
}

impl DoseNet {
    /// Glorot-initialized network for `input` covariates.
    pub fn new(spec: &NetworkSpec, input: usize) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, "init");
        let phi = FeedForward::new(&spec.repr_sizes(input), true, &mut rng)?;
        let rep = phi.output_dim(input);
        let mut sizes = Vec::with_capacity(spec.inference_layers + 2);
        sizes.push(rep + 1);
        sizes.extend(core::iter::repeat(spec.inference_hidden).take(spec.inference_layers));
        sizes.push(1);
        let inference = FeedForward::new(&sizes, false, &mut rng)?;
        Ok(Self {
            phi,
            inference,
            scale: TargetScale::identity(),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self.phi.layers.first() {
            Some(l) => l.inputs(),
            None => self.inference.layers[0].inputs() - 1,
        }
    }

    /// Φ(x) without gradients.
    pub fn represent(&self, x: &Matrix) -> Result<Matrix> {
        self.phi.predict(x)
    }

    /// Standardized-scale predictions.
    fn raw(&self, x: &Matrix, dose: &[f64]) -> Result<Matrix> {
        let rep = self.phi.predict(x)?;
        self.inference.predict(&rep.concat_cols(&dose_column(dose))?)
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.phi.params().chain(self.inference.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.phi.params_mut().chain(self.inference.params_mut())
    }

    /// Sum of squares of every weight matrix.
    pub fn weight_norm_sq(&self) -> f64 {
        self.phi
            .layers
            .iter()
            .chain(&self.inference.layers)
            .map(|l| l.weight.sum_squares())
            .sum()
    }
}

impl CadrEstimator for DoseNet {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        check_inputs(x, dose)?;
        Ok(self
            .raw(x, dose)?
            .as_slice()
            .iter()
            .map(|&z| self.scale.inverse(z))
            .collect())
    }
}

struct Balance<'a> {
    clusters: &'a [usize],
    ipm: &'a IpmKind,
    lambda: f64,
    base: usize,
}

/// The shared optimization loop. Returns the trained net and per-step
/// losses.
fn fit_dosenet(
    train: &Samples,
    spec: &NetworkSpec,
    balance: Option<Balance<'_>>,
) -> Result<(DoseNet, Vec<StepLoss>)> {
    check_training_data(&train.x, &train.dose, &train.outcome)?;
    let mut net = DoseNet::new(spec, train.x.cols())?;
    net.scale = TargetScale::fit(&train.outcome);
    let target: Vec<f64> = train.outcome.iter().map(|&y| net.scale.forward(y)).collect();

    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(spec.learning_rate),
        net.params().map(Matrix::shape),
    )?;
    let mut batches = BatchSchedule::new(train.len(), spec.batch_size, rng::stream(spec.seed, "batches"));
    let mut history: Vec<StepLoss> = Vec::with_capacity(spec.training_steps);
    let mut grads = Vec::new();

    for step in 1..=spec.training_steps {
        let rows = batches.next_batch();
        let mut tape = Tape::new();
        let phi = net.phi.bind(&mut tape);
        let inf = net.inference.bind(&mut tape);
        let x = tape.constant(train.x.select_rows(&rows));
        let s = tape.constant(Matrix::column(&rows.iter().map(|&i| train.dose[i]).collect::<Vec<_>>()));
        let y = Matrix::column(&rows.iter().map(|&i| target[i]).collect::<Vec<_>>());

        let rep = net.phi.forward(&mut tape, &phi, x)?;
        let joint = tape.concat_cols(rep, s)?;
        let pred = net.inference.forward(&mut tape, &inf, joint)?;
        let mse = tape.mse(pred, &y)?;

        let mut loss: Var = mse;
        let mut ipm_value = 0.0;
        if let Some(b) = &balance {
            let ids: Vec<usize> = rows.iter().map(|&i| b.clusters[i]).collect();
            let ipm = cluster_balance_loss(&mut tape, rep, &ids, b.ipm, b.base)?;
            ipm_value = tape.value(ipm).item();
            if b.lambda != 0.0 {
                let weighted = tape.scale(ipm, b.lambda);
                loss = tape.add(mse, weighted)?;
            }
        }
        let record = StepLoss {
            mse: tape.value(mse).item(),
            ipm: ipm_value,
            total: tape.value(loss).item(),
        };
        if !(record.mse.is_finite() && record.ipm.is_finite() && record.total.is_finite()) {
            return Err(divergence(step, history.last(), "non-finite loss"));
        }

        tape.backward(loss)?;
        grads.clear();
        FeedForward::collect_grads(&tape, &phi, &mut grads);
        FeedForward::collect_grads(&tape, &inf, &mut grads);
        add_weight_decay(&mut grads[..2 * net.phi.layers.len()], net.phi.params(), spec.l2_penalty);
        add_weight_decay(&mut grads[2 * net.phi.layers.len()..], net.inference.params(), spec.l2_penalty);
        adam.step(net.params_mut(), &grads).map_err(|e| match e {
            crate::Error::Divergence { .. } => divergence(step, history.last(), "non-finite gradient"),
            other => other,
        })?;
        history.push(record);
    }
    Ok((net, history))
}

/// Plain feed-forward regression on `[x; s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: NetworkSpec,
    pub net: DoseNet,
    pub history: Vec<StepLoss>,
}

/// Trains the MLP baseline. `spec.repr_*` are ignored: the network is the
/// inference stack applied directly to `[x; s]`.
pub fn train_mlp(train: &Samples, spec: &NetworkSpec) -> Result<MlpModel> {
    let spec = NetworkSpec {
        repr_layers: 0,
        ..*spec
    };
    let (net, history) = fit_dosenet(train, &spec, None)?;
    Ok(MlpModel { spec, net, history })
}

impl CadrEstimator for MlpModel {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        self.net.predict_batch(x, dose)
    }
}

/// CBRNet: representation Φ, frozen clustering Δ over `(x, s)`, and the
/// inference network, trained on `MSE + λ · balance(Φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbrNetModel {
    pub spec: NetworkSpec,
    pub net: DoseNet,
    pub delta: KMeansModel,
    pub lambda: f64,
    pub ipm: IpmKind,
    pub base_cluster: usize,
    pub history: Vec<StepLoss>,
    /// Mini-batches per pass over the training rows.
    pub steps_per_epoch: usize,
}

pub fn train_cbrnet(
    train: &Samples,
    spec: &NetworkSpec,
    lambda: f64,
    ipm: &IpmKind,
    delta: &KMeansModel,
) -> Result<CbrNetModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    ipm.validate()?;
    if delta.centroids.cols() != train.x.cols() + 1 {
        return Err(invalid(format!(
            "clustering fitted on {} joint columns, data has {} covariates",
            delta.centroids.cols(),
            train.x.cols()
        )));
    }
    let clusters = delta.assign_batch(&train.x, &train.dose);
    let counts = delta.counts(&clusters);
    let mut base = 0;
    for (c, &m) in counts.iter().enumerate() {
        if m > counts[base] {
            base = c;
        }
    }
    let (net, history) = fit_dosenet(
        train,
        spec,
        Some(Balance {
            clusters: &clusters,
            ipm,
            lambda,
            base,
        }),
    )?;
    Ok(CbrNetModel {
        spec: *spec,
        net,
        delta: delta.clone(),
        lambda,
        ipm: *ipm,
        base_cluster: base,
        history,
        steps_per_epoch: train.len().div_ceil(spec.batch_size.min(train.len())),
    })
}

impl CbrNetModel {
    /// Mean batch IPM over the last epoch of training.
    pub fn final_epoch_ipm(&self) -> f64 {
        let k = self.steps_per_epoch.min(self.history.len()).max(1);
        let tail = &self.history[self.history.len().saturating_sub(k)..];
        tail.iter().map(|l| l.ipm).sum::<f64>() / tail.len().max(1) as f64
    }

    /// Δ cluster of each row.
    pub fn clusters(&self, x: &Matrix, dose: &[f64]) -> Vec<usize> {
        self.delta.assign_batch(x, dose)
    }
}

impl CadrEstimator for CbrNetModel {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        self.net.predict_batch(x, dose)
    }
}
