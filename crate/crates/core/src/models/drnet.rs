use alloc::vec;
use alloc::vec::Vec;

use crate::adam::{Adam, AdamConfig};
use crate::autodiff::{elu, Tape, Var};
use crate::dgp::Samples;
use crate::error::{invalid, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::nn::{BoundDense, Dense, FeedForward};
use crate::rng::{self, Rng};

use super::{
    add_weight_decay, check_inputs, check_training_data, divergence, dose_column, BatchSchedule,
    CadrEstimator, NetworkSpec, StepLoss, TargetScale,
};

/// Number of dose strata, one head each.
pub const STRATA: usize = 10;

/// Head owning dose `s`: `min(⌊10 s⌋, 9)`.
pub fn stratum(s: f64) -> usize {
    (math::floor(s * STRATA as f64).max(0.0) as usize).min(STRATA - 1)
}

/// A stratum head. The dose is appended to the input of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseHead {
    pub layers: Vec<Dense>,
}

impl DoseHead {
    fn new(input: usize, hidden: usize, depth: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut width = input;
        for _ in 0..depth {
            layers.push(Dense::glorot(width + 1, hidden, rng));
            width = hidden;
        }
        layers.push(Dense::glorot(width + 1, 1, rng));
        Self { layers }
    }

    fn bind(&self, tape: &mut Tape) -> Vec<BoundDense> {
        self.layers
            .iter()
            .map(|l| BoundDense {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
            })
            .collect()
    }

    fn forward(&self, tape: &mut Tape, bound: &[BoundDense], h: Var, s: Var) -> Result<Var> {
        let last = bound.len() - 1;
        let mut h = h;
        for (i, b) in bound.iter().enumerate() {
            let joint = tape.concat_cols(h, s)?;
            h = tape.affine(joint, b.weight, b.bias)?;
            if i < last {
                h = tape.elu(h);
            }
        }
        Ok(h)
    }

    fn predict(&self, h: &Matrix, s: &Matrix) -> Result<Matrix> {
        let last = self.layers.len() - 1;
        let mut h = h.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.concat_cols(s)?.affine(&l.weight, &l.bias)?;
            if i < last {
                h.as_mut_slice().iter_mut().for_each(|v| *v = elu(*v));
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// Shared trunk on `x` and ten dose-stratum heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DrNetModel {
    pub spec: NetworkSpec,
    pub trunk: FeedForward,
    pub heads: Vec<DoseHead>,
    pub scale: TargetScale,
    pub history: Vec<StepLoss>,
}

fn rows_by_stratum(dose: &[f64], rows: impl Iterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); STRATA];
    for (pos, i) in rows.enumerate() {
        out[stratum(dose[i])].push(pos);
    }
    out
}

impl DrNetModel {
    /// Untrained network with Glorot weights.
    pub fn new(spec: &NetworkSpec, input: usize) -> Result<Self> {
        spec.validate()?;
        if spec.repr_layers == 0 {
            return Err(invalid("DRNet needs at least one trunk layer"));
        }
        let mut rng = rng::stream(spec.seed, "init");
        let trunk = FeedForward::new(&spec.repr_sizes(input), true, &mut rng)?;
        let width = trunk.output_dim(input);
        let heads = (0..STRATA)
            .map(|_| DoseHead::new(width, spec.inference_hidden, spec.inference_layers, &mut rng))
            .collect();
        Ok(Self {
            spec: *spec,
            trunk,
            heads,
            scale: TargetScale::identity(),
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.trunk
            .params()
            .chain(self.heads.iter().flat_map(DoseHead::params))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.trunk
            .params_mut()
            .chain(self.heads.iter_mut().flat_map(DoseHead::params_mut))
    }
}

pub fn train_drnet(train: &Samples, spec: &NetworkSpec) -> Result<DrNetModel> {
    check_training_data(&train.x, &train.dose, &train.outcome)?;
    let mut model = DrNetModel::new(spec, train.x.cols())?;
    model.scale = TargetScale::fit(&train.outcome);
    let target: Vec<f64> = train.outcome.iter().map(|&y| model.scale.forward(y)).collect();
    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(spec.learning_rate),
        model.params().map(Matrix::shape),
    )?;
    let mut batches = BatchSchedule::new(train.len(), spec.batch_size, rng::stream(spec.seed, "batches"));
    let trunk_params = 2 * model.trunk.layers.len();
    let head_params = 2 * model.heads[0].layers.len();
    let mut history: Vec<StepLoss> = Vec::with_capacity(spec.training_steps);

    for step in 1..=spec.training_steps {
        let rows = batches.next_batch();
        let mut tape = Tape::new();
        let trunk = model.trunk.bind(&mut tape);
        let heads: Vec<Vec<BoundDense>> = model.heads.iter().map(|h| h.bind(&mut tape)).collect();
        let x = tape.constant(train.x.select_rows(&rows));
        let h = model.trunk.forward(&mut tape, &trunk, x)?;

        let mut sse: Option<Var> = None;
        for (k, members) in rows_by_stratum(&train.dose, rows.iter().copied()).iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let hk = tape.select_rows(h, members)?;
            let sk = tape.constant(dose_column(&members.iter().map(|&p| train.dose[rows[p]]).collect::<Vec<_>>()));
            let yk = Matrix::column(&members.iter().map(|&p| target[rows[p]]).collect::<Vec<_>>());
            let pred = model.heads[k].forward(&mut tape, &heads[k], hk, sk)?;
            let part = tape.sse(pred, &yk)?;
            sse = Some(match sse {
                Some(t) => tape.add(t, part)?,
                None => part,
            });
        }
        let loss = tape.scale(sse.expect("nonempty batch"), 1.0 / rows.len() as f64);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(divergence(step, history.last(), "non-finite loss"));
        }
        tape.backward(loss)?;

        let mut grads = Vec::new();
        FeedForward::collect_grads(&tape, &trunk, &mut grads);
        for b in &heads {
            FeedForward::collect_grads(&tape, b, &mut grads);
        }
        add_weight_decay(&mut grads[..trunk_params], model.trunk.params(), spec.l2_penalty);
        for (k, head) in model.heads.iter().enumerate() {
            let at = trunk_params + k * head_params;
            add_weight_decay(&mut grads[at..at + head_params], head.params(), spec.l2_penalty);
        }
        adam.step(model.params_mut(), &grads).map_err(|e| match e {
            crate::Error::Divergence { .. } => divergence(step, history.last(), "non-finite gradient"),
            other => other,
        })?;
        history.push(StepLoss {
            mse: value,
            ipm: 0.0,
            total: value,
        });
    }
    model.history = history;
    Ok(model)
}

impl CadrEstimator for DrNetModel {
    fn predict_batch(&self, x: &Matrix, dose: &[f64]) -> Result<Vec<f64>> {
        check_inputs(x, dose)?;
        let h = self.trunk.predict(x)?;
        let mut out = vec![0.0; dose.len()];
        for (k, members) in rows_by_stratum(dose, 0..dose.len()).iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let s = dose_column(&members.iter().map(|&i| dose[i]).collect::<Vec<_>>());
            let pred = self.heads[k].predict(&h.select_rows(members), &s)?;
            for (&i, &z) in members.iter().zip(pred.as_slice()) {
                out[i] = self.scale.inverse(z);
            }
        }
        Ok(out)
    }
}
