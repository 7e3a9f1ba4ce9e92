//! Model checkpoints: `model.json` describes the estimator, `params.txt`
//! holds its tensors.
//!
//! `params.txt` is plain text. Lines starting with `#` are comments. Each
//! tensor is a header line `<rows> <cols>` followed by `rows` lines of
//! `cols` space-separated floats with 17 significant digits. Tensors come
//! in network order, weight before bias for every layer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use cbrnet_core::clustering::KMeansModel;
use cbrnet_core::ipm::IpmKind;
use cbrnet_core::models::{
    CbrNetModel, DoseNet, DrNetModel, LinearModel, MlpModel, NetworkSpec, Penalty, TargetScale,
};
use cbrnet_core::select::{EstimatorKind, TrainedModel};
use cbrnet_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::text;

pub const MODEL_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.txt";
pub const FORMAT_VERSION: u32 = 1;

/// Everything about a trained estimator except its tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub format: u32,
    pub model_id: String,
    pub input_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipm: Option<IpmKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<Penalty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<TargetScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<KMeansModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_cluster: Option<usize>,
    pub tensors: usize,
}

pub fn model_id(model: &TrainedModel) -> String {
    match model {
        TrainedModel::Linear(_) => EstimatorKind::Linear.id(),
        TrainedModel::Mlp(_) => EstimatorKind::Mlp.id(),
        TrainedModel::DrNet(_) => EstimatorKind::DrNet.id(),
        TrainedModel::CbrNet(m) => EstimatorKind::CbrNet(m.ipm).id(),
    }
}

fn card_and_tensors(model: &TrainedModel) -> (ModelCard, Vec<Matrix>) {
    let mut card = ModelCard {
        format: FORMAT_VERSION,
        model_id: model_id(model),
        input_dim: 0,
        spec: None,
        lambda: None,
        ipm: None,
        penalty: None,
        scale: None,
        clustering: None,
        base_cluster: None,
        tensors: 0,
    };
    let tensors: Vec<Matrix> = match model {
        TrainedModel::Linear(m) => {
            card.input_dim = m.coefficients.len() - 2;
            card.penalty = Some(m.penalty);
            vec![Matrix::column(&m.coefficients)]
        }
        TrainedModel::Mlp(m) => {
            card.input_dim = m.net.input_dim();
            card.spec = Some(m.spec);
            card.scale = Some(m.net.scale);
            m.net.params().cloned().collect()
        }
        TrainedModel::DrNet(m) => {
            card.input_dim = m.trunk.layers[0].inputs();
            card.spec = Some(m.spec);
            card.scale = Some(m.scale);
            m.params().cloned().collect()
        }
        TrainedModel::CbrNet(m) => {
            card.input_dim = m.net.input_dim();
            card.spec = Some(m.spec);
            card.scale = Some(m.net.scale);
            card.lambda = Some(m.lambda);
            card.ipm = Some(m.ipm);
            card.clustering = Some(m.delta.clone());
            card.base_cluster = Some(m.base_cluster);
            m.net.params().cloned().collect()
        }
    };
    card.tensors = tensors.len();
    (card, tensors)
}

pub fn format_tensors(tensors: &[Matrix]) -> String {
    let mut out = format!("# {} tensors\n", tensors.len());
    for t in tensors {
        let _ = writeln!(out, "{} {}", t.rows(), t.cols());
        for row in t.row_iter() {
            let line: Vec<String> = row.iter().map(|&v| text::float(v)).collect();
            out += &line.join(" ");
            out.push('\n');
        }
    }
    out
}

pub fn parse_tensors(raw: &str) -> Result<Vec<Matrix>> {
    let mut lines = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let mut out = Vec::new();
    while let Some((no, header)) = lines.next() {
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| anyhow!("line {}: expected `<rows> <cols>`, got `{header}`", no + 1))?;
        let &[rows, cols] = dims.as_slice() else {
            bail!("line {}: expected `<rows> <cols>`, got `{header}`", no + 1);
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (no, line) = lines
                .next()
                .ok_or_else(|| anyhow!("tensor {} ends early", out.len()))?;
            let before = data.len();
            for v in line.split_whitespace() {
                data.push(text::parse_float(v, || format!("line {}", no + 1))?);
            }
            ensure!(
                data.len() - before == cols,
                "line {}: expected {cols} values, got {}",
                no + 1,
                data.len() - before
            );
        }
        out.push(Matrix::from_vec(rows, cols, data)?);
    }
    Ok(out)
}

pub fn save(model: &TrainedModel, dir: &Path) -> Result<ModelCard> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (card, tensors) = card_and_tensors(model);
    fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&card)? + "\n")?;
    fs::write(dir.join(PARAMS_FILE), format_tensors(&tensors))?;
    Ok(card)
}

fn fill<'a>(dst: impl Iterator<Item = &'a mut Matrix>, src: Vec<Matrix>) -> Result<()> {
    let mut src = src.into_iter();
    for (i, d) in dst.enumerate() {
        let s = src.next().ok_or_else(|| anyhow!("missing tensor {i}"))?;
        ensure!(
            s.shape() == d.shape(),
            "tensor {i}: shape {:?} does not fit the architecture's {:?}",
            s.shape(),
            d.shape()
        );
        *d = s;
    }
    ensure!(src.next().is_none(), "more tensors than the architecture has");
    Ok(())
}

pub fn load(dir: &Path) -> Result<(ModelCard, TrainedModel)> {
    let path = dir.join(MODEL_FILE);
    let card: ModelCard = serde_json::from_str(
        &fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
    )
    .with_context(|| format!("parsing {}", path.display()))?;
    ensure!(card.format == FORMAT_VERSION, "unsupported checkpoint format {}", card.format);
    let path = dir.join(PARAMS_FILE);
    let tensors = parse_tensors(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)
        .with_context(|| format!("parsing {}", path.display()))?;
    ensure!(tensors.len() == card.tensors, "{} tensors, card says {}", tensors.len(), card.tensors);

    let need = |what: &str| anyhow!("{} checkpoint lacks `{what}`", card.model_id);
    let kind = EstimatorKind::parse(&card.model_id)?;
    let model = match kind {
        EstimatorKind::Linear => {
            let t = tensors.into_iter().next().ok_or_else(|| need("coefficients"))?;
            ensure!(t.cols() == 1 && t.rows() == card.input_dim + 2, "linear coefficients have shape {:?}", t.shape());
            TrainedModel::Linear(LinearModel {
                coefficients: t.as_slice().to_vec(),
                penalty: card.penalty.ok_or_else(|| need("penalty"))?,
            })
        }
        EstimatorKind::Mlp | EstimatorKind::CbrNet(_) => {
            let spec = card.spec.ok_or_else(|| need("spec"))?;
            let mut net = DoseNet::new(&spec, card.input_dim)?;
            fill(net.params_mut(), tensors)?;
            net.scale = card.scale.ok_or_else(|| need("scale"))?;
            if let EstimatorKind::CbrNet(ipm) = kind {
                TrainedModel::CbrNet(CbrNetModel {
                    spec,
                    net,
                    delta: card.clustering.clone().ok_or_else(|| need("clustering"))?,
                    lambda: card.lambda.ok_or_else(|| need("lambda"))?,
                    ipm: card.ipm.unwrap_or(ipm),
                    base_cluster: card.base_cluster.ok_or_else(|| need("base_cluster"))?,
                    history: Vec::new(),
                    steps_per_epoch: 0,
                })
            } else {
                TrainedModel::Mlp(MlpModel {
                    spec,
                    net,
                    history: Vec::new(),
                })
            }
        }
        EstimatorKind::DrNet => {
            let spec = card.spec.ok_or_else(|| need("spec"))?;
            let mut m = DrNetModel::new(&spec, card.input_dim)?;
            fill(m.params_mut(), tensors)?;
            m.scale = card.scale.ok_or_else(|| need("scale"))?;
            TrainedModel::DrNet(m)
        }
    };
    Ok((card, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_text_round_trip() {
        let a = Matrix::from_rows(&[[0.1, -2.0 / 3.0, 1e-300], [5.0, 0.0, -0.0]]);
        let b = Matrix::from_rows(&[[std::f64::consts::PI]]);
        let raw = format_tensors(&[a.clone(), b.clone()]);
        assert!(raw.lines().nth(1) == Some("2 3"));
        let back = parse_tensors(&raw).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in back[0].as_slice().iter().zip(a.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back[1], b);
    }

    #[test]
    fn malformed_tensors() {
        assert!(parse_tensors("2 2\n1 2\n").is_err());
        assert!(parse_tensors("1 2\n1 2 3\n").is_err());
        assert!(parse_tensors("1\n1\n").is_err());
        let e = parse_tensors("1 1\nabc\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }
}
