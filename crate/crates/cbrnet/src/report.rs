//! CSV writers for experiment results. Metrics are written with 17
//! significant digits, configuration values in their shortest exact form,
//! and missing values as `NA`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cbrnet_core::models::Penalty;
use cbrnet_core::select::Hyper;
use cbrnet_core::Matrix;

use crate::config::SweepKind;
use crate::experiment::{Failure, ResultRow, Summary};
use crate::text::{self, float, optional, short};

pub const REPORT_FILE: &str = "report.csv";
pub const SELECTIONS_FILE: &str = "selections.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const REPRESENTATIONS_FILE: &str = "representations.csv";
pub const DOSE_CURVES_FILE: &str = "dose_curves.csv";

pub const REPORT_HEADER: [&str; 11] = [
    "model_id",
    "dataset_seed",
    "alpha",
    "beta",
    "lambda",
    "ipm",
    "k",
    "mise",
    "factual_mse",
    "grid_size",
    "train_seconds",
];

pub const CURVES_HEADER: [&str; 9] = [
    "sweep",
    "model_id",
    "ipm",
    "value",
    "repetition",
    "dataset_seed",
    "mise",
    "factual_mse",
    "final_ipm",
];

fn na() -> String {
    String::from("NA")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_report(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.model_id.clone(),
            r.dataset_seed.to_string(),
            short(r.alpha),
            short(r.beta),
            optional(r.lambda),
            r.ipm.map_or_else(na, String::from),
            r.k.map_or_else(na, |k| k.to_string()),
            float(r.mise),
            float(r.factual_mse),
            r.grid_size.to_string(),
            r.train_seconds.map_or_else(na, float),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed line of `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub model_id: String,
    pub dataset_seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: Option<f64>,
    pub ipm: Option<String>,
    pub k: Option<usize>,
    pub mise: f64,
    pub factual_mse: f64,
    pub grid_size: usize,
    pub train_seconds: Option<f64>,
}

fn opt<T>(s: &str, parse: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if s == "NA" {
        Ok(None)
    } else {
        parse(s).map(Some)
    }
}

pub fn read_report(path: &Path) -> Result<Vec<ReportLine>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    if r.headers()?.iter().ne(REPORT_HEADER) {
        bail!("{}: unexpected header {:?}", path.display(), r.headers()?);
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = |c: usize| format!("{} line {} column {}", path.display(), i + 2, REPORT_HEADER[c]);
        let f = |c: usize| text::parse_float(&rec[c], || at(c));
        let u = |c: usize| rec[c].parse::<u64>().with_context(|| at(c));
        out.push(ReportLine {
            model_id: rec[0].to_string(),
            dataset_seed: u(1)?,
            alpha: f(2)?,
            beta: f(3)?,
            lambda: opt(&rec[4], |_| f(4))?,
            ipm: opt(&rec[5], |s| Ok(s.to_string()))?,
            k: opt(&rec[6], |_| Ok(u(6)? as usize))?,
            mise: f(7)?,
            factual_mse: f(8)?,
            grid_size: u(9)? as usize,
            train_seconds: opt(&rec[10], |_| f(10))?,
        });
    }
    Ok(out)
}

/// Which grid point won, per estimator and dataset.
pub fn write_selections(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "model_id",
        "alpha",
        "beta",
        "repetition",
        "dataset_seed",
        "grid_index",
        "validation_mse",
        "learning_rate",
        "batch_size",
        "hidden_size",
        "l2_penalty",
        "lambda",
        "penalty",
    ])?;
    for r in rows {
        let (Some(index), Some(hyper), Some(v)) = (r.grid_index, r.hyper, r.validation_mse) else {
            continue;
        };
        let net = |f: &dyn Fn(&cbrnet_core::models::NetworkSpec) -> String| match &hyper {
            Hyper::Net { spec, .. } => f(spec),
            Hyper::Linear { .. } => na(),
        };
        let penalty = match hyper {
            Hyper::Linear { penalty: Penalty::None } => String::from("none"),
            Hyper::Linear { penalty: Penalty::Ridge(l) } => format!("ridge({})", short(l)),
            Hyper::Net { .. } => na(),
        };
        w.write_record([
            r.model_id.clone(),
            short(r.alpha),
            short(r.beta),
            r.repetition.to_string(),
            r.dataset_seed.to_string(),
            index.to_string(),
            float(v),
            net(&|s| short(s.learning_rate)),
            net(&|s| s.batch_size.to_string()),
            net(&|s| s.repr_hidden.to_string()),
            net(&|s| short(s.l2_penalty)),
            optional(match (&r.model_id[..], hyper.lambda()) {
                (id, l) if id.starts_with("cbrnet") => l,
                _ => None,
            }),
            penalty,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, summary: &[Summary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model_id", "alpha", "beta", "lambda", "k", "n", "mise_mean", "mise_std", "mise_se"])?;
    for s in summary {
        w.write_record([
            s.model_id.clone(),
            short(s.alpha),
            short(s.beta),
            optional(s.lambda),
            s.k.map_or_else(na, |k| k.to_string()),
            s.n.to_string(),
            float(s.mise_mean),
            float(s.mise_std),
            float(s.mise_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One point of a λ or k sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub sweep: SweepKind,
    pub model_id: String,
    pub ipm: String,
    /// λ or k.
    pub value: f64,
    pub repetition: usize,
    pub dataset_seed: u64,
    pub mise: f64,
    pub factual_mse: f64,
    pub final_ipm: f64,
}

impl CurvePoint {
    pub fn from_row(sweep: SweepKind, r: &ResultRow) -> Option<Self> {
        let value = match sweep {
            SweepKind::Lambda => r.lambda?,
            SweepKind::Clusters => r.k? as f64,
            SweepKind::Benchmark => return None,
        };
        Some(Self {
            sweep,
            model_id: r.model_id.clone(),
            ipm: r.ipm?.to_string(),
            value,
            repetition: r.repetition,
            dataset_seed: r.dataset_seed,
            mise: r.mise,
            factual_mse: r.factual_mse,
            final_ipm: r.final_ipm?,
        })
    }
}

fn sweep_name(s: SweepKind) -> &'static str {
    match s {
        SweepKind::Benchmark => "benchmark",
        SweepKind::Lambda => "lambda",
        SweepKind::Clusters => "clusters",
    }
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CURVES_HEADER)?;
    for p in points {
        w.write_record([
            sweep_name(p.sweep).to_string(),
            p.model_id.clone(),
            p.ipm.clone(),
            short(p.value),
            p.repetition.to_string(),
            p.dataset_seed.to_string(),
            float(p.mise),
            float(p.factual_mse),
            float(p.final_ipm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    if r.headers()?.iter().ne(CURVES_HEADER) {
        bail!("{}: unexpected header {:?}", path.display(), r.headers()?);
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = |c: usize| format!("{} line {} column {}", path.display(), i + 2, CURVES_HEADER[c]);
        let f = |c: usize| text::parse_float(&rec[c], || at(c));
        let sweep = match &rec[0] {
            "lambda" => SweepKind::Lambda,
            "clusters" => SweepKind::Clusters,
            other => bail!("{}: unknown sweep `{other}`", at(0)),
        };
        out.push(CurvePoint {
            sweep,
            model_id: rec[1].to_string(),
            ipm: rec[2].to_string(),
            value: f(3)?,
            repetition: rec[4].parse().with_context(|| at(4))?,
            dataset_seed: rec[5].parse().with_context(|| at(5))?,
            mise: f(6)?,
            factual_mse: f(7)?,
            final_ipm: f(8)?,
        });
    }
    Ok(out)
}

pub fn write_failures(path: &Path, failures: &[Failure]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model_id", "alpha", "beta", "repetition", "dataset_seed", "error"])?;
    for f in failures {
        w.write_record([
            f.model_id.clone(),
            short(f.alpha),
            short(f.beta),
            f.repetition.to_string(),
            f.dataset_seed.to_string(),
            f.error.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `row_id, z1..zd, dose, cluster` with one-based clusters.
pub fn write_representations(path: &Path, row_ids: &[usize], repr: &Matrix, dose: &[f64], clusters: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![String::from("row_id")];
    header.extend((1..=repr.cols()).map(|j| format!("z{j}")));
    header.extend([String::from("dose"), String::from("cluster")]);
    w.write_record(&header)?;
    for (i, z) in repr.row_iter().enumerate() {
        let mut rec = vec![row_ids[i].to_string()];
        rec.extend(z.iter().map(|&v| float(v)));
        rec.push(float(dose[i]));
        rec.push((clusters[i] + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Estimated and true dose-response curves of selected test units.
pub fn write_dose_curves(path: &Path, curves: &[(usize, Vec<(f64, f64, f64)>)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["row_id", "dose", "estimate", "truth"])?;
    for (row, points) in curves {
        for (s, est, truth) in points {
            w.write_record([row.to_string(), float(*s), float(*est), float(*truth)])?;
        }
    }
    w.flush()?;
    Ok(())
}
