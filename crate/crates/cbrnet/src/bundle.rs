//! Dataset bundles: `covariates.csv`, `assignments.csv` and `oracle.json`.
//!
//! Cluster ids are one-based in files and zero-based in memory.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use cbrnet_core::dgp::{DgpConfig, GeneratedDataset, Oracle, CLUSTERS};
use cbrnet_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::text;

pub const COVARIATES_FILE: &str = "covariates.csv";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const ORACLE_FILE: &str = "oracle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Seed of the generating process; also seeds the train/validation/test
    /// split.
    pub dataset: u64,
}

/// Contents of `oracle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub weights: Weights,
    pub guard: f64,
    /// Modal dose of clusters 1, 2, 3.
    pub modal_doses: [f64; CLUSTERS],
    /// One-based cluster of each bean type, in `class_names` order.
    pub cluster_of_class: Vec<usize>,
    pub class_names: Vec<String>,
    /// Bean type of each row as an index into `class_names`.
    pub class_of_row: Vec<usize>,
    pub config: DgpConfig,
    pub seeds: Seeds,
    pub covariates: Covariates,
}

/// A dataset together with the names needed to write it back.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dataset: GeneratedDataset,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub covariates: Covariates,
}

impl Bundle {
    pub fn seed(&self) -> u64 {
        self.dataset.config.seed
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let d = &self.dataset;

        let mut w = csv::Writer::from_path(dir.join(COVARIATES_FILE))?;
        w.write_record(&self.feature_names)?;
        for row in d.covariates.row_iter() {
            w.write_record(row.iter().map(|&v| text::float(v)))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(ASSIGNMENTS_FILE))?;
        w.write_record(["row_id", "cluster", "dose", "outcome"])?;
        for i in 0..d.rows() {
            w.write_record([
                i.to_string(),
                (d.cluster[i] + 1).to_string(),
                text::float(d.dose[i]),
                text::float(d.outcome[i]),
            ])?;
        }
        w.flush()?;

        let [w1, w2, w3] = d.oracle.weights.clone();
        let oracle = OracleFile {
            weights: Weights { w1, w2, w3 },
            guard: d.oracle.guard,
            modal_doses: d.modal_doses,
            cluster_of_class: d.cluster_of_label.iter().map(|c| c + 1).collect(),
            class_names: self.class_names.clone(),
            class_of_row: d.labels.clone(),
            config: d.config,
            seeds: Seeds { dataset: d.config.seed },
            covariates: self.covariates.clone(),
        };
        fs::write(dir.join(ORACLE_FILE), serde_json::to_string_pretty(&oracle)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(ORACLE_FILE);
        let oracle: OracleFile = serde_json::from_str(
            &fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?;

        let path = dir.join(COVARIATES_FILE);
        let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let feature_names: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
            for (j, v) in rec.iter().enumerate() {
                data.push(text::parse_float(v, || {
                    format!("{}: row {}, column `{}`", path.display(), i + 1, feature_names[j])
                })?);
            }
            rows += 1;
        }
        let covariates = Matrix::from_vec(rows, feature_names.len(), data)?;

        let path = dir.join(ASSIGNMENTS_FILE);
        let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        ensure!(
            r.headers()?.iter().eq(["row_id", "cluster", "dose", "outcome"]),
            "{}: expected columns row_id, cluster, dose, outcome",
            path.display()
        );
        let (mut cluster, mut dose, mut outcome) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
            let at = |col: &str| format!("{}: row {}, column `{col}`", path.display(), i + 1);
            ensure!(rec[0].parse::<usize>().ok() == Some(i), "{}: row ids must run 0, 1, 2, ...", at("row_id"));
            match rec[1].parse::<usize>() {
                Ok(c) if (1..=CLUSTERS).contains(&c) => cluster.push(c - 1),
                _ => bail!("{}: cluster must be 1..={CLUSTERS}, got `{}`", at("cluster"), &rec[1]),
            }
            dose.push(text::parse_float(&rec[2], || at("dose"))?);
            outcome.push(text::parse_float(&rec[3], || at("outcome"))?);
        }
        ensure!(
            dose.len() == rows && oracle.class_of_row.len() == rows,
            "bundle row counts disagree: {rows} covariate rows, {} assignments, {} class labels",
            dose.len(),
            oracle.class_of_row.len()
        );
        let cluster_of_label: Vec<usize> = oracle.cluster_of_class.iter().map(|c| c.saturating_sub(1)).collect();
        for (i, (&l, &c)) in oracle.class_of_row.iter().zip(&cluster).enumerate() {
            ensure!(
                cluster_of_label.get(l) == Some(&c),
                "row {i}: cluster {} does not match its bean type",
                c + 1
            );
        }
        let w = oracle.weights;
        Ok(Bundle {
            dataset: GeneratedDataset {
                covariates,
                dose,
                outcome,
                cluster,
                labels: oracle.class_of_row,
                cluster_of_label,
                modal_doses: oracle.modal_doses,
                oracle: Oracle {
                    weights: [w.w1, w.w2, w.w3],
                    guard: oracle.guard,
                },
                config: oracle.config,
            },
            feature_names,
            class_names: oracle.class_names,
            covariates: oracle.covariates,
        })
    }
}
