//! Covariate sources: the dry-bean CSV or the synthetic stand-in.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cbrnet_core::dgp::{synth_covariates, CovariateTable};
use cbrnet_core::Matrix;
use serde::{Deserialize, Serialize};

/// Environment variable overriding the default dry-bean path.
pub const DATA_ENV: &str = "CADR_DATA";
pub const DEFAULT_DATA_PATH: &str = "data/Dry_Bean_Dataset.csv";
/// Row count of the public dry-bean table.
pub const DRY_BEAN_ROWS: usize = 13_611;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Covariates {
    /// The dry-bean CSV. Without a path, `CADR_DATA` and then
    /// [`DEFAULT_DATA_PATH`] are tried.
    DryBean {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
    /// Class-structured synthetic covariates with the dry-bean shape.
    Synthetic { rows: usize, seed: u64 },
}

impl Default for Covariates {
    fn default() -> Self {
        Covariates::DryBean { path: None }
    }
}

impl Covariates {
    pub fn synthetic() -> Self {
        Covariates::Synthetic {
            rows: DRY_BEAN_ROWS,
            seed: 0,
        }
    }

    /// Fills in the dry-bean path from the environment or the default so
    /// that a manifest echo names the file actually read.
    pub fn resolved(&self) -> Self {
        match self {
            Covariates::DryBean { path: None } => Covariates::DryBean {
                path: Some(
                    std::env::var_os(DATA_ENV)
                        .map(PathBuf::from)
                        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_PATH)),
                ),
            },
            other => other.clone(),
        }
    }

    /// The min-max normalized table.
    pub fn load(&self) -> Result<CovariateTable> {
        let table = match self.resolved() {
            Covariates::DryBean { path: Some(path) } => {
                if !path.exists() {
                    bail!(
                        "dry-bean data not found at {} (set {DATA_ENV}, pass --data, or use --synthetic)",
                        path.display()
                    );
                }
                load_dry_bean(&path)?
            }
            Covariates::Synthetic { rows, seed } => synth_covariates(rows, seed)?,
            Covariates::DryBean { path: None } => unreachable!("resolved above"),
        };
        Ok(table.normalized()?)
    }
}

/// Reads the dry-bean CSV: a header row, 16 numeric columns and one class
/// column (the only non-numeric one). Comma and semicolon delimiters are
/// accepted; with semicolons a decimal comma is read as a point.
pub fn load_dry_bean(path: &Path) -> Result<CovariateTable> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_dry_bean(&raw).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_dry_bean(raw: &str) -> Result<CovariateTable> {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let header = raw.lines().next().ok_or_else(|| anyhow!("file is empty"))?;
    let delimiter = if header.contains(';') { b';' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let names: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("row {}", i + 1))?;
        if let Some(j) = rec.iter().position(str::is_empty) {
            bail!("row {}: column `{}` is empty", i + 1, names[j]);
        }
        records.push(rec);
    }
    if records.is_empty() {
        bail!("no data rows after the header");
    }

    let number = |s: &str| -> Option<f64> {
        s.parse::<f64>()
            .ok()
            .or_else(|| (delimiter == b';').then(|| s.replace(',', ".").parse().ok()).flatten())
            .filter(|v: &f64| v.is_finite())
    };
    let mut text_columns = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if let Some(i) = records.iter().position(|r| number(&r[j]).is_none()) {
            text_columns.push((j, name.clone(), i + 1, records[i][j].to_string()));
        }
    }
    let class = match text_columns.as_slice() {
        [(j, ..)] => *j,
        [] => bail!("no class column: every column is numeric"),
        many => {
            let detail: Vec<String> = many
                .iter()
                .map(|(_, name, row, v)| format!("`{name}` (row {row}: `{v}`)"))
                .collect();
            bail!("expected one non-numeric class column, found {}", detail.join(", "));
        }
    };

    let mut class_names: Vec<String> = records.iter().map(|r| r[class].to_string()).collect();
    class_names.sort();
    class_names.dedup();
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != class)
        .map(|(_, n)| n.clone())
        .collect();
    let mut data = Vec::with_capacity(records.len() * feature_names.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in &records {
        for (j, v) in r.iter().enumerate() {
            if j != class {
                data.push(number(v).expect("checked numeric"));
            }
        }
        labels.push(class_names.binary_search_by(|c| c.as_str().cmp(&r[class])).expect("collected"));
    }
    let features = Matrix::from_vec(records.len(), feature_names.len(), data)?;
    Ok(CovariateTable::new(features, labels, class_names, feature_names)?)
}
