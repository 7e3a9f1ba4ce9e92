//! Benchmark matrix, λ and k sweeps, and representation analysis.
//!
//! Work is split into independent (cell, repetition) units. Each unit
//! derives its own seeds, so results do not depend on scheduling; rayon
//! runs the units and results are merged in unit order.

use std::time::Instant;

use anyhow::{Context, Result};
use cbrnet_core::clustering::{KMeansConfig, KMeansModel};
use cbrnet_core::dgp::{self, generate, CovariateTable, GeneratedDataset, Samples};
use cbrnet_core::eval::{factual_mse, mise};
use cbrnet_core::ipm::{self, IpmKind};
use cbrnet_core::models::{train_cbrnet, CbrNetModel, NetworkSpec};
use cbrnet_core::rng::{derive_seed, label_word};
use cbrnet_core::select::{grid_search, EstimatorKind, Hyper, TrainedModel};
use cbrnet_core::{stats, Matrix};
use rayon::prelude::*;

use crate::config::{Cell, DgpTemplate, SweepConfig, SweepKind};

pub fn dataset_seed(master: u64, cell: Cell, repetition: usize) -> u64 {
    derive_seed(&[
        master,
        cell.alpha.to_bits(),
        cell.beta.to_bits(),
        repetition as u64,
        label_word("dataset"),
    ])
}

pub fn network_seed(dataset_seed: u64, estimator: &str, grid_index: usize) -> u64 {
    derive_seed(&[dataset_seed, label_word(estimator), grid_index as u64])
}

pub fn clustering_seed(dataset_seed: u64, k: usize) -> u64 {
    derive_seed(&[dataset_seed, label_word("clustering"), k as u64])
}

/// One generated dataset with its 70/10/20 split.
#[derive(Debug, Clone)]
pub struct Instance {
    pub cell: Cell,
    pub repetition: usize,
    pub data: GeneratedDataset,
    pub train: Samples,
    pub validation: Samples,
    pub test: Samples,
}

impl Instance {
    pub fn generate(table: &CovariateTable, template: &DgpTemplate, cell: Cell, repetition: usize, master: u64) -> Result<Self> {
        let config = template.config(cell, dataset_seed(master, cell, repetition));
        let data = generate(&config, table)?;
        Self::from_dataset(data, repetition)
    }

    /// The split is seeded by the dataset seed.
    pub fn from_dataset(data: GeneratedDataset, repetition: usize) -> Result<Self> {
        let idx = dgp::split(data.rows(), data.config.seed)?;
        Ok(Self {
            cell: Cell {
                alpha: data.config.alpha,
                beta: data.config.beta,
            },
            repetition,
            train: data.samples(&idx.train),
            validation: data.samples(&idx.validation),
            test: data.samples(&idx.test),
            data,
        })
    }

    pub fn seed(&self) -> u64 {
        self.data.config.seed
    }

    /// Δ over the training split only.
    pub fn fit_clustering(&self, config: &KMeansConfig) -> Result<KMeansModel> {
        Ok(KMeansModel::fit_joint(
            &self.train.x,
            &self.train.dose,
            config,
            clustering_seed(self.seed(), config.k),
        )?)
    }
}

/// One trained-and-evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model_id: String,
    pub dataset_seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub repetition: usize,
    pub lambda: Option<f64>,
    pub ipm: Option<&'static str>,
    pub k: Option<usize>,
    pub mise: f64,
    pub factual_mse: f64,
    pub grid_size: usize,
    pub train_seconds: Option<f64>,
    /// Selection details; absent for fixed-setting sweeps.
    pub grid_index: Option<usize>,
    pub hyper: Option<Hyper>,
    pub validation_mse: Option<f64>,
    /// Mean batch IPM over the last training epoch (CBRNet only).
    pub final_ipm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub model_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub repetition: usize,
    pub dataset_seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<Failure>,
}

impl Outcome {
    fn absorb(&mut self, other: Outcome) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock training time. Off by default so reports are
    /// byte-reproducible.
    pub timings: bool,
}

struct Unit<'a> {
    cfg: &'a SweepConfig,
    opts: RunOptions,
    inst: Instance,
}

impl Unit<'_> {
    fn row(&self, model_id: String, model: &TrainedModel, seconds: f64) -> Result<ResultRow> {
        let (lambda, ipm, k, final_ipm) = match model {
            TrainedModel::CbrNet(m) => (Some(m.lambda), Some(m.ipm.name()), Some(m.delta.k), Some(m.final_epoch_ipm())),
            _ => (None, None, None, None),
        };
        Ok(ResultRow {
            model_id,
            dataset_seed: self.inst.seed(),
            alpha: self.inst.cell.alpha,
            beta: self.inst.cell.beta,
            repetition: self.inst.repetition,
            lambda,
            ipm,
            k,
            mise: mise(&self.inst.data.oracle, model, &self.inst.test.x, self.cfg.grid_size)?,
            factual_mse: factual_mse(model, &self.inst.test)?,
            grid_size: self.cfg.grid_size,
            train_seconds: self.opts.timings.then_some(seconds),
            grid_index: None,
            hyper: None,
            validation_mse: None,
            final_ipm,
        })
    }

    fn failure(&self, model_id: &str, error: &anyhow::Error) -> Failure {
        log::warn!(
            "{model_id} failed at alpha={} beta={} repetition={}: {error:#}",
            self.inst.cell.alpha,
            self.inst.cell.beta,
            self.inst.repetition
        );
        Failure {
            model_id: model_id.to_string(),
            alpha: self.inst.cell.alpha,
            beta: self.inst.cell.beta,
            repetition: self.inst.repetition,
            dataset_seed: self.inst.seed(),
            error: format!("{error:#}"),
        }
    }

    fn record(&self, out: &mut Outcome, model_id: &str, result: Result<ResultRow>) {
        match result {
            Ok(r) => out.rows.push(r),
            Err(e) => out.failures.push(self.failure(model_id, &e)),
        }
    }

    fn benchmark(&self) -> Result<Outcome> {
        let kinds = self.cfg.estimator_kinds()?;
        let delta = if kinds.iter().any(|k| matches!(k, EstimatorKind::CbrNet(_))) {
            Some(self.inst.fit_clustering(&self.cfg.clustering))
        } else {
            None
        };
        let mut out = Outcome::default();
        for kind in &kinds {
            let id = kind.id();
            let result = (|| {
                let delta = match &delta {
                    Some(Ok(d)) => Some(d),
                    Some(Err(e)) => anyhow::bail!("clustering failed: {e:#}"),
                    None => None,
                };
                let grid = self.cfg.grids.points(kind, &self.cfg.network)?;
                let seed = self.inst.seed();
                let t = Instant::now();
                let sel = grid_search(&self.inst.train, &self.inst.validation, kind, &grid, delta, |i| {
                    network_seed(seed, &id, i)
                })?;
                for (i, e) in &sel.failures {
                    log::warn!("{id} grid point {i} failed: {e}");
                }
                let mut row = self.row(id.clone(), &sel.model, t.elapsed().as_secs_f64())?;
                row.grid_index = Some(sel.index);
                row.hyper = Some(sel.hyper);
                row.validation_mse = Some(sel.validation_mse);
                Ok(row)
            })();
            self.record(&mut out, &id, result);
        }
        Ok(out)
    }

    fn cbrnet(&self, ipm: &IpmKind, lambda: f64, delta: &KMeansModel) -> Result<ResultRow> {
        let id = EstimatorKind::CbrNet(*ipm).id();
        let spec = NetworkSpec {
            seed: network_seed(self.inst.seed(), &id, 0),
            ..self.cfg.network
        };
        let t = Instant::now();
        let model = train_cbrnet(&self.inst.train, &spec, lambda, ipm, delta)?;
        let secs = t.elapsed().as_secs_f64();
        self.row(id, &TrainedModel::CbrNet(model), secs)
    }

    fn lambda_sweep(&self) -> Result<Outcome> {
        let delta = self.inst.fit_clustering(&self.cfg.clustering)?;
        let mut out = Outcome::default();
        for ipm in self.cfg.ipm_kinds()? {
            for &lambda in &self.cfg.lambda_values {
                let r = self.cbrnet(&ipm, lambda, &delta);
                self.record(&mut out, &EstimatorKind::CbrNet(ipm).id(), r);
            }
        }
        Ok(out)
    }

    fn cluster_sweep(&self) -> Result<Outcome> {
        let ipms = self.cfg.ipm_kinds()?;
        let mut out = Outcome::default();
        for &k in &self.cfg.k_values {
            let delta = self.inst.fit_clustering(&KMeansConfig { k, ..self.cfg.clustering });
            for ipm in &ipms {
                let r = delta
                    .as_ref()
                    .map_err(|e| anyhow::anyhow!("clustering with k={k} failed: {e:#}"))
                    .and_then(|d| self.cbrnet(ipm, self.cfg.fixed_lambda, d));
                self.record(&mut out, &EstimatorKind::CbrNet(*ipm).id(), r);
            }
        }
        Ok(out)
    }
}

/// Runs `cfg.kind` over every (cell, repetition). Individual model
/// failures are collected in the outcome; an error is returned only for
/// invalid configuration.
pub fn run(cfg: &SweepConfig, table: &CovariateTable, opts: RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let units: Vec<(Cell, usize)> = cfg
        .cells()
        .into_iter()
        .flat_map(|c| (0..cfg.repetitions).map(move |r| (c, r)))
        .collect();
    let parts: Vec<Outcome> = units
        .par_iter()
        .map(|&(cell, repetition)| {
            let started = Instant::now();
            let out = Instance::generate(table, &cfg.dgp, cell, repetition, cfg.master_seed)
                .with_context(|| format!("generating alpha={} beta={} repetition={repetition}", cell.alpha, cell.beta))
                .and_then(|inst| {
                    let unit = Unit { cfg, opts, inst };
                    match cfg.kind {
                        SweepKind::Benchmark => unit.benchmark(),
                        SweepKind::Lambda => unit.lambda_sweep(),
                        SweepKind::Clusters => unit.cluster_sweep(),
                    }
                });
            log::info!(
                "alpha={} beta={} repetition={repetition} done in {:.1}s",
                cell.alpha,
                cell.beta,
                started.elapsed().as_secs_f64()
            );
            out.unwrap_or_else(|e| Outcome {
                rows: Vec::new(),
                failures: vec![Failure {
                    model_id: String::from("*"),
                    alpha: cell.alpha,
                    beta: cell.beta,
                    repetition,
                    dataset_seed: dataset_seed(cfg.master_seed, cell, repetition),
                    error: format!("{e:#}"),
                }],
            })
        })
        .collect();
    let mut out = Outcome::default();
    for p in parts {
        out.absorb(p);
    }
    Ok(out)
}

/// Mean, sample standard deviation and standard error of MISE for one
/// group of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub model_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub n: usize,
    pub mise_mean: f64,
    pub mise_std: f64,
    pub mise_se: f64,
}

/// Groups rows by estimator and cell, plus λ for the λ sweep and k for the
/// k sweep. Groups keep the order of their first row.
pub fn summarize(rows: &[ResultRow], kind: SweepKind) -> Vec<Summary> {
    let key = |r: &ResultRow| {
        let lambda = (kind == SweepKind::Lambda).then_some(r.lambda).flatten();
        let k = (kind == SweepKind::Clusters).then_some(r.k).flatten();
        (r.model_id.clone(), r.alpha.to_bits(), r.beta.to_bits(), lambda.map(f64::to_bits), k)
    };
    let mut groups: Vec<(_, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((model_id, _, _, lambda, k), members)| {
            let m: Vec<f64> = members.iter().map(|r| r.mise).collect();
            Summary {
                model_id,
                alpha: members[0].alpha,
                beta: members[0].beta,
                lambda: lambda.map(f64::from_bits),
                k,
                n: m.len(),
                mise_mean: stats::mean(&m),
                mise_std: stats::sample_std(&m),
                mise_se: stats::standard_error(&m),
            }
        })
        .collect()
}

/// Φ(x) of every row and its Δ cluster.
pub fn representations(model: &CbrNetModel, rows: &Samples) -> Result<(Matrix, Vec<usize>)> {
    Ok((model.net.represent(&rows.x)?, model.clusters(&rows.x, &rows.dose)))
}

/// Average linear MMD between the three dose-tercile groups of a
/// representation (rows ranked by dose, split into equal thirds).
pub fn tercile_mmd(repr: &Matrix, dose: &[f64]) -> Result<f64> {
    let mut order: Vec<usize> = (0..dose.len()).collect();
    order.sort_by(|&a, &b| dose[a].total_cmp(&dose[b]).then(a.cmp(&b)));
    let n = order.len();
    anyhow::ensure!(n >= 3, "need at least three rows for terciles");
    let groups: Vec<Matrix> = (0..3)
        .map(|t| repr.select_rows(&order[t * n / 3..(t + 1) * n / 3]))
        .collect();
    let mut total = 0.0;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        total += ipm::ipm_value(&IpmKind::MmdLinear, &groups[a], &groups[b])?;
    }
    Ok(total / 3.0)
}
