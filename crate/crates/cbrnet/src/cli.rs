//! The `cbrnet` command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use cbrnet_core::dgp::{self, generate, DoseFormula};
use cbrnet_core::eval::{dose_curve, evaluate, DEFAULT_GRID_SIZE};
use cbrnet_core::models::{train_cbrnet, train_drnet, train_mlp, StepLoss};
use cbrnet_core::select::{train_estimator, EstimatorKind, TrainedModel};
use cbrnet_core::clustering::KMeansModel;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bundle::Bundle;
use crate::checkpoint;
use crate::config::{self, GenerateConfig, SweepConfig, SweepKind, TrainConfig};
use crate::data::{Covariates, DRY_BEAN_ROWS};
use crate::experiment::{self, clustering_seed, RunOptions};
use crate::manifest::{self, Manifest};
use crate::report::{self, CurvePoint};
use crate::{text, usage};

#[derive(Debug, Parser)]
#[command(name = "cbrnet", version = crate::VERSION, about = "Continuous-dose response estimation with cluster-balanced representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a semi-synthetic dataset bundle.
    Generate(GenerateArgs),
    /// Train one estimator on a bundle's training split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a bundle's test split.
    Evaluate(EvaluateArgs),
    /// Run the benchmark matrix or a λ / k sweep.
    Sweep(SweepArgs),
    /// Write the learned representation of a CBRNet checkpoint.
    DumpRepr(DumpReprArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Formula {
    AsPrinted,
    ModeCorrected,
}

impl From<Formula> for DoseFormula {
    fn from(f: Formula) -> Self {
        match f {
            Formula::AsPrinted => DoseFormula::AsPrinted,
            Formula::ModeCorrected => DoseFormula::ModeCorrected,
        }
    }
}

/// Covariate source flags shared by `generate` and `sweep`.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Dry-bean CSV (overrides CADR_DATA).
    #[arg(long, value_name = "CSV", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use synthetic covariates instead of the dry-bean table.
    #[arg(long)]
    pub synthetic: bool,
    /// Rows of synthetic covariates.
    #[arg(long, requires = "synthetic")]
    pub rows: Option<usize>,
}

impl SourceArgs {
    fn apply(&self, current: Covariates) -> Covariates {
        if let Some(path) = &self.data {
            return Covariates::DryBean { path: Some(path.clone()) };
        }
        if self.synthetic {
            let seed = match current {
                Covariates::Synthetic { seed, .. } => seed,
                _ => 0,
            };
            return Covariates::Synthetic {
                rows: self.rows.unwrap_or(DRY_BEAN_ROWS),
                seed,
            };
        }
        current
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, value_enum)]
    pub dose_formula: Option<Formula>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// linear, mlp, drnet, cbrnet-mmd-lin, cbrnet-mmd-rbf or cbrnet-wass.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Network initialization and batching seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Record wall-clock training time in the manifest.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    /// Also write estimated and true curves of the first N test units.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub curves: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<SweepKind>,
    /// Ten repetitions over the complete search ranges.
    #[arg(long)]
    pub full: bool,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Record wall-clock training time in report.csv.
    #[arg(long)]
    pub timings: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Split {
    Train,
    Validation,
    #[default]
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct DumpReprArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

/// Runs a parsed command. `Ok(false)` means outputs were written but some
/// part of the run failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(a) => generate_cmd(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| true),
        Command::Sweep(a) => sweep_cmd(a),
        Command::DumpRepr(a) => dump_repr_cmd(a).map(|_| true),
    }
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let started = manifest::now();
    let mut cfg: GenerateConfig = config::read_or_default(a.config.as_deref())?;
    let d = &mut cfg.dgp;
    d.alpha = a.alpha.unwrap_or(d.alpha);
    d.beta = a.beta.unwrap_or(d.beta);
    d.noise_std = a.noise_std.unwrap_or(d.noise_std);
    d.seed = a.seed.unwrap_or(d.seed);
    if let Some(f) = a.dose_formula {
        d.dose_formula = f.into();
    }
    cfg.dgp.validate().map_err(|e| usage(e.to_string()))?;
    cfg.covariates = a.source.apply(cfg.covariates).resolved();

    let table = cfg.covariates.load()?;
    let dataset = generate(&cfg.dgp, &table)?;
    let bundle = Bundle {
        dataset,
        feature_names: table.feature_names().to_vec(),
        class_names: table.class_names().to_vec(),
        covariates: cfg.covariates.clone(),
    };
    bundle.write(&a.out)?;
    log::info!("wrote {} rows to {}", bundle.dataset.rows(), a.out.display());
    let mut m = Manifest::new("generate", &cfg, json!({ "dataset": cfg.dgp.seed }), started);
    m.outputs = [crate::bundle::COVARIATES_FILE, crate::bundle::ASSIGNMENTS_FILE, crate::bundle::ORACLE_FILE]
        .map(String::from)
        .to_vec();
    m.write(&a.out)
}

fn read_bundle(dir: &Path) -> Result<Bundle> {
    Bundle::read(dir).with_context(|| format!("bundle {}", dir.display()))
}

fn write_history(path: &Path, history: &[StepLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "mse", "ipm", "total"])?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), text::float(l.mse), text::float(l.ipm), text::float(l.total)])?;
    }
    w.flush()?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let started = manifest::now();
    let mut cfg: TrainConfig = config::read_or_default(a.config.as_deref())?;
    if let Some(e) = a.estimator {
        cfg.estimator = e;
    }
    if let Some(s) = a.seed {
        cfg.network.seed = s;
    }
    let kind = cfg.kind()?;
    cfg.network.validate().map_err(|e| usage(format!("network: {e}")))?;

    let bundle = read_bundle(&a.bundle)?;
    let data = &bundle.dataset;
    let idx = dgp::split(data.rows(), bundle.seed())?;
    let train = data.samples(&idx.train);
    let validation = data.samples(&idx.validation);

    let delta_seed = clustering_seed(bundle.seed(), cfg.clustering.k);
    let t = Instant::now();
    let model = match kind {
        EstimatorKind::CbrNet(ipm) => {
            let delta = KMeansModel::fit_joint(&train.x, &train.dose, &cfg.clustering, delta_seed)?;
            TrainedModel::CbrNet(train_cbrnet(&train, &cfg.network, cfg.lambda, &ipm, &delta)?)
        }
        EstimatorKind::Mlp => TrainedModel::Mlp(train_mlp(&train, &cfg.network)?),
        EstimatorKind::DrNet => TrainedModel::DrNet(train_drnet(&train, &cfg.network)?),
        EstimatorKind::Linear => train_estimator(&kind, &cfg.hyper()?, &train, None)?,
    };
    let seconds = t.elapsed().as_secs_f64();
    let validation_mse = cbrnet_core::eval::factual_mse(&model, &validation)?;

    checkpoint::save(&model, &a.out)?;
    let mut outputs = vec![checkpoint::MODEL_FILE.to_string(), checkpoint::PARAMS_FILE.to_string()];
    let history = match &model {
        TrainedModel::Mlp(m) => Some(&m.history),
        TrainedModel::DrNet(m) => Some(&m.history),
        TrainedModel::CbrNet(m) => Some(&m.history),
        TrainedModel::Linear(_) => None,
    };
    if let Some(h) = history {
        write_history(&a.out.join("history.csv"), h)?;
        outputs.push(String::from("history.csv"));
    }

    let mut seeds = json!({ "dataset": bundle.seed() });
    if !matches!(kind, EstimatorKind::Linear) {
        seeds["network"] = json!(cfg.network.seed);
    }
    if matches!(kind, EstimatorKind::CbrNet(_)) {
        seeds["clustering"] = json!(delta_seed);
    }
    let mut m = Manifest::new("train", &cfg, seeds, started);
    m.notes.push(format!("validation_mse={}", text::float(validation_mse)));
    if a.timings {
        m.notes.push(format!("train_seconds={}", text::float(seconds)));
    }
    m.outputs = outputs;
    log::info!("{} trained, validation MSE {validation_mse:.4}", checkpoint::model_id(&model));
    m.write(&a.out)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let started = manifest::now();
    if a.grid_size < 2 {
        return Err(usage("--grid-size must be at least 2"));
    }
    let bundle = read_bundle(&a.bundle)?;
    let (card, model) = checkpoint::load(&a.model).with_context(|| format!("checkpoint {}", a.model.display()))?;
    let data = &bundle.dataset;
    anyhow::ensure!(
        card.input_dim == data.covariates.cols(),
        "checkpoint expects {} covariates, bundle has {}",
        card.input_dim,
        data.covariates.cols()
    );
    let idx = dgp::split(data.rows(), bundle.seed())?;
    let test = data.samples(&idx.test);
    let ev = evaluate(&card.model_id, &model, &data.oracle, &test, a.grid_size, false)?;

    let (lambda, ipm, k) = match &model {
        TrainedModel::CbrNet(m) => (Some(m.lambda), Some(m.ipm.name()), Some(m.delta.k)),
        _ => (None, None, None),
    };
    let row = experiment::ResultRow {
        model_id: ev.model_id.clone(),
        dataset_seed: bundle.seed(),
        alpha: data.config.alpha,
        beta: data.config.beta,
        repetition: 0,
        lambda,
        ipm,
        k,
        mise: ev.mise,
        factual_mse: ev.factual_mse,
        grid_size: ev.grid_size,
        train_seconds: None,
        grid_index: None,
        hyper: None,
        validation_mse: None,
        final_ipm: None,
    };
    std::fs::create_dir_all(&a.out)?;
    report::write_report(&a.out.join(report::REPORT_FILE), &[row])?;
    let mut outputs = vec![report::REPORT_FILE.to_string()];
    if a.curves > 0 {
        let mut curves = Vec::new();
        for (i, &r) in idx.test.iter().take(a.curves).enumerate() {
            let x = test.x.row(i);
            let points = dose_curve(&model, x, a.grid_size)?
                .into_iter()
                .map(|(s, est)| Ok((s, est, data.oracle.response(s, x)?)))
                .collect::<Result<Vec<_>>>()?;
            curves.push((r, points));
        }
        report::write_dose_curves(&a.out.join(report::DOSE_CURVES_FILE), &curves)?;
        outputs.push(report::DOSE_CURVES_FILE.to_string());
    }
    log::info!("{}: MISE {:.4}, factual MSE {:.4}", ev.model_id, ev.mise, ev.factual_mse);
    let echo = json!({
        "bundle": a.bundle,
        "model": a.model,
        "grid_size": a.grid_size,
        "curves": a.curves,
    });
    let mut m = Manifest::new("evaluate", echo, json!({ "dataset": bundle.seed() }), started);
    m.outputs = outputs;
    m.write(&a.out)
}

fn sweep_cmd(a: SweepArgs) -> Result<bool> {
    let started = manifest::now();
    let mut cfg: SweepConfig = config::read_or_default(a.config.as_deref())?;
    if let Some(k) = a.kind {
        cfg.kind = k;
    }
    if a.full {
        cfg = cfg.full();
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    cfg.covariates = a.source.apply(cfg.covariates);
    let cfg = cfg.resolve()?;
    let table = cfg.covariates.load()?;
    let opts = RunOptions { timings: a.timings };

    let outcome = match a.jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| experiment::run(&cfg, &table, opts))?,
        None => experiment::run(&cfg, &table, opts)?,
    };

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = |f: &str| a.out.join(f);
    let mut outputs = vec![report::REPORT_FILE, report::SUMMARY_FILE];
    report::write_report(&out(report::REPORT_FILE), &outcome.rows)?;
    report::write_summary(&out(report::SUMMARY_FILE), &experiment::summarize(&outcome.rows, cfg.kind))?;
    match cfg.kind {
        SweepKind::Benchmark => {
            report::write_selections(&out(report::SELECTIONS_FILE), &outcome.rows)?;
            outputs.push(report::SELECTIONS_FILE);
        }
        kind => {
            let points: Vec<CurvePoint> = outcome.rows.iter().filter_map(|r| CurvePoint::from_row(kind, r)).collect();
            report::write_curves(&out(report::CURVES_FILE), &points)?;
            outputs.push(report::CURVES_FILE);
        }
    }
    if !outcome.failures.is_empty() {
        report::write_failures(&out(report::FAILURES_FILE), &outcome.failures)?;
        outputs.push(report::FAILURES_FILE);
    }

    let datasets: Vec<_> = cfg
        .cells()
        .iter()
        .flat_map(|&c| {
            (0..cfg.repetitions).map(move |r| {
                json!({ "alpha": c.alpha, "beta": c.beta, "repetition": r, "dataset": experiment::dataset_seed(cfg.master_seed, c, r) })
            })
        })
        .collect();
    let mut m = Manifest::new("sweep", &cfg, json!({ "master": cfg.master_seed, "datasets": datasets }), started);
    m.outputs = outputs.into_iter().map(String::from).collect();
    m.notes.push(String::from(
        "network seeds derive from (dataset seed, model id, grid index); clustering seeds from (dataset seed, k)",
    ));
    for f in &outcome.failures {
        m.notes.push(format!(
            "failed: {} at alpha={} beta={} repetition={}: {}",
            f.model_id, f.alpha, f.beta, f.repetition, f.error
        ));
    }
    m.write(&a.out)?;
    if !outcome.failures.is_empty() {
        log::error!("{} model fits failed; see {}", outcome.failures.len(), report::FAILURES_FILE);
    }
    Ok(outcome.failures.is_empty())
}

fn dump_repr_cmd(a: DumpReprArgs) -> Result<()> {
    let started = manifest::now();
    let bundle = read_bundle(&a.bundle)?;
    let (card, model) = checkpoint::load(&a.model).with_context(|| format!("checkpoint {}", a.model.display()))?;
    let TrainedModel::CbrNet(model) = model else {
        return Err(usage(format!("dump-repr needs a CBRNet checkpoint, got {}", card.model_id)));
    };
    let data = &bundle.dataset;
    let idx = dgp::split(data.rows(), bundle.seed())?;
    let rows: Vec<usize> = match a.split {
        Split::Train => idx.train,
        Split::Validation => idx.validation,
        Split::Test => idx.test,
        Split::All => (0..data.rows()).collect(),
    };
    let samples = data.samples(&rows);
    let (repr, clusters) = experiment::representations(&model, &samples)?;
    std::fs::create_dir_all(&a.out)?;
    report::write_representations(&a.out.join(report::REPRESENTATIONS_FILE), &rows, &repr, &samples.dose, &clusters)?;
    let tercile = experiment::tercile_mmd(&repr, &samples.dose)?;
    let echo = json!({
        "bundle": a.bundle,
        "model": a.model,
        "split": format!("{:?}", a.split).to_lowercase(),
    });
    let mut m = Manifest::new("dump-repr", echo, json!({ "dataset": bundle.seed() }), started);
    m.notes.push(format!("dose_tercile_linear_mmd={}", text::float(tercile)));
    m.outputs = vec![report::REPRESENTATIONS_FILE.to_string()];
    m.write(&a.out)
}

/// Parses `args`, runs, and maps the result to an exit status: 0 on
/// success, 2 for usage errors, 1 for any other failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<crate::UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

