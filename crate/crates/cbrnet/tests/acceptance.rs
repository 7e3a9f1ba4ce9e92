//! Acceptance checks. One PASS/FAIL line per criterion; the process exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=7,8` restricts the run to the listed criteria.
//! Covariates come from `CADR_DATA` when that file exists and from the
//! synthetic dry-bean stand-in otherwise.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cbrnet::config::{Cell, SweepConfig, SweepKind};
use cbrnet::data::{Covariates, DATA_ENV};
use cbrnet::experiment::{self, Instance, RunOptions, Summary};
use cbrnet_core::autodiff::{numeric_gradient, Tape, Var};
use cbrnet_core::clustering::{kmeans_plus_plus, lloyd, KMeansConfig};
use cbrnet_core::dgp::{generate, sample_dose, synth_covariates, CovariateTable, DgpConfig, DoseFormula};
use cbrnet_core::eval::{dose_grid, trapezoid};
use cbrnet_core::ipm::{self, Bandwidth, IpmKind};
use cbrnet_core::matrix::pairwise_sq_dist;
use cbrnet_core::models::{train_cbrnet, NetworkSpec};
use cbrnet_core::nn::FeedForward;
use cbrnet_core::rng::stream;
use cbrnet_core::stats::{histogram_mode, ks_two_sample, ks_uniform, smoothed_histogram_mode};
use cbrnet_core::Matrix;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn covariates() -> Covariates {
    match std::env::var_os(DATA_ENV).map(PathBuf::from) {
        Some(p) if p.exists() => Covariates::DryBean { path: Some(p) },
        _ => Covariates::synthetic(),
    }
}

fn mean_of(summary: &[Summary], model: &str, alpha: f64) -> f64 {
    summary
        .iter()
        .find(|s| s.model_id == model && s.alpha == alpha)
        .map_or(f64::NAN, |s| s.mise_mean)
}

fn benchmark(table: &CovariateTable, cells: Vec<Cell>, estimators: &[&str]) -> Result<Vec<Summary>, String> {
    let cfg = SweepConfig {
        kind: SweepKind::Benchmark,
        cells: Some(cells),
        repetitions: 3,
        estimators: estimators.iter().map(|s| s.to_string()).collect(),
        ..SweepConfig::default()
    };
    let out = experiment::run(&cfg, table, RunOptions::default()).map_err(|e| format!("{e:#}"))?;
    if let Some(f) = out.failures.first() {
        return Err(format!("{} failed: {}", f.model_id, f.error));
    }
    Ok(experiment::summarize(&out.rows, SweepKind::Benchmark))
}

fn table_line(summary: &[Summary]) -> String {
    summary
        .iter()
        .map(|s| format!("{}@a{}={:.3}", s.model_id, s.alpha, s.mise_mean))
        .collect::<Vec<_>>()
        .join(" ")
}

const CBRNETS: [&str; 3] = ["cbrnet-mmd-lin", "cbrnet-mmd-rbf", "cbrnet-wass"];

fn criteria_1_2(table: &CovariateTable) -> (Verdict, Verdict) {
    let cells = vec![Cell { alpha: 1.0, beta: 0.5 }, Cell { alpha: 3.0, beta: 0.5 }];
    let summary = match benchmark(table, cells, &cbrnet::config::ALL_ESTIMATORS) {
        Ok(s) => s,
        Err(e) => return (verdict(false, e.clone()), verdict(false, e)),
    };
    let m = |id: &str, a: f64| mean_of(&summary, id, a);
    let beats = CBRNETS.iter().all(|c| m(c, 3.0) < m("mlp", 3.0) && m(c, 3.0) < m("drnet", 3.0));
    let linear = m("linear", 1.0) > 2.5 && m("linear", 3.0) > 2.5;
    let first = verdict(beats && linear, table_line(&summary));
    let (wass, mlp) = (m("cbrnet-wass", 3.0), m("mlp", 3.0));
    let second = verdict(
        (0.2..=0.9).contains(&wass) && (0.5..=1.4).contains(&mlp),
        format!("cbrnet-wass {wass:.3} in [0.2, 0.9], mlp {mlp:.3} in [0.5, 1.4]"),
    );
    (first, second)
}

fn criterion_3(table: &CovariateTable) -> Verdict {
    let cells = vec![Cell { alpha: 1.0, beta: 0.0 }, Cell { alpha: 4.0, beta: 0.0 }];
    let summary = match benchmark(table, cells, &["mlp", "cbrnet-mmd-lin"]) {
        Ok(s) => s,
        Err(e) => return verdict(false, e),
    };
    let ratio = |id: &str| mean_of(&summary, id, 4.0) / mean_of(&summary, id, 1.0);
    let (mlp, cbr) = (ratio("mlp"), ratio("cbrnet-mmd-lin"));
    verdict(
        mlp >= 2.0 && cbr <= 3.0,
        format!("mlp ratio {mlp:.2} (>= 2), cbrnet-mmd-lin ratio {cbr:.2} (<= 3); {}", table_line(&summary)),
    )
}

fn sweep(table: &CovariateTable, kind: SweepKind, repetitions: usize) -> Result<Vec<Summary>, String> {
    let cfg = SweepConfig {
        kind,
        repetitions,
        ..SweepConfig::default()
    };
    let out = experiment::run(&cfg, table, RunOptions::default()).map_err(|e| format!("{e:#}"))?;
    if let Some(f) = out.failures.first() {
        return Err(format!("{} failed: {}", f.model_id, f.error));
    }
    Ok(experiment::summarize(&out.rows, kind))
}

fn criterion_4(table: &CovariateTable) -> Verdict {
    let summary = match sweep(table, SweepKind::Lambda, 3) {
        Ok(s) => s,
        Err(e) => return verdict(false, e),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for id in CBRNETS {
        let at = |l: f64| {
            summary
                .iter()
                .find(|s| s.model_id == id && s.lambda == Some(l))
                .map_or(f64::NAN, |s| s.mise_mean)
        };
        let curve: Vec<f64> = [0.0, 0.001, 0.01, 0.1, 1.0, 10.0].iter().map(|&l| at(l)).collect();
        let small = curve[1..4].iter().cloned().fold(f64::INFINITY, f64::min);
        let best = curve.iter().cloned().fold(f64::INFINITY, f64::min);
        let ok = small < curve[0] && curve[5] > best;
        pass &= ok;
        let shown: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
        parts.push(format!("{id} [{}]{}", shown.join(" "), if ok { "" } else { " x" }));
    }
    verdict(pass, format!("lambda 0,.001,.01,.1,1,10: {}", parts.join("; ")))
}

fn criterion_5(table: &CovariateTable) -> Verdict {
    let summary = match sweep(table, SweepKind::Clusters, 10) {
        Ok(s) => s,
        Err(e) => return verdict(false, e),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for id in CBRNETS {
        let means: Vec<f64> = summary.iter().filter(|s| s.model_id == id).map(|s| s.mise_mean).collect();
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread = (hi - lo) / lo;
        pass &= means.len() == 5 && spread <= 0.5;
        let shown: Vec<String> = means.iter().map(|v| format!("{v:.3}")).collect();
        parts.push(format!("{id} [{}] spread {:.0}%", shown.join(" "), 100.0 * spread));
    }
    verdict(pass, format!("k 2,3,5,8,12, 10 repetitions: {}", parts.join("; ")))
}

fn criterion_6(table: &CovariateTable) -> Verdict {
    let cfg = SweepConfig::default();
    let ipm = IpmKind::MmdLinear;
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let result = (|| -> anyhow::Result<(f64, f64, f64, f64)> {
            let inst = Instance::generate(table, &cfg.dgp, cbrnet::config::sweep_cell(), seed, 6)?;
            let delta = inst.fit_clustering(&KMeansConfig::default())?;
            let spec = NetworkSpec {
                seed: seed as u64,
                ..NetworkSpec::default()
            };
            let fit = |lambda: f64| -> anyhow::Result<(f64, f64)> {
                let m = train_cbrnet(&inst.train, &spec, lambda, &ipm, &delta)?;
                let (repr, _) = experiment::representations(&m, &inst.test)?;
                Ok((m.final_epoch_ipm(), experiment::tercile_mmd(&repr, &inst.test.dose)?))
            };
            let (i0, t0) = fit(0.0)?;
            let (i1, t1) = fit(0.1)?;
            Ok((i0, i1, t0, t1))
        })();
        match result {
            Ok((i0, i1, t0, t1)) => {
                if i1 < i0 && t1 < t0 {
                    wins += 1;
                }
                parts.push(format!("seed {seed}: ipm {i0:.4}->{i1:.4}, tercile {t0:.4}->{t1:.4}"));
            }
            Err(e) => parts.push(format!("seed {seed}: {e:#}")),
        }
    }
    verdict(wins >= 4, format!("{wins}/5 seeds lower on both; {}", parts.join("; ")))
}

fn criterion_7() -> Verdict {
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    let big = synth_covariates(60_000, 3).and_then(|t| t.normalized()).expect("synthetic table");
    for alpha in [0.0, 3.0] {
        let d = generate(
            &DgpConfig {
                alpha,
                beta: 0.0,
                seed: 5,
                ..DgpConfig::default()
            },
            &big,
        )
        .expect("generate");
        let by = d.doses_by_cluster();
        let worst = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| ks_two_sample(&by[i], &by[j]))
            .fold(0.0, f64::max);
        notes.push(format!("beta=0 alpha={alpha} max KS {worst:.4}"));
        if worst >= 0.03 {
            failures.push("per-cluster KS");
        }
    }

    let mut rng = stream(17, "acceptance-uniform");
    let draws: Vec<f64> = (0..50_000)
        .map(|_| sample_dose(0.0, 0.5, DoseFormula::AsPrinted, &mut rng).unwrap())
        .collect();
    let ks = ks_uniform(&draws);
    notes.push(format!("alpha=0 KS {ks:.4}"));
    if ks >= 0.01 {
        failures.push("uniformity");
    }

    let mut rng = stream(23, "acceptance-mode");
    let draws: Vec<f64> = (0..200_000)
        .map(|_| sample_dose(3.0, 0.5, DoseFormula::ModeCorrected, &mut rng).unwrap())
        .collect();
    let mode = smoothed_histogram_mode(&draws, 200, 41, 0.0, 1.0);
    let raw = histogram_mode(&draws, 200, 0.0, 1.0);
    notes.push(format!("mode {mode:.4} (raw argmax {raw:.4})"));
    if (mode - 0.5).abs() > 0.02 {
        failures.push("histogram mode");
    }

    let t = synth_covariates(13_611, 7).and_then(|t| t.normalized()).expect("synthetic table");
    let d = generate(
        &DgpConfig {
            noise_std: 0.0,
            seed: 2,
            ..DgpConfig::default()
        },
        &t,
    )
    .expect("generate");
    let exact = (0..d.rows()).all(|i| d.outcome[i] == d.true_response(i, d.dose[i]).unwrap());
    notes.push(format!("noiseless oracle exact: {exact}"));
    if !exact {
        failures.push("oracle consistency");
    }

    verdict(failures.is_empty(), format!("{}{}", notes.join(", "), failed_list(&failures)))
}

fn failed_list(f: &[&str]) -> String {
    if f.is_empty() {
        String::new()
    } else {
        format!("; failed: {}", f.join(", "))
    }
}

/// Deterministic test matrix with entries in (-1.5, 1.5).
fn filled(rows: usize, cols: usize, salt: f64) -> Matrix {
    let data = (0..rows * cols).map(|k| 1.5 * (1.7 * k as f64 + salt).sin()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Largest tensor-wise relative error `|g - n| / max(|g|, |n|)` between
/// reverse-mode and central-difference gradients.
fn gradient_error(inputs: &[Matrix], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let numeric = numeric_gradient(&inputs[k], 1e-5, |probe| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, m)| t.constant(if j == k { probe.clone() } else { m.clone() }))
                .collect();
            let out = build(&mut t, &vs);
            t.value(out).item()
        });
        let analytic = tape.grad(vars[k]);
        let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
        let diff = norm(&mut analytic.as_slice().iter().zip(numeric.as_slice()).map(|(a, b)| a - b));
        let scale = norm(&mut analytic.as_slice().iter().copied()).max(norm(&mut numeric.as_slice().iter().copied()));
        worst = worst.max(diff / scale.max(1e-12));
    }
    worst
}

fn criterion_8() -> Verdict {
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    let (a, b) = (filled(6, 3, 0.1), filled(5, 3, 2.0));
    let mut worst: f64 = 0.0;
    worst = worst.max(gradient_error(&[filled(3, 4, 0.0), filled(4, 2, 1.0)], |t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        t.weighted_sum(p, filled(3, 2, 5.0)).unwrap()
    }));
    worst = worst.max(gradient_error(&[filled(4, 3, 0.3), filled(3, 2, 0.7), filled(1, 2, 0.9)], |t, v| {
        let h = t.affine(v[0], v[1], v[2]).unwrap();
        let h = t.elu(h);
        t.mse(h, &filled(4, 2, 3.0)).unwrap()
    }));
    for kind in [IpmKind::MmdLinear, IpmKind::MmdRbf { bandwidth: Bandwidth::Fixed(1.3) }] {
        worst = worst.max(gradient_error(&[a.clone(), b.clone()], |t, v| ipm::ipm(t, &kind, v[0], v[1]).unwrap()));
    }
    let clusters = [0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 0, 1];
    worst = worst.max(gradient_error(&[filled(12, 3, 4.0)], |t, v| {
        ipm::cluster_balance_loss(t, v[0], &clusters, &IpmKind::MmdLinear, 0).unwrap()
    }));
    let net = FeedForward::new(&[5, 8, 8, 1], false, &mut stream(6, "acceptance-net")).unwrap();
    let (x, y) = (filled(12, 5, 0.5), filled(12, 1, 6.0));
    let params: Vec<Matrix> = net.params().cloned().collect();
    worst = worst.max(gradient_error(&params, |t, v| {
        let mut h = t.constant(x.clone());
        for (i, pair) in v.chunks(2).enumerate() {
            h = t.affine(h, pair[0], pair[1]).unwrap();
            if i < 2 {
                h = t.elu(h);
            }
        }
        t.mse(h, &y).unwrap()
    }));
    notes.push(format!("gradient rel err {worst:.1e}"));
    if worst > 1e-4 {
        failures.push("gradients");
    }

    let mut axioms = true;
    for kind in [IpmKind::MmdLinear, IpmKind::rbf_median(), IpmKind::sinkhorn_default()] {
        let ab = ipm::ipm_value(&kind, &a, &b).unwrap();
        axioms &= ab >= 0.0;
        if !matches!(kind, IpmKind::Wasserstein { .. }) {
            axioms &= ab == ipm::ipm_value(&kind, &b, &a).unwrap();
            axioms &= ipm::ipm_value(&kind, &a, &a).unwrap().abs() <= 1e-12;
        }
    }
    let two = Matrix::column(&[0.0, 1.0]);
    let self_ot = ipm::ipm_value(&IpmKind::sinkhorn_default(), &two, &two).unwrap();
    axioms &= (0.0..=1e-3).contains(&self_ot);
    notes.push(format!("IPM axioms {axioms} (sinkhorn self {self_ot:.1e})"));
    if !axioms {
        failures.push("IPM axioms");
    }

    let (p, q) = (Matrix::column(&[0.0, 1.0]), Matrix::column(&[0.5, 1.5]));
    let cost = pairwise_sq_dist(&p, &q).unwrap();
    let c = cost.map(|v| v / cost.max());
    let exact = ((c[(0, 0)] + c[(1, 1)]) / 2.0).min((c[(0, 1)] + c[(1, 0)]) / 2.0);
    let got = ipm::ipm_value(&IpmKind::Wasserstein { epsilon: 0.01, iterations: 200 }, &p, &q).unwrap();
    notes.push(format!("sinkhorn {got:.4} vs exact {exact:.4}"));
    if (got - exact).abs() > 0.1 * exact {
        failures.push("sinkhorn oracle");
    }

    let pts = synth_covariates(600, 2).unwrap().normalized().unwrap().features().clone();
    let monotone = (0..5).all(|s| {
        let init = kmeans_plus_plus(&pts, 5, &mut stream(s, "acceptance-kmeans"));
        let run = lloyd(&pts, init, 300);
        run.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs())
    });
    notes.push(format!("lloyd monotone {monotone}"));
    if !monotone {
        failures.push("lloyd");
    }

    let grid = dose_grid(65).unwrap();
    let quartic = trapezoid(&grid.iter().map(|s| s.powi(4)).collect::<Vec<_>>());
    notes.push(format!("trapezoid s^4 {quartic:.6}"));
    if (quartic - 0.2).abs() > 1e-3 {
        failures.push("trapezoid");
    }

    verdict(failures.is_empty(), format!("{}{}", notes.join(", "), failed_list(&failures)))
}

fn cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cbrnet"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn strip_timestamps(raw: &[u8]) -> Option<serde_json::Value> {
    let mut v: serde_json::Value = serde_json::from_slice(raw).ok()?;
    v.as_object_mut()?.remove("timestamps")?;
    Some(v)
}

/// Names of files that differ between two output directories.
fn differing(a: &Path, b: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap_or_default());
        let same = if name == "manifest.json" {
            let sx = strip_timestamps(&x);
            sx.is_some() && sx == strip_timestamps(&y)
        } else {
            x == y
        };
        if !same {
            out.push(name.to_string_lossy().into_owned());
        }
    }
    out
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut diffs = Vec::new();
    for run in ["1", "2"] {
        let d = dir.path().join(run);
        fs::create_dir(&d).unwrap();
        fs::write(
            d.join("train.json"),
            r#"{"estimator": "cbrnet-wass", "network": {"training_steps": 300}}"#,
        )
        .unwrap();
        fs::write(
            d.join("sweep.json"),
            r#"{"kind": "lambda", "repetitions": 2, "lambda_values": [0, 0.1], "ipms": ["mmd-rbf"],
                "network": {"training_steps": 150},
                "covariates": {"source": "synthetic", "rows": 1500, "seed": 4}}"#,
        )
        .unwrap();
        let steps: [&[&str]; 5] = [
            &["generate", "--synthetic", "--rows", "1500", "--alpha", "3", "--beta", "0.5", "--seed", "7", "--out", "bundle"],
            &["train", "--bundle", "bundle", "--config", "train.json", "--seed", "1", "--out", "model"],
            &["evaluate", "--bundle", "bundle", "--model", "model", "--out", "eval", "--curves", "3"],
            &["dump-repr", "--bundle", "bundle", "--model", "model", "--out", "repr"],
            &["sweep", "--config", "sweep.json", "--seed", "5", "--out", "sweep"],
        ];
        for args in steps {
            if let Err(e) = cli(args, &d) {
                return verdict(false, e);
            }
        }
    }
    for step in ["bundle", "model", "eval", "repr", "sweep"] {
        for f in differing(&dir.path().join("1").join(step), &dir.path().join("2").join(step)) {
            diffs.push(format!("{step}/{f}"));
        }
    }
    verdict(
        diffs.is_empty(),
        if diffs.is_empty() {
            String::from("generate, train, evaluate, dump-repr, sweep: all outputs identical")
        } else {
            format!("differences in {}", diffs.join(", "))
        },
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().is_none_or(|o| o.contains(&c));
    let budget = |c: u32| {
        Duration::from_secs(match c {
            1 | 2 => 45 * 60,
            4 | 5 => 30 * 60,
            7 | 8 => 2 * 60,
            _ => 30 * 60,
        })
    };

    let source = covariates();
    let needs_table = (1..=6).any(wanted);
    let table = if needs_table {
        match source.load() {
            Ok(t) => Some(t),
            Err(e) => {
                println!("covariates unavailable: {e:#}");
                std::process::exit(1);
            }
        }
    } else {
        None
    };
    if needs_table {
        println!("covariates: {source:?}");
    }

    let mut all_pass = true;
    let mut report = |c: u32, v: Verdict, took: Duration| {
        let in_time = took <= budget(c);
        let pass = v.pass && in_time;
        all_pass &= pass;
        println!(
            "criterion {c}: {} ({:.0}s{}) {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            if in_time { "" } else { ", over budget" },
            v.detail
        );
    };

    if wanted(1) || wanted(2) {
        let t = Instant::now();
        let (first, second) = criteria_1_2(table.as_ref().unwrap());
        let took = t.elapsed();
        if wanted(1) {
            report(1, first, took);
        }
        if wanted(2) {
            report(2, second, took);
        }
    }
    type Check = fn(&CovariateTable) -> Verdict;
    let data_checks: [(u32, Check); 4] = [(3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6)];
    for (c, f) in data_checks {
        if wanted(c) {
            let t = Instant::now();
            let v = f(table.as_ref().unwrap());
            report(c, v, t.elapsed());
        }
    }
    let plain: [(u32, fn() -> Verdict); 3] = [(7, criterion_7), (8, criterion_8), (9, criterion_9)];
    for (c, f) in plain {
        if wanted(c) {
            let t = Instant::now();
            let v = f();
            report(c, v, t.elapsed());
        }
    }
    if !all_pass {
        std::process::exit(1);
    }
}
