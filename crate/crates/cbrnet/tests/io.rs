use std::fs;
use std::path::Path;

use cbrnet::bundle::{Bundle, ASSIGNMENTS_FILE};
use cbrnet::checkpoint;
use cbrnet::config::{Cell, SweepConfig, SweepKind};
use cbrnet::data::Covariates;
use cbrnet::experiment::{self, RunOptions};
use cbrnet::report::{self, CurvePoint};
use cbrnet_core::clustering::{KMeansConfig, KMeansModel};
use cbrnet_core::dgp::{self, generate, synth_covariates, DgpConfig};
use cbrnet_core::ipm::IpmKind;
use cbrnet_core::models::{fit_linear, train_cbrnet, train_drnet, train_mlp, CadrEstimator, NetworkSpec, Penalty};
use cbrnet_core::select::TrainedModel;

fn bundle(rows: usize, seed: u64) -> Bundle {
    let table = synth_covariates(rows, 0).unwrap().normalized().unwrap();
    let cfg = DgpConfig {
        seed,
        ..DgpConfig::default()
    };
    Bundle {
        dataset: generate(&cfg, &table).unwrap(),
        feature_names: table.feature_names().to_vec(),
        class_names: table.class_names().to_vec(),
        covariates: Covariates::Synthetic { rows, seed: 0 },
    }
}

#[test]
fn bundle_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(600, 3);
    b.write(dir.path()).unwrap();
    assert_eq!(Bundle::read(dir.path()).unwrap(), b);

    let head = fs::read_to_string(dir.path().join(ASSIGNMENTS_FILE)).unwrap();
    assert!(head.starts_with("row_id,cluster,dose,outcome\n0,"));
}

#[test]
fn bundle_rejects_inconsistent_clusters() {
    let dir = tempfile::tempdir().unwrap();
    bundle(300, 4).write(dir.path()).unwrap();
    let path = dir.path().join(ASSIGNMENTS_FILE);
    let raw = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = raw.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[1] = if cells[1] == "1" { "2".into() } else { "1".into() };
    lines[1] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = format!("{:#}", Bundle::read(dir.path()).unwrap_err());
    assert!(err.contains("row 0"), "{err}");

    fs::write(&path, raw.replacen("cluster", "group", 1)).unwrap();
    assert!(Bundle::read(dir.path()).is_err());
}

fn quick() -> NetworkSpec {
    NetworkSpec {
        training_steps: 150,
        seed: 2,
        ..NetworkSpec::default()
    }
}

#[test]
fn checkpoints_reload_bit_identical() {
    let b = bundle(800, 5);
    let d = &b.dataset;
    let idx = dgp::split(d.rows(), b.seed()).unwrap();
    let train = d.samples(&idx.train);
    let test = d.samples(&idx.test);
    let delta = KMeansModel::fit_joint(&train.x, &train.dose, &KMeansConfig::default(), 1).unwrap();
    let models = [
        TrainedModel::Linear(fit_linear(&train, Penalty::Ridge(1.0)).unwrap()),
        TrainedModel::Mlp(train_mlp(&train, &quick()).unwrap()),
        TrainedModel::DrNet(train_drnet(&train, &quick()).unwrap()),
        TrainedModel::CbrNet(train_cbrnet(&train, &quick(), 0.1, &IpmKind::sinkhorn_default(), &delta).unwrap()),
    ];
    for m in models {
        let dir = tempfile::tempdir().unwrap();
        let card = checkpoint::save(&m, dir.path()).unwrap();
        let (back_card, back) = checkpoint::load(dir.path()).unwrap();
        assert_eq!(card, back_card);
        let want = m.predict_batch(&test.x, &test.dose).unwrap();
        let got = back.predict_batch(&test.x, &test.dose).unwrap();
        assert!(want.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits()), "{}", card.model_id);
        if let (TrainedModel::CbrNet(a), TrainedModel::CbrNet(b)) = (&m, &back) {
            assert_eq!(a.delta, b.delta);
            assert_eq!(a.clusters(&test.x, &test.dose), b.clusters(&test.x, &test.dose));
        }
    }
}

#[test]
fn checkpoint_shape_mismatch_is_reported() {
    let b = bundle(400, 6);
    let idx = dgp::split(b.dataset.rows(), 6).unwrap();
    let train = b.dataset.samples(&idx.train);
    let m = TrainedModel::Mlp(train_mlp(&train, &quick()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&m, dir.path()).unwrap();
    let params = dir.path().join(checkpoint::PARAMS_FILE);
    let raw = fs::read_to_string(&params).unwrap();
    fs::write(&params, raw.replacen("\n17 32\n", "\n17 31\n", 1)).unwrap();
    assert!(checkpoint::load(dir.path()).is_err());
}

#[test]
fn curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(report::CURVES_FILE);
    let points: Vec<CurvePoint> = (0..4)
        .map(|i| CurvePoint {
            sweep: if i < 2 { SweepKind::Lambda } else { SweepKind::Clusters },
            model_id: "cbrnet-mmd-rbf".into(),
            ipm: "mmd-rbf".into(),
            value: [0.001, 10.0, 3.0, 12.0][i],
            repetition: i,
            dataset_seed: u64::MAX - i as u64,
            mise: 1.0 / (i as f64 + 3.0),
            factual_mse: 0.1 * i as f64,
            final_ipm: 1e-300,
        })
        .collect();
    report::write_curves(&path, &points).unwrap();
    let back = report::read_curves(&path).unwrap();
    assert_eq!(back, points);
}

fn tiny_sweep(kind: SweepKind) -> SweepConfig {
    let mut cfg = SweepConfig {
        kind,
        cells: Some(vec![Cell { alpha: 2.0, beta: 0.5 }, Cell { alpha: 3.0, beta: 0.5 }]),
        repetitions: 2,
        ipms: vec!["mmd-lin".into()],
        lambda_values: vec![0.0, 0.1],
        covariates: Covariates::Synthetic { rows: 700, seed: 1 },
        ..SweepConfig::default()
    };
    cfg.network.training_steps = 60;
    cfg.grids.mlp.hidden_size = vec![32];
    cfg.grids.drnet.hidden_size = vec![32];
    cfg.estimators = vec!["linear".into(), "mlp".into(), "cbrnet-mmd-lin".into()];
    cfg
}

#[test]
fn results_do_not_depend_on_thread_count() {
    for kind in [SweepKind::Benchmark, SweepKind::Lambda] {
        let cfg = tiny_sweep(kind);
        let table = cfg.covariates.load().unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| experiment::run(&cfg, &table, RunOptions::default()).unwrap())
        };
        let serial = run(1);
        assert!(serial.failures.is_empty(), "{:?}", serial.failures);
        assert_eq!(serial, run(3));
    }
}

#[test]
fn benchmark_rows_cover_every_estimator_and_dataset() {
    let cfg = tiny_sweep(SweepKind::Benchmark);
    let table = cfg.covariates.load().unwrap();
    let out = experiment::run(&cfg, &table, RunOptions::default()).unwrap();
    assert_eq!(out.rows.len(), 2 * 2 * 3);
    for r in &out.rows {
        assert!(r.mise.is_finite() && r.mise >= 0.0);
        assert!(r.grid_index.is_some() && r.train_seconds.is_none());
        assert_eq!(r.ipm.is_some(), r.model_id.starts_with("cbrnet"));
    }
    let summary = experiment::summarize(&out.rows, SweepKind::Benchmark);
    assert_eq!(summary.len(), 2 * 3);
    assert!(summary.iter().all(|s| s.n == 2));
}


#[test]
fn shipped_presets_parse() {
    use cbrnet::config::{self, GenerateConfig, TrainConfig};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["benchmark", "table1", "lambda", "clusters"] {
        let cfg: SweepConfig = config::read(&dir.join(format!("{name}.json"))).unwrap();
        cfg.validate().unwrap();
    }
    let t: TrainConfig = config::read(&dir.join("train.json")).unwrap();
    t.kind().unwrap();
    let g: GenerateConfig = config::read(&dir.join("generate.json")).unwrap();
    g.dgp.validate().unwrap();
    let table1: SweepConfig = config::read(&dir.join("table1.json")).unwrap();
    assert_eq!(table1.cells().len() * table1.repetitions * table1.estimators.len(), 72);
}
