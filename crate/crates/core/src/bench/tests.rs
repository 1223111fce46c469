use super::*;
use crate::data::{BatchPlan, SynthOptions, Task};
use crate::models::{LossKind, MlpSpec, Model, RosenbrockSpec};
use crate::optim::{OptimizerConfig, QlrConfig};

fn linear_regression(optimizer: OptimizerConfig, epochs: u64) -> RunConfig {
    let mut dataset = DatasetConfig::new(DataSource::Synthetic {
        task: Task::Regression,
        n: 200,
        d: 3,
        seed: 4,
        options: SynthOptions { noise: 0.05, ..Default::default() },
    });
    dataset.batch = BatchPlan::new(50, 1);
    RunConfig {
        model: Model::Mlp(MlpSpec::new(vec![3, 1], LossKind::MeanSquaredError)),
        dataset: Some(dataset),
        optimizer,
        epochs,
        max_runtime_s: None,
        seed: 2,
        output: None,
        eval_every_steps: None,
        init: None,
    }
}

fn final_train(o: &RunOutcome) -> f64 {
    o.final_eval().unwrap().train_loss.unwrap()
}

#[test]
fn sgd_fits_linear_data_from_a_coarse_grid() {
    let losses: Vec<(f64, f64)> = [1e-3, 1e-2, 1e-1]
        .into_iter()
        .map(|lr| {
            let o = run_training(&linear_regression(OptimizerConfig::SgdMinimal { lr }, 20)).unwrap();
            (final_train(&o), o.initial_eval().unwrap().train_loss.unwrap())
        })
        .collect();
    let (best, initial) = losses.iter().copied().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    assert!(best <= 0.05 * initial, "{losses:?}");
}

#[test]
fn runs_are_deterministic() {
    let cfg = linear_regression(OptimizerConfig::adam_qlr_untuned(), 5);
    let a = run_training(&cfg).unwrap();
    let b = run_training(&cfg).unwrap();
    let strip = |o: &RunOutcome| o.records.iter().map(MetricRecord::without_time).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.params, b.params);
    let mut other = cfg.clone();
    other.seed = 3;
    assert_ne!(strip(&a), strip(&run_training(&other).unwrap()));
}

#[test]
fn qlr_records_respect_bounds() {
    let mut cfg = linear_regression(OptimizerConfig::adam_qlr_untuned(), 10);
    cfg.eval_every_steps = Some(3);
    let o = run_training(&cfg).unwrap();
    assert_eq!(o.status, RunStatus::Completed);
    let steps: Vec<&MetricRecord> = o.records.iter().filter(|r| r.kind == RecordKind::Step).collect();
    assert_eq!(steps.len(), 40);
    for r in steps {
        assert!(r.lambda.unwrap() >= 1e-8);
        let a = r.alpha.unwrap();
        assert!((0.0..=0.1).contains(&a));
    }
    assert!(o.records.windows(2).all(|w| w[0].wall_time_s <= w[1].wall_time_s));
    assert!(o.evals().skip(1).all(|r| r.step % 3 == 0 || r.step == 40));
    assert_eq!(o.initial_eval().unwrap().step, 0);
}

#[test]
fn evaluation_once_per_epoch_by_default() {
    let o = run_training(&linear_regression(OptimizerConfig::SgdMinimal { lr: 0.01 }, 4)).unwrap();
    let evals: Vec<(u64, u64)> = o.evals().map(|r| (r.step, r.epoch)).collect();
    assert_eq!(evals, vec![(0, 0), (4, 1), (8, 2), (12, 3), (16, 4)]);
    let last = o.final_eval().unwrap();
    assert!(last.val_loss.is_some() && last.test_loss.is_some() && last.val_rmse_raw.is_some());
}

#[test]
fn divergence_ends_the_run() {
    let o = run_training(&linear_regression(OptimizerConfig::SgdMinimal { lr: 1e3 }, 50)).unwrap();
    let RunStatus::Diverged { step } = o.status else { panic!("{:?}", o.status) };
    assert_eq!(o.records.last().unwrap().kind, RecordKind::Failure);
    assert_eq!(o.records.last().unwrap().step, step);
}

#[test]
fn runtime_limit_is_honoured() {
    let mut cfg = linear_regression(OptimizerConfig::SgdMinimal { lr: 0.01 }, 1_000_000);
    cfg.max_runtime_s = Some(0.05);
    let o = run_training(&cfg).unwrap();
    assert_eq!(o.status, RunStatus::TimedOut);
    assert_eq!(o.records.last().unwrap().kind, RecordKind::Eval);
}

#[test]
fn classification_reports_accuracy() {
    let mut dataset = DatasetConfig::new(DataSource::Synthetic {
        task: Task::Classification,
        n: 300,
        d: 4,
        seed: 0,
        options: SynthOptions { n_classes: 3, ..Default::default() },
    });
    dataset.batch = BatchPlan::new(64, 0);
    let cfg = RunConfig {
        model: Model::Mlp(MlpSpec::new(vec![4, 8, 3], LossKind::SoftmaxCrossEntropy)),
        dataset: Some(dataset),
        optimizer: OptimizerConfig::Adam { lr: 1e-2, hyper: Default::default() },
        epochs: 5,
        max_runtime_s: None,
        seed: 0,
        output: None,
        eval_every_steps: None,
        init: None,
    };
    let o = run_training(&cfg).unwrap();
    let last = o.final_eval().unwrap();
    assert!(last.train_acc.unwrap() > 0.9, "{last:?}");
    assert!(o.target_scaler.is_none() && o.input_scaler.is_none());
}

#[test]
fn batch_free_runs_take_one_step_per_epoch() {
    let cfg = RunConfig {
        model: Model::Rosenbrock(RosenbrockSpec::default()),
        dataset: None,
        optimizer: RosenbrockPreset::AdamqlrUntuned.config(),
        epochs: 30,
        max_runtime_s: None,
        seed: 0,
        output: None,
        eval_every_steps: None,
        init: Some(vec![1.0, -1.0]),
    };
    let o = run_training(&cfg).unwrap();
    assert_eq!(o.steps, 30);
    let traj = run_rosenbrock(&cfg.optimizer, 30, (1.0, -1.0)).unwrap();
    assert_eq!(o.params.values(), &[traj.last().x, traj.last().y]);
    let drawn = run_training(&RunConfig { init: None, ..cfg }).unwrap();
    assert_eq!(drawn.initial_eval().unwrap().step, 0);
}

#[test]
fn outputs_and_normalisation_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run.jsonl");
    let mut cfg = linear_regression(OptimizerConfig::adam_qlr_untuned(), 2);
    cfg.output = Some(out.clone());
    let o = run_training(&cfg).unwrap();
    let back: Vec<MetricRecord> = read_records(&out, OutputFormat::Jsonl).unwrap();
    assert_eq!(back, o.records);
    let norm: Normalization = serde_json::from_str(&std::fs::read_to_string(normalization_path(&out)).unwrap()).unwrap();
    assert_eq!(norm.inputs, o.input_scaler);
    assert_eq!(norm.targets, o.target_scaler);
}

#[test]
fn config_errors_precede_training() {
    let mut cfg = linear_regression(OptimizerConfig::SgdMinimal { lr: 0.1 }, 0);
    assert!(matches!(run_training(&cfg), Err(BenchError::Config(_))));
    cfg.epochs = 1;
    cfg.model = Model::Mlp(MlpSpec::new(vec![5, 1], LossKind::MeanSquaredError));
    assert!(matches!(run_training(&cfg), Err(BenchError::Config(_))));
    cfg.model = Model::Mlp(MlpSpec::new(vec![3, 1], LossKind::MeanSquaredError));
    cfg.dataset.as_mut().unwrap().source = DataSource::Csv { path: "/missing.csv".into(), n_features: 3, target_columns: 1 };
    let err = run_training(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let bad = RunConfig::from_json(r#"{"model": {"rosenbrock": {}}, "optimizer": {"kind": "qlr"}, "epochs": 3, "colour": 1}"#);
    assert_eq!(bad.unwrap_err().exit_code(), 2);
}

#[test]
fn config_json_mirrors_field_names() {
    let text = r#"{
        "model": {"mlp": {"layer_widths": [8, 50, 1], "loss": "mean_squared_error"}},
        "dataset": {"source": {"kind": "energy_like"}, "batch": {"batch_size": 3200}},
        "optimizer": {"kind": "qlr", "config": {"curvature": "ggn_fisher"}},
        "epochs": 2,
        "seed": 5
    }"#;
    let cfg = RunConfig::from_json(text).unwrap();
    assert_eq!(cfg.optimizer, OptimizerConfig::Qlr { config: QlrConfig::untuned(), hyper: Default::default() });
    let o = run_training(&cfg).unwrap();
    assert_eq!(o.steps, 2);
    let round = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&round).unwrap(), cfg);
}
