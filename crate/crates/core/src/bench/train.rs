use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{emit, BenchError, OutputFormat, RunConfig};
use crate::autodiff::{AutodiffError, Batch, Objective, ParamVector, Targets, Tensor};
use crate::data::{self, BatchPlan, Dataset, Standardizer};
use crate::models::{self, Model};
use crate::optim::{GuardEvent, OptimError, Optimizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// One optimiser step; `train_loss` is the mini-batch loss before it.
    Step,
    /// Full-split evaluation after `step` steps.
    Eval,
    /// The run stopped because a loss or gradient was not finite.
    Failure,
}

/// One row of run output. Regression losses are in standardised units when
/// targets are standardised; the `*_rmse_raw` fields are in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub kind: RecordKind,
    pub step: u64,
    pub epoch: u64,
    pub wall_time_s: f64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub train_rmse_raw: Option<f64>,
    pub val_rmse_raw: Option<f64>,
    pub test_rmse_raw: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub guard_event: Option<GuardEvent>,
}

impl MetricRecord {
    pub fn new(kind: RecordKind, step: u64, epoch: u64, wall_time_s: f64) -> Self {
        Self {
            kind,
            step,
            epoch,
            wall_time_s,
            train_loss: None,
            val_loss: None,
            test_loss: None,
            train_acc: None,
            val_acc: None,
            test_acc: None,
            train_rmse_raw: None,
            val_rmse_raw: None,
            test_rmse_raw: None,
            alpha: None,
            lambda: None,
            rho: None,
            guard_event: None,
        }
    }

    /// Copy with the wall-clock time zeroed, for determinism comparisons.
    pub fn without_time(&self) -> Self {
        Self { wall_time_s: 0.0, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: u64 },
    TimedOut,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub records: Vec<MetricRecord>,
    pub params: ParamVector,
    pub steps: u64,
    pub input_scaler: Option<Standardizer>,
    pub target_scaler: Option<Standardizer>,
    pub optimizer: Optimizer,
}

impl RunOutcome {
    pub fn evals(&self) -> impl Iterator<Item = &MetricRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Eval)
    }

    pub fn final_eval(&self) -> Option<&MetricRecord> {
        self.evals().last()
    }

    pub fn initial_eval(&self) -> Option<&MetricRecord> {
        self.evals().next()
    }

    pub fn guard_events(&self) -> usize {
        self.records.iter().filter(|r| r.guard_event.is_some()).count()
    }
}

/// Splits for a run; batch-free models use a single featureless example.
struct Splits {
    train: Dataset,
    val: Option<Dataset>,
    test: Option<Dataset>,
    input_scaler: Option<Standardizer>,
    target_scaler: Option<Standardizer>,
}

fn prepare(cfg: &RunConfig) -> Result<Splits, BenchError> {
    let Some(dc) = &cfg.dataset else {
        let unit = Batch::unit();
        let ds = Dataset::new("none", unit.inputs, unit.targets)?;
        return Ok(Splits { train: ds, val: None, test: None, input_scaler: None, target_scaler: None });
    };
    let ds = dc.load()?;
    let (si, st) = dc.standardization(ds.task);
    let p = data::prepare(&ds, &dc.split, si, st)?;
    let nonempty = |d: Dataset| (!d.is_empty()).then_some(d);
    let check = |d: &Dataset| {
        d.batch().and_then(|b| cfg.model.check_batch(&b).map_err(|e| data::DataError::Invalid(e.to_string())))
    };
    check(&p.train).map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(Splits {
        train: p.train,
        val: nonempty(p.val),
        test: nonempty(p.test),
        input_scaler: p.input_scaler,
        target_scaler: p.target_scaler,
    })
}

/// Initial parameters: Glorot for MLPs, otherwise `cfg.init` or `N(0, I)`.
pub fn initial_params(cfg: &RunConfig, obj: &Objective) -> Result<ParamVector, BenchError> {
    match (&cfg.model, &cfg.init) {
        (Model::Mlp(spec), _) => Ok(models::mlp_init(spec, cfg.seed)?),
        (_, Some(init)) => Ok(obj.params(init.clone())?),
        (_, None) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Ok(obj.params((0..obj.n_params()).map(|_| StandardNormal.sample(&mut rng)).collect())?)
        }
    }
}

fn accuracy(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| {
            let row = logits.row(r);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]));
            best == Some(l)
        })
        .count();
    correct as f64 / labels.len().max(1) as f64
}

fn raw_rmse(pred: &Tensor<f64>, target: &Tensor<f64>, scaler: &Standardizer) -> f64 {
    let (p, t) = (scaler.inverse(pred), scaler.inverse(target));
    let sse: f64 = p.data.iter().zip(&t.data).map(|(a, b)| (a - b).powi(2)).sum();
    (sse / t.rows.max(1) as f64).sqrt()
}

struct SplitMetrics {
    loss: f64,
    acc: Option<f64>,
    rmse_raw: Option<f64>,
}

fn measure(obj: &Objective, params: &ParamVector, ds: &Dataset, target_scaler: Option<&Standardizer>) -> Result<SplitMetrics, AutodiffError> {
    let batch = if ds.n_features() == 0 { Batch::unit() } else { ds.batch().map_err(|e| AutodiffError::InvalidBatch(e.to_string()))? };
    let loss = obj.eval_loss(params, &batch)?;
    if obj.model().is_batch_free() {
        return Ok(SplitMetrics { loss, acc: None, rmse_raw: None });
    }
    let out = obj.predict(params, &batch.inputs)?;
    let (acc, rmse_raw) = match (&batch.targets, target_scaler) {
        (Targets::Labels(l), _) => (Some(accuracy(&out, l)), None),
        (Targets::Real(t), Some(s)) => (None, Some(raw_rmse(&out, t, s))),
        (Targets::Real(_), None) => (None, None),
    };
    Ok(SplitMetrics { loss, acc, rmse_raw })
}

fn is_divergence(e: &OptimError) -> bool {
    matches!(
        e,
        OptimError::NonFiniteGradient
            | OptimError::Autodiff(AutodiffError::NonFinite { .. })
            | OptimError::Evaluation { source: AutodiffError::NonFinite { .. }, .. }
    )
}

/// Trains `cfg.model` with `cfg.optimizer` for `cfg.epochs` epochs or until
/// `cfg.max_runtime_s` elapses. Every configuration and data error is
/// reported before the first step.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutcome, BenchError> {
    cfg.validate()?;
    let splits = prepare(cfg)?;
    let obj = Objective::new(cfg.model.clone())?;
    let mut params = initial_params(cfg, &obj)?;
    let mut opt = Optimizer::new(cfg.optimizer.clone(), obj.n_params()).map_err(|e| BenchError::Config(e.to_string()))?;
    let batch_free = cfg.model.is_batch_free();
    let plan = cfg.dataset.as_ref().map_or(BatchPlan::new(1, 0), |d| BatchPlan {
        shuffle_seed: cfg.seed ^ d.batch.shuffle_seed,
        ..d.batch.clamped(splits.train.len())
    });
    let clock = Instant::now();
    let elapsed = || clock.elapsed().as_secs_f64();
    let mut records = Vec::new();
    let mut status = RunStatus::Completed;
    let mut step = 0u64;

    let eval = |params: &ParamVector, step: u64, epoch: u64, t: f64| -> Result<MetricRecord, AutodiffError> {
        let mut r = MetricRecord::new(RecordKind::Eval, step, epoch, t);
        let ts = splits.target_scaler.as_ref();
        let m = measure(&obj, params, &splits.train, ts)?;
        (r.train_loss, r.train_acc, r.train_rmse_raw) = (Some(m.loss), m.acc, m.rmse_raw);
        if let Some(v) = &splits.val {
            let m = measure(&obj, params, v, ts)?;
            (r.val_loss, r.val_acc, r.val_rmse_raw) = (Some(m.loss), m.acc, m.rmse_raw);
        }
        if let Some(v) = &splits.test {
            let m = measure(&obj, params, v, ts)?;
            (r.test_loss, r.test_acc, r.test_rmse_raw) = (Some(m.loss), m.acc, m.rmse_raw);
        }
        Ok(r)
    };
    let failure = |step: u64, epoch: u64, t: f64| MetricRecord::new(RecordKind::Failure, step, epoch, t);

    match eval(&params, 0, 0, elapsed()) {
        Ok(r) => records.push(r),
        Err(AutodiffError::NonFinite { .. }) => return Err(BenchError::Config("loss is not finite at initialisation".into())),
        Err(e) => return Err(e.into()),
    }

    'epochs: for epoch in 1..=cfg.epochs {
        let batches: Box<dyn Iterator<Item = Batch>> = if batch_free {
            Box::new(std::iter::once(Batch::unit()))
        } else {
            Box::new(data::batch_iter(&splits.train, &plan, epoch - 1))
        };
        for batch in batches {
            if cfg.max_runtime_s.is_some_and(|limit| elapsed() >= limit) {
                status = RunStatus::TimedOut;
                break 'epochs;
            }
            match opt.step(&obj, &params, &batch) {
                Ok((next, rep)) => {
                    step += 1;
                    let mut r = MetricRecord::new(RecordKind::Step, step, epoch, elapsed());
                    r.train_loss = Some(rep.loss);
                    r.alpha = Some(rep.alpha);
                    r.lambda = rep.lambda;
                    r.rho = rep.rho;
                    r.guard_event = rep.events.first().copied();
                    records.push(r);
                    params = next;
                }
                Err(e) if is_divergence(&e) => {
                    step += 1;
                    records.push(failure(step, epoch, elapsed()));
                    status = RunStatus::Diverged { step };
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
            if cfg.eval_every_steps.is_some_and(|k| step.is_multiple_of(k)) {
                match eval(&params, step, epoch, elapsed()) {
                    Ok(r) => records.push(r),
                    Err(AutodiffError::NonFinite { .. }) => {
                        records.push(failure(step, epoch, elapsed()));
                        status = RunStatus::Diverged { step };
                        break 'epochs;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        if cfg.eval_every_steps.is_none() {
            match eval(&params, step, epoch, elapsed()) {
                Ok(r) => records.push(r),
                Err(AutodiffError::NonFinite { .. }) => {
                    records.push(failure(step, epoch, elapsed()));
                    status = RunStatus::Diverged { step };
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    let last_is_eval = records.last().is_some_and(|r| r.kind == RecordKind::Eval && r.step == step);
    if !last_is_eval && !matches!(status, RunStatus::Diverged { .. }) {
        let epoch = records.last().map_or(0, |r| r.epoch);
        if let Ok(r) = eval(&params, step, epoch, elapsed()) {
            records.push(r);
        }
    }

    let outcome = RunOutcome {
        status,
        records,
        params,
        steps: step,
        input_scaler: splits.input_scaler,
        target_scaler: splits.target_scaler,
        optimizer: opt,
    };
    if let Some(path) = &cfg.output {
        write_outputs(&outcome, path)?;
    }
    Ok(outcome)
}

/// Normalisation maps persisted next to a run's records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub inputs: Option<Standardizer>,
    pub targets: Option<Standardizer>,
}

/// `run.jsonl` → `run.normalization.json`.
pub fn normalization_path(output: &std::path::Path) -> std::path::PathBuf {
    output.with_extension("normalization.json")
}

fn write_outputs(outcome: &RunOutcome, path: &std::path::Path) -> Result<(), BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?;
    }
    emit(&outcome.records, path, OutputFormat::for_path(path))?;
    if outcome.input_scaler.is_some() || outcome.target_scaler.is_some() {
        let norm = Normalization { inputs: outcome.input_scaler.clone(), targets: outcome.target_scaler.clone() };
        let np = normalization_path(path);
        let text = serde_json::to_string_pretty(&norm).map_err(|e| BenchError::Io(e.to_string()))?;
        std::fs::write(&np, text).map_err(|e| BenchError::Io(format!("{}: {e}", np.display())))?;
    }
    Ok(())
}
