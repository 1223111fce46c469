use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{initial_params, BenchError, RunConfig};
use crate::autodiff::{max_rel_error, Batch, CurvatureKind, Objective, ParamVector, DEFAULT_EXPLICIT_CAP};
use crate::data::{self, BatchPlan, Task};
use crate::models::{mlp_init, LossKind, Model};
use crate::optim::{empirical_fisher_diag, fisher_alignment, FisherAlignment, Optimizer, OptimizerConfig};

/// Agreement of analytic derivatives with finite-difference and dense
/// references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub n_params: usize,
    /// Gradient against central differences of the loss.
    pub grad_rel_error: f64,
    /// Hessian-vector product against central differences of the gradient.
    pub hvp_rel_error: f64,
    /// Gauss-Newton product against the dense matrix, when it fits under the
    /// explicit-assembly cap and the model supports it.
    pub ggn_rel_error: Option<f64>,
}

fn random_batch(model: &Model, rows: usize, seed: u64) -> Result<Batch, BenchError> {
    let Model::Mlp(spec) = model else { return Ok(Batch::unit()) };
    let task = match spec.loss {
        LossKind::MeanSquaredError => Task::Regression,
        LossKind::SoftmaxCrossEntropy => Task::Classification,
    };
    let opts = data::SynthOptions { n_targets: spec.n_outputs(), n_classes: spec.n_outputs(), ..Default::default() };
    let (ds, _) = data::synthesize_with(task, rows, spec.n_inputs(), seed, &opts)?;
    Ok(ds.batch()?)
}

/// Random point of `model`: Glorot for MLPs, `N(0, I)` otherwise.
pub fn random_point(obj: &Objective, seed: u64) -> Result<ParamVector, BenchError> {
    if let Model::Mlp(spec) = obj.model() {
        return Ok(mlp_init(spec, seed)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(obj.params((0..obj.n_params()).map(|_| StandardNormal.sample(&mut rng)).collect())?)
}

/// Compares derivatives at a seeded random point and batch of `rows`
/// examples.
pub fn gradcheck(model: &Model, rows: usize, seed: u64) -> Result<GradcheckReport, BenchError> {
    let obj = Objective::new(model.clone())?;
    let batch = random_batch(model, rows, seed)?;
    let p = random_point(&obj, seed)?;
    let (_, g) = obj.eval_grad(&p, &batch)?;
    let fd = obj.fd_grad(&p, &batch, 1e-5)?;
    let grad_rel_error = max_rel_error(g.values(), fd.values(), 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let v: Vec<f64> = (0..obj.n_params()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let hv = obj.hvp(&p, &batch, &v)?;
    let h = 1e-5;
    let shifted = |s: f64| -> Result<Vec<f64>, BenchError> {
        let q = p.with_values(p.values().iter().zip(&v).map(|(a, b)| a + s * b).collect())?;
        Ok(obj.eval_grad(&q, &batch)?.1.into_values())
    };
    let (up, down) = (shifted(h)?, shifted(-h)?);
    let fd_hv: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let hvp_rel_error = max_rel_error(hv.values(), &fd_hv, 1e-6);

    let ggn_rel_error = match obj.explicit_matrix(&p, &batch, CurvatureKind::GgnFisher, DEFAULT_EXPLICIT_CAP) {
        Ok(m) => {
            let n = obj.n_params();
            let dense: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum()).collect();
            let cv = obj.curvature_vp(&p, &batch, &v, CurvatureKind::GgnFisher)?;
            Some(max_rel_error(cv.values(), &dense, 1e-12))
        }
        Err(_) => None,
    };
    Ok(GradcheckReport { n_params: obj.n_params(), grad_rel_error, hvp_rel_error, ggn_rel_error })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub steps: u64,
    pub examples: usize,
    pub alignment: FisherAlignment,
}

/// Trains with the Adam (or Adam-direction QLR) optimizer of `cfg` for
/// `steps` mini-batch steps, then compares Adam's bias-corrected second
/// moment with the empirical Fisher diagonal over at most `max_examples`
/// training rows.
pub fn fisher_diagnostic(cfg: &RunConfig, steps: u64, max_examples: usize) -> Result<FisherReport, BenchError> {
    cfg.validate()?;
    let hyper = match &cfg.optimizer {
        OptimizerConfig::Adam { hyper, .. } | OptimizerConfig::Qlr { hyper, .. } => *hyper,
        _ => return Err(BenchError::Config("the Fisher diagnostic needs an Adam-based optimizer".into())),
    };
    let Some(dc) = &cfg.dataset else {
        return Err(BenchError::Config("the Fisher diagnostic needs a dataset".into()));
    };
    let ds = dc.load()?;
    let (si, st) = dc.standardization(ds.task);
    let train = data::prepare(&ds, &dc.split, si, st)?.train;
    let obj = Objective::new(cfg.model.clone())?;
    let mut p = initial_params(cfg, &obj)?;
    let mut opt = Optimizer::new(cfg.optimizer.clone(), obj.n_params()).map_err(|e| BenchError::Config(e.to_string()))?;
    let plan = BatchPlan { shuffle_seed: cfg.seed ^ dc.batch.shuffle_seed, ..dc.batch.clamped(train.len()) };
    let mut done = 0;
    let mut epoch = 0;
    while done < steps {
        for batch in data::batch_iter(&train, &plan, epoch) {
            if done == steps {
                break;
            }
            p = opt.step(&obj, &p, &batch)?.0;
            done += 1;
        }
        epoch += 1;
    }
    let rows: Vec<usize> = (0..train.len().min(max_examples)).collect();
    let batch = train.select(&rows).batch()?;
    let fisher = empirical_fisher_diag(&obj, &p, &batch)?;
    let adam = opt.adam_state().expect("Adam-based optimizer keeps moments");
    let alignment = fisher_alignment(&fisher, &adam.v_hat(&hyper))?;
    Ok(FisherReport { steps, examples: rows.len(), alignment })
}

/// Linear-softmax run used by the Fisher diagnostic: seeded blobs and Adam.
pub fn fisher_demo_config(seed: u64) -> RunConfig {
    use super::{DataSource, DatasetConfig};
    let mut dataset = DatasetConfig::new(DataSource::Synthetic {
        task: Task::Classification,
        n: 2000,
        d: 20,
        seed,
        options: data::SynthOptions { n_classes: 5, separation: 0.5, ..Default::default() },
    });
    // per-example minibatches: v̂ then averages the same squared gradients as
    // the empirical Fisher
    dataset.batch = BatchPlan::new(1, 0);
    RunConfig {
        model: Model::Mlp(crate::models::MlpSpec::new(vec![20, 5], LossKind::SoftmaxCrossEntropy)),
        dataset: Some(dataset),
        optimizer: OptimizerConfig::Adam { lr: 1e-3, hyper: Default::default() },
        epochs: 1,
        max_runtime_s: None,
        seed,
        output: None,
        eval_every_steps: None,
        init: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MlpSpec, RosenbrockSpec};

    #[test]
    fn gradcheck_passes_on_small_models() {
        for model in [
            Model::Mlp(MlpSpec::new(vec![3, 4, 2], LossKind::SoftmaxCrossEntropy)),
            Model::Mlp(MlpSpec::new(vec![3, 4, 1], LossKind::MeanSquaredError)),
            Model::Rosenbrock(RosenbrockSpec::default()),
        ] {
            let r = gradcheck(&model, 6, 1).unwrap();
            assert!(r.grad_rel_error < 1e-6, "{r:?}");
            assert!(r.hvp_rel_error < 1e-4, "{r:?}");
            assert!(r.ggn_rel_error.unwrap() < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn fisher_diagnostic_requires_adam() {
        let mut cfg = fisher_demo_config(0);
        cfg.optimizer = OptimizerConfig::SgdMinimal { lr: 0.1 };
        assert!(matches!(fisher_diagnostic(&cfg, 5, 10), Err(BenchError::Config(_))));
    }
}
