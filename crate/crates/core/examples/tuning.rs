//! Random search with successive halving over Adam's learning rate and the
//! batch size on synthetic regression data.

use adamqlr::bench::{random_search, DataSource, DatasetConfig, Halving, RunConfig, SearchObjective, SearchSpace};
use adamqlr::data::Task;
use adamqlr::models::{LossKind, MlpSpec, Model};
use adamqlr::optim::{AdamHyper, OptimizerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = DataSource::Synthetic { task: Task::Regression, n: 800, d: 6, seed: 1, options: Default::default() };
    let base = RunConfig {
        model: Model::Mlp(MlpSpec::new(vec![6, 16, 1], LossKind::MeanSquaredError)),
        dataset: Some(DatasetConfig::new(source)),
        optimizer: OptimizerConfig::Adam { lr: 1e-3, hyper: AdamHyper::default() },
        epochs: 20,
        max_runtime_s: None,
        seed: 0,
        output: None,
        eval_every_steps: None,
        init: None,
    };
    let space = SearchSpace::standard(&base.optimizer, true);
    let result = random_search(&space, 24, SearchObjective::FinalValLoss, &base, 0, Some(&Halving::default()))?;
    println!("{}", result.method);
    let mut finalists: Vec<_> = result.trials.iter().filter(|t| t.epochs == base.epochs).collect();
    finalists.sort_by(|a, b| a.score.unwrap_or(f64::INFINITY).total_cmp(&b.score.unwrap_or(f64::INFINITY)));
    for t in finalists {
        let OptimizerConfig::Adam { lr, .. } = t.config.optimizer else { unreachable!() };
        let batch = t.config.dataset.as_ref().map_or(0, |d| d.batch.batch_size);
        println!("trial {:>2}: lr {lr:.2e} batch {batch:<5} val loss {:.4}", t.index, t.score.unwrap_or(f64::NAN));
    }
    println!("best: trial {}", result.best.index);
    Ok(())
}
