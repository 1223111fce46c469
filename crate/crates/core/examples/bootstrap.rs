//! Five seeds of the same run, summarised as a bootstrapped median trend.

use adamqlr::bench::{bootstrap_trend, run_training, Align, DataSource, DatasetConfig, RunConfig, Series};
use adamqlr::data::BatchPlan;
use adamqlr::models::{LossKind, MlpSpec, Model};
use adamqlr::optim::OptimizerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut runs = Vec::new();
    for seed in 0..5 {
        let mut dataset = DatasetConfig::new(DataSource::EnergyLike { seed: 0 });
        dataset.batch = BatchPlan::new(128, 0);
        let cfg = RunConfig {
            model: Model::Mlp(MlpSpec::new(vec![8, 50, 1], LossKind::MeanSquaredError)),
            dataset: Some(dataset),
            optimizer: OptimizerConfig::adam_qlr_untuned(),
            epochs: 10,
            max_runtime_s: None,
            seed,
            output: None,
            eval_every_steps: None,
            init: None,
        };
        let out = run_training(&cfg)?;
        runs.push(Series::from_records(&out.records, |r| r.train_loss, Align::Step));
    }
    let trend = bootstrap_trend(&runs, 50, 0, Align::Step)?;
    println!("step   median-trend mean ± std");
    for ((t, m), s) in trend.t.iter().zip(&trend.mean).zip(&trend.std) {
        println!("{t:>4}   {m:.4} ± {s:.4}");
    }
    Ok(())
}
