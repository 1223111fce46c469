//! AdamQLR (untuned) against Adam on the energy-like regression table,
//! reporting RMSE in the original target units.

use adamqlr::bench::{run_training, DataSource, DatasetConfig, RunConfig};
use adamqlr::data::BatchPlan;
use adamqlr::models::{LossKind, MlpSpec, Model};
use adamqlr::optim::{AdamHyper, OptimizerConfig};

fn config(optimizer: OptimizerConfig, batch: usize) -> RunConfig {
    let mut dataset = DatasetConfig::new(DataSource::EnergyLike { seed: 0 });
    dataset.batch = BatchPlan::new(batch, 0);
    RunConfig {
        model: Model::Mlp(MlpSpec::new(vec![8, 50, 1], LossKind::MeanSquaredError)),
        dataset: Some(dataset),
        optimizer,
        epochs: 200,
        max_runtime_s: Some(60.0),
        seed: 0,
        output: None,
        eval_every_steps: None,
        init: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runs = [
        config(OptimizerConfig::adam_qlr_untuned(), 3200),
        config(OptimizerConfig::Adam { lr: 1e-2, hyper: AdamHyper::default() }, 3200),
        config(OptimizerConfig::Adam { lr: 1e-2, hyper: AdamHyper::default() }, 64),
    ];
    for cfg in runs {
        let out = run_training(&cfg)?;
        let r = out.final_eval().expect("a completed run ends with an evaluation");
        println!(
            "{:<18} batch {:<5} {:>5} steps  train rmse {:.4}  val rmse {:.4}  guard events {}",
            cfg.optimizer.label(),
            cfg.dataset.as_ref().map_or(0, |d| d.batch.batch_size),
            out.steps,
            r.train_rmse_raw.unwrap_or(f64::NAN),
            r.val_rmse_raw.unwrap_or(f64::NAN),
            out.guard_events()
        );
    }
    Ok(())
}
