//! One-factor sweeps of AdamQLR's hyperparameters on the energy-like data.

use adamqlr::bench::{run_training, DataSource, DatasetConfig, RunConfig, Sweep};
use adamqlr::models::{LossKind, MlpSpec, Model};
use adamqlr::optim::OptimizerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = RunConfig {
        model: Model::Mlp(MlpSpec::new(vec![8, 50, 1], LossKind::MeanSquaredError)),
        dataset: Some(DatasetConfig::new(DataSource::EnergyLike { seed: 0 })),
        optimizer: OptimizerConfig::adam_qlr_untuned(),
        epochs: 50,
        max_runtime_s: None,
        seed: 0,
        output: None,
        eval_every_steps: None,
        init: None,
    };
    for sweep in [Sweep::AlphaMax, Sweep::Lambda0, Sweep::SteppingFactor, Sweep::RescaleK] {
        println!("{sweep:?}");
        for (value, cfg) in sweep.configs(&base)? {
            let out = run_training(&cfg)?;
            let loss = out.final_eval().and_then(|r| r.val_loss).unwrap_or(f64::NAN);
            println!("  {value:<8.1e} val loss {loss:.4}");
        }
    }
    Ok(())
}
