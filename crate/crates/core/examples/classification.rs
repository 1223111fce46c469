//! A 784-50-10 classifier trained with AdamQLR. Reads Fashion-MNIST from
//! `$FASHION_MNIST_DIR` when present, otherwise uses synthetic blobs.

use std::path::PathBuf;

use adamqlr::bench::{run_training, DataSource, DatasetConfig, RecordKind, RunConfig};
use adamqlr::data::{BatchPlan, SynthOptions, Task};
use adamqlr::models::{LossKind, MlpSpec, Model};
use adamqlr::optim::OptimizerConfig;

fn source() -> DataSource {
    if let Some(dir) = std::env::var_os("FASHION_MNIST_DIR").map(PathBuf::from) {
        return DataSource::Idx { images: dir.join("train-images-idx3-ubyte"), labels: dir.join("train-labels-idx1-ubyte") };
    }
    let options = SynthOptions { n_classes: 10, separation: 0.1, ..Default::default() };
    DataSource::Synthetic { task: Task::Classification, n: 6000, d: 784, seed: 0, options }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut dataset = DatasetConfig::new(source());
    dataset.max_rows = Some(6000);
    dataset.batch = BatchPlan::new(3200, 0);
    let cfg = RunConfig {
        model: Model::Mlp(MlpSpec::new(vec![784, 50, 10], LossKind::SoftmaxCrossEntropy)),
        dataset: Some(dataset),
        optimizer: OptimizerConfig::adam_qlr_untuned(),
        epochs: 10,
        max_runtime_s: None,
        seed: 0,
        output: None,
        eval_every_steps: None,
        init: None,
    };
    let out = run_training(&cfg)?;
    for r in out.evals() {
        println!(
            "epoch {:>2}  train loss {:.4}  train acc {:.3}  val acc {:.3}",
            r.epoch,
            r.train_loss.unwrap_or(f64::NAN),
            r.train_acc.unwrap_or(f64::NAN),
            r.val_acc.unwrap_or(f64::NAN)
        );
    }
    let lambdas: Vec<f64> = out.records.iter().filter(|r| r.kind == RecordKind::Step).filter_map(|r| r.lambda).collect();
    println!("damping went from {:.1e} to {:.1e}", lambdas[0], lambdas[lambdas.len() - 1]);
    Ok(())
}
