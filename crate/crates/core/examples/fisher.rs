//! How closely Adam's second-moment estimate tracks the empirical Fisher
//! diagonal, for per-example and larger minibatches.

use adamqlr::bench::{fisher_demo_config, fisher_diagnostic};
use adamqlr::data::BatchPlan;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for batch in [1, 10, 100] {
        let mut cfg = fisher_demo_config(0);
        if let Some(d) = cfg.dataset.as_mut() {
            d.batch = BatchPlan::new(batch, 0);
        }
        let r = fisher_diagnostic(&cfg, 100, 2000)?;
        println!(
            "batch {batch:>3}: cosine {:.4}, log(v̂/F) mean {:+.3} std {:.3} over {} coordinates",
            r.alignment.cosine, r.alignment.log_ratio_mean, r.alignment.log_ratio_std, r.alignment.compared
        );
    }
    Ok(())
}
