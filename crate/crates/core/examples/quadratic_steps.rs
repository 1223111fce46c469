//! The learning-rate and damping mechanics on an exactly quadratic loss,
//! one step at a time.

use adamqlr::autodiff::{Batch, CurvatureKind, Objective};
use adamqlr::models::{Model, QuadraticSpec};
use adamqlr::optim::{qlr_step, AdamHyper, DirectionKind, QlrConfig, QlrState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let obj = Objective::new(Model::Quadratic(QuadraticSpec::diagonal(&[2.0, 8.0])))?;
    let cfg = QlrConfig {
        alpha_max: f64::INFINITY,
        ..QlrConfig::untuned().with_curvature(CurvatureKind::Hessian).with_direction(DirectionKind::Sgd)
    };
    let batch = Batch::unit();
    let mut p = obj.params(vec![1.0, 1.0])?;
    let mut state = QlrState::new(obj.n_params(), &cfg);
    println!("step   f_before       alpha      rho        lambda");
    for _ in 0..8 {
        let (next, s, d) = qlr_step(&obj, &p, &batch, &state, &cfg, &AdamHyper::default())?;
        println!(
            "{:>4}   {:<12.5e} {:<10.6} {:<10} {:.3e}",
            s.steps,
            d.f_before,
            d.alpha,
            d.rho.map_or("-".into(), |r| format!("{r:.6}")),
            d.lambda
        );
        (p, state) = (next, s);
    }
    println!("first step is exact line search: alpha = 68/520 = {:.6}", 68.0 / 520.0);
    Ok(())
}
