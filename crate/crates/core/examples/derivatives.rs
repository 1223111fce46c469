//! Gradients, Hessian-vector products and Gauss-Newton products of a small
//! classifier, each checked against a cheaper-to-trust reference.

use adamqlr::autodiff::{dot, max_rel_error, CurvatureKind, Objective};
use adamqlr::data::{synthesize_with, SynthOptions, Task};
use adamqlr::models::{mlp_init, LossKind, MlpSpec, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = MlpSpec::new(vec![4, 8, 3], LossKind::SoftmaxCrossEntropy);
    let obj = Objective::new(Model::Mlp(spec.clone()))?;
    let p = mlp_init(&spec, 0)?;
    let opts = SynthOptions { n_classes: 3, ..Default::default() };
    let batch = synthesize_with(Task::Classification, 16, 4, 0, &opts)?.0.batch()?;

    let (loss, g) = obj.eval_grad(&p, &batch)?;
    let fd = obj.fd_grad(&p, &batch, 1e-5)?;
    println!("{} parameters, loss {loss:.5}", obj.n_params());
    println!("gradient vs central differences: {:.2e}", max_rel_error(g.values(), fd.values(), 1e-8));

    let v = g.values().to_vec();
    let hv = obj.hvp(&p, &batch, &v)?;
    let gv = obj.curvature_vp(&p, &batch, &v, CurvatureKind::GgnFisher)?;
    // the GGN drops the second-order network term, so it is PSD where the Hessian need not be
    println!("gᵀHg = {:+.5e}, gᵀGg = {:+.5e}", dot(&v, hv.values()), dot(&v, gv.values()));

    let n = obj.n_params();
    let dense = obj.explicit_matrix(&p, &batch, CurvatureKind::GgnFisher, 200)?;
    let gv_dense: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i * n + j] * v[j]).sum()).collect();
    println!("GGN product vs dense matrix: {:.2e}", max_rel_error(gv.values(), &gv_dense, 1e-12));
    Ok(())
}
