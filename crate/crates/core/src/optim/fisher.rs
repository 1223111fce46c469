//! Empirical Fisher diagonal and its agreement with Adam's second moment.

use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::autodiff::{Batch, Differentiable, ParamVector};

/// `diag F = (1/N) Σᵢ ∇ℓᵢ ⊙ ∇ℓᵢ`, with `ℓᵢ` the loss on example `i` alone.
pub fn empirical_fisher_diag<D: Differentiable + ?Sized>(
    obj: &D,
    params: &ParamVector,
    batch: &Batch,
) -> Result<Vec<f64>, OptimError> {
    if batch.is_empty() {
        return Err(OptimError::InvalidConfig("Fisher diagonal needs a non-empty batch".into()));
    }
    let mut acc = vec![0.0; params.len()];
    for i in 0..batch.len() {
        let (_, g) = obj.loss_and_grad(params, &batch.example(i))?;
        for (a, gi) in acc.iter_mut().zip(g.values()) {
            *a += gi * gi;
        }
    }
    let n = batch.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherAlignment {
    pub cosine: f64,
    /// Mean and spread of `ln(v̂ᵢ / Fᵢᵢ)` over coordinates where both are positive.
    pub log_ratio_mean: f64,
    pub log_ratio_std: f64,
    pub compared: usize,
}

pub fn fisher_alignment(fisher: &[f64], v_hat: &[f64]) -> Result<FisherAlignment, OptimError> {
    super::check_len(fisher.len(), v_hat.len())?;
    let dot: f64 = fisher.iter().zip(v_hat).map(|(a, b)| a * b).sum();
    let na = fisher.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = v_hat.iter().map(|b| b * b).sum::<f64>().sqrt();
    let cosine = if na > 0.0 && nb > 0.0 { dot / (na * nb) } else { 0.0 };
    let logs: Vec<f64> = fisher
        .iter()
        .zip(v_hat)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (b / a).ln())
        .collect();
    let (mean, std) = if logs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / logs.len() as f64;
        (m, var.sqrt())
    };
    Ok(FisherAlignment { cosine, log_ratio_mean: mean, log_ratio_std: std, compared: logs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Objective, Targets, Tensor};
    use crate::models::{LossKind, MlpSpec, Model};

    #[test]
    fn linear_regression_fisher_matches_closed_form() {
        // ℓᵢ = (w·xᵢ − yᵢ)², ∇ℓᵢ = 2rᵢxᵢ
        let spec = MlpSpec::new(vec![2, 1], LossKind::MeanSquaredError).without_bias();
        let obj = Objective::new(Model::Mlp(spec)).unwrap();
        let p = obj.params(vec![0.5, -1.0]).unwrap();
        let xs = [[1.0, 2.0], [-1.0, 0.5], [3.0, 1.0]];
        let ys = [0.0, 1.0, -2.0];
        let batch = Batch::new(
            Tensor::new(3, 2, xs.iter().flatten().copied().collect()),
            Targets::Real(Tensor::new(3, 1, ys.to_vec())),
        )
        .unwrap();
        let mut expected = [0.0; 2];
        for (x, y) in xs.iter().zip(ys) {
            let r = 0.5 * x[0] - x[1] - y;
            for j in 0..2 {
                expected[j] += (2.0 * r * x[j]).powi(2) / 3.0;
            }
        }
        let got = empirical_fisher_diag(&obj, &p, &batch).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn alignment_of_proportional_vectors() {
        let a = fisher_alignment(&[1.0, 2.0, 4.0], &[2.0, 4.0, 8.0]).unwrap();
        assert!((a.cosine - 1.0).abs() < 1e-15);
        assert!((a.log_ratio_mean - 2f64.ln()).abs() < 1e-15);
        assert!(a.log_ratio_std < 1e-15);
        assert_eq!(a.compared, 3);
        let b = fisher_alignment(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(b.cosine, 0.0);
        assert_eq!(b.compared, 0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let obj = Objective::new(Model::Mlp(MlpSpec::new(vec![1, 1], LossKind::MeanSquaredError))).unwrap();
        let p = obj.params(vec![0.0, 0.0]).unwrap();
        let empty = Batch::new(Tensor::new(0, 1, vec![]), Targets::Real(Tensor::new(0, 1, vec![])));
        if let Ok(empty) = empty {
            assert!(empirical_fisher_diag(&obj, &p, &empty).is_err());
        }
    }
}
