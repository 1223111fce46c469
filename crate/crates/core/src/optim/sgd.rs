use super::{check_len, OptimError};

/// One SGD step with heavy-ball momentum and L2 weight decay:
/// `buf' = momentum·buf + g + weight_decay·θ`, `θ' = θ − lr·buf'`.
pub fn sgd_step(
    params: &[f64],
    g: &[f64],
    lr: f64,
    momentum_buf: &[f64],
    momentum: f64,
    weight_decay: f64,
) -> Result<(Vec<f64>, Vec<f64>), OptimError> {
    check_len(params.len(), g.len())?;
    check_len(params.len(), momentum_buf.len())?;
    let scalars_ok = [lr, momentum, weight_decay].iter().all(|x| x.is_finite());
    if !scalars_ok || g.iter().chain(params).chain(momentum_buf).any(|x| !x.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    let buf: Vec<f64> = momentum_buf
        .iter()
        .zip(g)
        .zip(params)
        .map(|((&b, &gi), &p)| momentum * b + gi + weight_decay * p)
        .collect();
    let next = params.iter().zip(&buf).map(|(&p, &b)| p - lr * b).collect();
    Ok((next, buf))
}
