use serde::{Deserialize, Serialize};

use super::{check_len, OptimError};

/// Adam's moment decay rates and denominator offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<(), OptimError> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(OptimError::InvalidConfig(format!(
                "Adam needs beta1, beta2 in [0, 1) and finite epsilon >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// First and second moment buffers and the completed step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Bias-corrected second moment `v / (1 − β₂ᵗ)`; zeros before the first
    /// step.
    pub fn v_hat(&self, h: &AdamHyper) -> Vec<f64> {
        if self.t == 0 {
            return vec![0.0; self.len()];
        }
        let c = 1.0 - h.beta2.powf(self.t as f64);
        self.v.iter().map(|v| v / c).collect()
    }
}

/// Advances the moment buffers with gradient `g` and returns the new state
/// with the bias-corrected direction `m̂ / (√v̂ + ε)`. The input state is
/// left untouched, including on error.
pub fn adam_direction(state: &AdamState, g: &[f64], h: &AdamHyper) -> Result<(AdamState, Vec<f64>), OptimError> {
    check_len(state.len(), g.len())?;
    if g.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::NonFiniteGradient);
    }
    let t = state.t + 1;
    let c1 = 1.0 - h.beta1.powf(t as f64);
    let c2 = 1.0 - h.beta2.powf(t as f64);
    let mut m = Vec::with_capacity(g.len());
    let mut v = Vec::with_capacity(g.len());
    let mut d = Vec::with_capacity(g.len());
    for ((&gi, &mi), &vi) in g.iter().zip(&state.m).zip(&state.v) {
        let mi = h.beta1 * mi + (1.0 - h.beta1) * gi;
        let vi = h.beta2 * vi + (1.0 - h.beta2) * gi * gi;
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        let denom = v_hat.sqrt() + h.epsilon;
        // 0/0 only arises for a coordinate whose gradient history is all zero
        d.push(if denom == 0.0 { 0.0 } else { m_hat / denom });
        m.push(mi);
        v.push(vi);
    }
    Ok((AdamState { m, v, t }, d))
}
