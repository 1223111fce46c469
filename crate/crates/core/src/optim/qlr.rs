//! Quadratic-model learning rates with Levenberg-Marquardt damping.
//!
//! Each step fixes a direction `d` (Adam's, or the raw gradient), then picks
//! the step size minimising the damped local model
//! `M(θ − αd) = f(θ) − α gᵀd + ½α² dᵀ(C + λI)d`, which gives
//! `α = gᵀd / dᵀ(C + λI)d`. After the step the achieved loss change is
//! compared with the model's prediction; the ratio `ρ` shrinks `λ` when the
//! model is trustworthy (`ρ > ¾`) and grows it when it is not (`ρ < ¼`).
//!
//! Ordering within a step: the new parameters are computed first, the loss
//! is re-evaluated there on the same batch, and the damping update takes
//! effect from the next step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::adam::{adam_direction, AdamHyper, AdamState};
use super::OptimError;
use crate::autodiff::{dot, AutodiffError, Batch, CurvatureKind, Differentiable, ParamVector};

pub const LAMBDA_MIN: f64 = 1e-8;
pub const LAMBDA_MAX: f64 = 1e10;
/// `|ΔM|` below `RHO_GUARD·max(1, |f|)` is treated as no predicted change.
pub const RHO_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Adam,
    Sgd,
}

/// Conditions under which a step departs from the plain update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GuardEvent {
    /// `gᵀd ≤ 0`: no step is taken.
    NonDescentDirection,
    /// `dᵀ(C + λI)d ≤ 0`: the step is fixed at `k·α_max`.
    NonConvexDirection,
    /// The model predicted (almost) no change, so `ρ` is undefined.
    DegenerateModelChange,
    /// The loss at the candidate point was not finite; the step was undone.
    RejectedNonFinite,
    /// `λ` was clamped at its upper bound.
    DampingCeiling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QlrConfig {
    pub curvature: CurvatureKind,
    pub lambda0: f64,
    pub omega_dec: f64,
    pub omega_inc: f64,
    pub alpha_max: f64,
    /// Multiplies the learning rate after clipping.
    pub rescale_k: f64,
    /// When false, `λ` stays at `lambda0` throughout.
    pub damped: bool,
    pub direction: DirectionKind,
}

impl Default for QlrConfig {
    fn default() -> Self {
        Self::untuned()
    }
}

impl QlrConfig {
    /// Fisher curvature, `λ₀ = 10⁻³`, `ω_dec = ½ = 1/ω_inc`, `α_max = 0.1`.
    pub fn untuned() -> Self {
        Self {
            curvature: CurvatureKind::GgnFisher,
            lambda0: 1e-3,
            omega_dec: 0.5,
            omega_inc: 2.0,
            alpha_max: 0.1,
            rescale_k: 1.0,
            damped: true,
            direction: DirectionKind::Adam,
        }
    }

    pub fn with_curvature(mut self, curvature: CurvatureKind) -> Self {
        self.curvature = curvature;
        self
    }

    pub fn with_direction(mut self, direction: DirectionKind) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |what: &str| Err(OptimError::InvalidConfig(what.to_string()));
        if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() {
            return bad("lambda0 must be a positive finite number");
        }
        if !(self.omega_dec > 0.0 && self.omega_dec <= 1.0) {
            return bad("omega_dec must lie in (0, 1]");
        }
        if !(self.omega_inc >= 1.0) || !self.omega_inc.is_finite() {
            return bad("omega_inc must be finite and at least 1");
        }
        if !(self.alpha_max > 0.0) {
            return bad("alpha_max must be positive");
        }
        if !(self.rescale_k > 0.0) || !self.rescale_k.is_finite() {
            return bad("rescale_k must be positive and finite");
        }
        Ok(())
    }

    /// Largest learning rate any step may apply.
    pub fn alpha_ceiling(&self) -> f64 {
        self.rescale_k * self.alpha_max
    }
}

/// `α = gᵀd / (dᵀCd + λ dᵀd)`.
pub fn select_learning_rate(g_dot_d: f64, d_cd: f64, d_dot_d: f64, lambda: f64) -> Result<f64, GuardEvent> {
    if !(g_dot_d > 0.0) {
        return Err(GuardEvent::NonDescentDirection);
    }
    let denom = d_cd + lambda * d_dot_d;
    if !(denom > 0.0) {
        return Err(GuardEvent::NonConvexDirection);
    }
    Ok(g_dot_d / denom)
}

/// Clips to `α_max`, then rescales by `k`.
pub fn apply_lr_policy(alpha_raw: f64, cfg: &QlrConfig) -> f64 {
    cfg.rescale_k * alpha_raw.min(cfg.alpha_max)
}

/// `M(θ − αd) − M(θ) = −α gᵀd + ½α² dᵀ(C + λI)d`.
pub fn quadratic_model_change(alpha: f64, g_dot_d: f64, d_cld: f64) -> f64 {
    -alpha * g_dot_d + 0.5 * alpha * alpha * d_cld
}

/// Reduction ratio `Δf / ΔM`.
pub fn compute_rho(f_change: f64, m_change: f64, f_before: f64) -> Result<f64, GuardEvent> {
    if !(m_change.abs() > RHO_GUARD * f_before.abs().max(1.0)) {
        return Err(GuardEvent::DegenerateModelChange);
    }
    Ok(f_change / m_change)
}

pub fn clamp_lambda(lambda: f64) -> f64 {
    lambda.clamp(LAMBDA_MIN, LAMBDA_MAX)
}

pub fn update_damping(rho: f64, lambda: f64, cfg: &QlrConfig) -> f64 {
    let next = if rho > 0.75 {
        cfg.omega_dec * lambda
    } else if rho < 0.25 {
        cfg.omega_inc * lambda
    } else {
        lambda
    };
    clamp_lambda(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QlrState {
    pub lambda: f64,
    pub adam: Option<AdamState>,
    pub last_alpha: f64,
    pub last_rho: Option<f64>,
    pub steps: u64,
    pub events: BTreeMap<GuardEvent, u64>,
}

impl QlrState {
    pub fn new(n_params: usize, cfg: &QlrConfig) -> Self {
        Self {
            lambda: clamp_lambda(cfg.lambda0),
            adam: match cfg.direction {
                DirectionKind::Adam => Some(AdamState::new(n_params)),
                DirectionKind::Sgd => None,
            },
            last_alpha: 0.0,
            last_rho: None,
            steps: 0,
            events: BTreeMap::new(),
        }
    }

    pub fn event_count(&self, event: GuardEvent) -> u64 {
        self.events.get(&event).copied().unwrap_or(0)
    }

    /// Number of parameter-sized vectors kept between steps.
    pub fn persistent_vectors(&self) -> usize {
        if self.adam.is_some() {
            2
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Learning rate actually applied (0 for skipped or rejected steps).
    pub alpha: f64,
    /// Damping in force for the next step.
    pub lambda: f64,
    pub rho: Option<f64>,
    pub g_dot_d: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub events: Vec<GuardEvent>,
}

fn at_step(step: u64) -> impl Fn(AutodiffError) -> OptimError {
    move |source| OptimError::Evaluation { step, source }
}

/// One AdamQLR (or SGD-QLR) step on `batch`.
///
/// Uses one gradient evaluation, one curvature-vector product and one extra
/// loss evaluation at the candidate point.
pub fn qlr_step<D: Differentiable + ?Sized>(
    obj: &D,
    params: &ParamVector,
    batch: &Batch,
    state: &QlrState,
    cfg: &QlrConfig,
    hyper: &AdamHyper,
) -> Result<(ParamVector, QlrState, StepDiagnostics), OptimError> {
    let step = state.steps + 1;
    let (f_before, g) = obj.loss_and_grad(params, batch).map_err(at_step(step))?;
    let (adam_next, d) = match (cfg.direction, &state.adam) {
        (DirectionKind::Adam, Some(adam)) => {
            let (next, d) = adam_direction(adam, g.values(), hyper)?;
            (Some(next), d)
        }
        (DirectionKind::Adam, None) => {
            return Err(OptimError::InvalidConfig("Adam direction requested but state has no Adam buffers".into()))
        }
        (DirectionKind::Sgd, _) => (None, g.values().to_vec()),
    };
    finish(obj, params, batch, state, adam_next, f_before, g.values(), &d, cfg)
}

/// Applies the learning-rate and damping logic to a caller-supplied
/// direction `d`, given the loss `f_before` and gradient `g` at `params`.
#[allow(clippy::too_many_arguments)]
pub fn qlr_step_with_direction<D: Differentiable + ?Sized>(
    obj: &D,
    params: &ParamVector,
    batch: &Batch,
    state: &QlrState,
    cfg: &QlrConfig,
    f_before: f64,
    g: &[f64],
    d: &[f64],
) -> Result<(ParamVector, QlrState, StepDiagnostics), OptimError> {
    super::check_len(params.len(), g.len())?;
    super::check_len(params.len(), d.len())?;
    finish(obj, params, batch, state, state.adam.clone(), f_before, g, d, cfg)
}

#[allow(clippy::too_many_arguments)]
fn finish<D: Differentiable + ?Sized>(
    obj: &D,
    params: &ParamVector,
    batch: &Batch,
    prior: &QlrState,
    adam_next: Option<AdamState>,
    f_before: f64,
    g: &[f64],
    d: &[f64],
    cfg: &QlrConfig,
) -> Result<(ParamVector, QlrState, StepDiagnostics), OptimError> {
    let step = prior.steps + 1;
    let lambda = prior.lambda;
    let g_dot_d = dot(g, d);
    let mut events = Vec::new();

    let settle = |mut next: QlrState, events: Vec<GuardEvent>, alpha: f64, rho: Option<f64>, f_after: f64| {
        next.steps = step;
        next.last_alpha = alpha;
        next.last_rho = rho;
        for &e in &events {
            *next.events.entry(e).or_insert(0) += 1;
        }
        let diag = StepDiagnostics { alpha, lambda: next.lambda, rho, g_dot_d, f_before, f_after, events };
        (next, diag)
    };

    if !(g_dot_d > 0.0) {
        events.push(GuardEvent::NonDescentDirection);
        let next = QlrState { adam: adam_next, ..prior.clone() };
        let (next, diag) = settle(next, events, 0.0, None, f_before);
        return Ok((params.clone(), next, diag));
    }

    let cd = obj.curvature_product(params, batch, d, cfg.curvature).map_err(at_step(step))?;
    let d_cd = dot(d, cd.values());
    let d_dd = dot(d, d);
    let alpha = match select_learning_rate(g_dot_d, d_cd, d_dd, lambda) {
        Ok(raw) => apply_lr_policy(raw, cfg),
        Err(event) => {
            events.push(event);
            cfg.alpha_ceiling()
        }
    };

    let theta: Vec<f64> = params.values().iter().zip(d).map(|(p, di)| p - alpha * di).collect();
    let evaluated = match params.with_values(theta) {
        Ok(candidate) => match obj.loss(&candidate, batch) {
            Ok(f) => Some((candidate, f)),
            Err(AutodiffError::NonFinite { .. }) => None,
            Err(e) => return Err(at_step(step)(e)),
        },
        Err(AutodiffError::NonFinite { .. }) => None,
        Err(e) => return Err(at_step(step)(e)),
    };

    let Some((candidate, f_after)) = evaluated else {
        events.push(GuardEvent::RejectedNonFinite);
        let mut next = prior.clone();
        if cfg.damped {
            let grown = cfg.omega_inc * lambda;
            next.lambda = clamp_lambda(grown);
            if grown > LAMBDA_MAX {
                events.push(GuardEvent::DampingCeiling);
            }
        }
        let (next, diag) = settle(next, events, 0.0, None, f_before);
        return Ok((params.clone(), next, diag));
    };

    let m_change = quadratic_model_change(alpha, g_dot_d, d_cd + lambda * d_dd);
    let rho = match compute_rho(f_after - f_before, m_change, f_before) {
        Ok(r) => Some(r),
        Err(event) => {
            events.push(event);
            None
        }
    };

    let mut next = QlrState { adam: adam_next, ..prior.clone() };
    if let (true, true, Some(r)) = (cfg.damped, events.is_empty(), rho) {
        next.lambda = update_damping(r, lambda, cfg);
        if r < 0.25 && cfg.omega_inc * lambda > LAMBDA_MAX {
            events.push(GuardEvent::DampingCeiling);
        }
    }
    let (next, diag) = settle(next, events, alpha, rho, f_after);
    Ok((candidate, next, diag))
}

#[cfg(test)]
mod tests;
