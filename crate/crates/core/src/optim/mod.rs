//! Update rules: plain and full SGD, Adam, and quadratic-model learning
//! rates on top of Adam or SGD directions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Batch, Differentiable, ParamVector};

pub mod adam;
pub mod fisher;
pub mod qlr;
pub mod sgd;

pub use adam::{adam_direction, AdamHyper, AdamState};
pub use fisher::{empirical_fisher_diag, fisher_alignment, FisherAlignment};
pub use qlr::{
    apply_lr_policy, clamp_lambda, compute_rho, qlr_step, qlr_step_with_direction, quadratic_model_change,
    select_learning_rate, update_damping, DirectionKind, GuardEvent, QlrConfig, QlrState, StepDiagnostics,
};
pub use sgd::sgd_step;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("gradient contains a non-finite entry")]
    NonFiniteGradient,
    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid optimiser configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation failed at step {step}: {source}")]
    Evaluation { step: u64, source: AutodiffError },
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<(), OptimError> {
    if expected == found {
        Ok(())
    } else {
        Err(OptimError::LengthMismatch { expected, found })
    }
}

fn default_momentum() -> f64 {
    0.9
}

/// Serialisable choice of update rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// `θ ← θ − η g`.
    SgdMinimal { lr: f64 },
    /// Heavy-ball momentum; L2 decay is added to the gradient.
    SgdFull {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default)]
        hyper: AdamHyper,
    },
    /// Quadratic-model learning rate with damping.
    Qlr {
        #[serde(default)]
        config: QlrConfig,
        #[serde(default)]
        hyper: AdamHyper,
    },
}

impl OptimizerConfig {
    pub fn adam_qlr_untuned() -> Self {
        OptimizerConfig::Qlr { config: QlrConfig::untuned(), hyper: AdamHyper::default() }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let lr_ok = |lr: f64| {
            if lr > 0.0 && lr.is_finite() {
                Ok(())
            } else {
                Err(OptimError::InvalidConfig(format!("learning rate must be positive and finite, got {lr}")))
            }
        };
        match self {
            OptimizerConfig::SgdMinimal { lr } => lr_ok(*lr),
            OptimizerConfig::SgdFull { lr, momentum, weight_decay } => {
                lr_ok(*lr)?;
                if !(0.0..1.0).contains(momentum) || !(*weight_decay >= 0.0) {
                    return Err(OptimError::InvalidConfig("momentum must lie in [0, 1) and weight_decay be >= 0".into()));
                }
                Ok(())
            }
            OptimizerConfig::Adam { lr, hyper } => {
                lr_ok(*lr)?;
                hyper.validate()
            }
            OptimizerConfig::Qlr { config, hyper } => {
                config.validate()?;
                hyper.validate()
            }
        }
    }

    /// Short label used in logs and result files.
    pub fn label(&self) -> String {
        match self {
            OptimizerConfig::SgdMinimal { .. } => "sgd_minimal".into(),
            OptimizerConfig::SgdFull { .. } => "sgd_full".into(),
            OptimizerConfig::Adam { .. } => "adam".into(),
            OptimizerConfig::Qlr { config, .. } => {
                let dir = match config.direction {
                    DirectionKind::Adam => "adam",
                    DirectionKind::Sgd => "sgd",
                };
                let curv = match config.curvature {
                    crate::autodiff::CurvatureKind::Hessian => "hessian",
                    crate::autodiff::CurvatureKind::GgnFisher => "fisher",
                };
                format!("{dir}_qlr_{curv}")
            }
        }
    }
}

/// What one optimiser step did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Loss at the parameters the step started from.
    pub loss: f64,
    pub alpha: f64,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub f_after: Option<f64>,
    pub events: Vec<GuardEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum RuleState {
    Sgd { momentum: Vec<f64> },
    Adam(AdamState),
    Qlr(QlrState),
}

/// An update rule together with its persistent state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: RuleState,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Result<Self, OptimError> {
        config.validate()?;
        let state = match &config {
            OptimizerConfig::SgdMinimal { .. } | OptimizerConfig::SgdFull { .. } => {
                RuleState::Sgd { momentum: vec![0.0; n_params] }
            }
            OptimizerConfig::Adam { .. } => RuleState::Adam(AdamState::new(n_params)),
            OptimizerConfig::Qlr { config, .. } => RuleState::Qlr(QlrState::new(n_params, config)),
        };
        Ok(Self { config, state, steps: 0 })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Current damping, for the quadratic-model rules.
    pub fn lambda(&self) -> Option<f64> {
        match &self.state {
            RuleState::Qlr(s) => Some(s.lambda),
            _ => None,
        }
    }

    pub fn qlr_state(&self) -> Option<&QlrState> {
        match &self.state {
            RuleState::Qlr(s) => Some(s),
            _ => None,
        }
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        match &self.state {
            RuleState::Adam(s) => Some(s),
            RuleState::Qlr(s) => s.adam.as_ref(),
            RuleState::Sgd { .. } => None,
        }
    }

    /// Performs one update on `batch`. On error the optimiser state is
    /// unchanged.
    pub fn step<D: Differentiable + ?Sized>(
        &mut self,
        obj: &D,
        params: &ParamVector,
        batch: &Batch,
    ) -> Result<(ParamVector, StepReport), OptimError> {
        let step = self.steps + 1;
        let grad = |obj: &D| {
            let (f, g) = obj.loss_and_grad(params, batch).map_err(|source| OptimError::Evaluation { step, source })?;
            if g.values().iter().any(|x| !x.is_finite()) {
                return Err(OptimError::NonFiniteGradient);
            }
            Ok::<_, OptimError>((f, g))
        };
        let plain = |loss: f64, alpha: f64| StepReport { loss, alpha, lambda: None, rho: None, f_after: None, events: vec![] };
        let (next, report, state) = match (&self.config, &self.state) {
            (OptimizerConfig::SgdMinimal { lr }, RuleState::Sgd { momentum }) => {
                let (f, g) = grad(obj)?;
                let (theta, buf) = sgd_step(params.values(), g.values(), *lr, momentum, 0.0, 0.0)?;
                (params.with_values(theta)?, plain(f, *lr), RuleState::Sgd { momentum: buf })
            }
            (OptimizerConfig::SgdFull { lr, momentum: mu, weight_decay }, RuleState::Sgd { momentum }) => {
                let (f, g) = grad(obj)?;
                let (theta, buf) = sgd_step(params.values(), g.values(), *lr, momentum, *mu, *weight_decay)?;
                (params.with_values(theta)?, plain(f, *lr), RuleState::Sgd { momentum: buf })
            }
            (OptimizerConfig::Adam { lr, hyper }, RuleState::Adam(s)) => {
                let (f, g) = grad(obj)?;
                let (ns, d) = adam_direction(s, g.values(), hyper)?;
                let theta = params.values().iter().zip(&d).map(|(p, di)| p - lr * di).collect();
                (params.with_values(theta)?, plain(f, *lr), RuleState::Adam(ns))
            }
            (OptimizerConfig::Qlr { config, hyper }, RuleState::Qlr(s)) => {
                let (theta, ns, diag) = qlr_step(obj, params, batch, s, config, hyper)?;
                let report = StepReport {
                    loss: diag.f_before,
                    alpha: diag.alpha,
                    lambda: Some(diag.lambda),
                    rho: diag.rho,
                    f_after: Some(diag.f_after),
                    events: diag.events,
                };
                (theta, report, RuleState::Qlr(ns))
            }
            _ => unreachable!("state variant always matches its config"),
        };
        self.state = state;
        self.steps = step;
        Ok((next, report))
    }
}
