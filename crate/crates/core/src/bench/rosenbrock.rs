use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{emit, BenchError, OutputFormat};
use crate::autodiff::{AutodiffError, Batch, CurvatureKind};
use crate::models::{rosenbrock_objective, RosenbrockSpec};
use crate::optim::{AdamHyper, OptimError, Optimizer, OptimizerConfig, QlrConfig};

/// Named optimiser settings for the two-dimensional valley.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RosenbrockPreset {
    Gd,
    GdFull,
    Adam,
    AdamqlrTuned,
    AdamqlrUntuned,
}

impl RosenbrockPreset {
    pub const ALL: [RosenbrockPreset; 5] = [
        RosenbrockPreset::Gd,
        RosenbrockPreset::GdFull,
        RosenbrockPreset::Adam,
        RosenbrockPreset::AdamqlrTuned,
        RosenbrockPreset::AdamqlrUntuned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RosenbrockPreset::Gd => "gd",
            RosenbrockPreset::GdFull => "gd-full",
            RosenbrockPreset::Adam => "adam",
            RosenbrockPreset::AdamqlrTuned => "adamqlr-tuned",
            RosenbrockPreset::AdamqlrUntuned => "adamqlr-untuned",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Quadratic-model presets use Hessian curvature.
    pub fn config(self) -> OptimizerConfig {
        match self {
            RosenbrockPreset::Gd => OptimizerConfig::SgdMinimal { lr: 1e-3 },
            // momentum 0.9 at lr 10⁻³ diverges from (1, −1); 10⁻⁴ keeps the same
            // effective step as `Gd`
            RosenbrockPreset::GdFull => OptimizerConfig::SgdFull { lr: 1e-4, momentum: 0.9, weight_decay: 0.0 },
            RosenbrockPreset::Adam => OptimizerConfig::Adam { lr: 9.8848e-2, hyper: AdamHyper::default() },
            RosenbrockPreset::AdamqlrTuned => OptimizerConfig::Qlr {
                config: QlrConfig {
                    alpha_max: 6.098,
                    lambda0: 3.027e-6,
                    omega_dec: 0.9,
                    omega_inc: 2.1,
                    ..QlrConfig::untuned().with_curvature(CurvatureKind::Hessian)
                },
                hyper: AdamHyper::default(),
            },
            RosenbrockPreset::AdamqlrUntuned => OptimizerConfig::Qlr {
                config: QlrConfig::untuned().with_curvature(CurvatureKind::Hessian),
                hyper: AdamHyper::default(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub x: f64,
    pub y: f64,
    pub f: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Starting point first, then one point per completed step.
    pub points: Vec<TrajectoryPoint>,
    /// Step at which a non-finite value ended the run.
    pub diverged_at: Option<u64>,
}

impl Trajectory {
    pub fn initial(&self) -> &TrajectoryPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory holds its start")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        emit(&self.points, path, OutputFormat::Csv)
    }
}

/// Full-batch optimisation of `(1 − x)² + 100(y − x²)²` from `start`.
pub fn run_rosenbrock(optimizer: &OptimizerConfig, steps: u64, start: (f64, f64)) -> Result<Trajectory, BenchError> {
    if steps == 0 {
        return Err(BenchError::Config("steps must be at least 1".into()));
    }
    let obj = rosenbrock_objective(RosenbrockSpec::default())?;
    let mut opt = Optimizer::new(optimizer.clone(), 2).map_err(|e| BenchError::Config(e.to_string()))?;
    let mut p = obj.params(vec![start.0, start.1]).map_err(|e| BenchError::Config(e.to_string()))?;
    let batch = Batch::unit();
    let f0 = obj.eval_loss(&p, &batch)?;
    let mut points = vec![TrajectoryPoint { step: 0, x: start.0, y: start.1, f: f0, alpha: None, lambda: opt.lambda() }];
    for step in 1..=steps {
        let advanced = opt.step(&obj, &p, &batch).and_then(|(next, rep)| {
            let f = obj.eval_loss(&next, &batch)?;
            Ok((next, rep, f))
        });
        match advanced {
            Ok((next, rep, f)) => {
                let v = next.values();
                points.push(TrajectoryPoint { step, x: v[0], y: v[1], f, alpha: Some(rep.alpha), lambda: rep.lambda });
                p = next;
            }
            Err(
                OptimError::NonFiniteGradient
                | OptimError::Autodiff(AutodiffError::NonFinite { .. })
                | OptimError::Evaluation { source: AutodiffError::NonFinite { .. }, .. },
            ) => return Ok(Trajectory { points, diverged_at: Some(step) }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Trajectory { points, diverged_at: None })
}
