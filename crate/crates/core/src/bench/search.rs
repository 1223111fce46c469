use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_training, BenchError, RunConfig, RunStatus};
use crate::optim::OptimizerConfig;

pub const BATCH_SIZES: [usize; 7] = [50, 100, 200, 400, 800, 1600, 3200];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Fixed(f64),
    /// `exp(U(ln lo, ln hi))`.
    LogUniform { lo: f64, hi: f64 },
    /// `1 − exp(U(ln lo, ln hi))`.
    OneMinusLogUniform { lo: f64, hi: f64 },
    /// Uniform over the listed values.
    Choice(Vec<f64>),
}

impl Dist {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let log_uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..=hi.ln()).exp()
            }
        };
        match self {
            Dist::Fixed(v) => *v,
            Dist::LogUniform { lo, hi } => log_uniform(rng, *lo, *hi),
            Dist::OneMinusLogUniform { lo, hi } => 1.0 - log_uniform(rng, *lo, *hi),
            Dist::Choice(vs) => vs[rng.random_range(0..vs.len())],
        }
    }
}

/// Distributions per hyperparameter; `None` leaves the base value alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_size: Option<Dist>,
    pub lr: Option<Dist>,
    pub momentum: Option<Dist>,
    pub weight_decay: Option<Dist>,
    pub alpha_max: Option<Dist>,
    pub lambda0: Option<Dist>,
    pub omega_dec: Option<Dist>,
    pub omega_inc: Option<Dist>,
}

impl SearchSpace {
    /// The standard ranges for the hyperparameters `optimizer` uses. Batch
    /// size is searched only when `tune_batch` is set.
    pub fn standard(optimizer: &OptimizerConfig, tune_batch: bool) -> Self {
        let log = |lo: f64, hi: f64| Some(Dist::LogUniform { lo, hi });
        let mut s = SearchSpace {
            batch_size: tune_batch.then(|| Dist::Choice(BATCH_SIZES.iter().map(|&b| b as f64).collect())),
            ..Default::default()
        };
        match optimizer {
            OptimizerConfig::SgdMinimal { .. } => s.lr = log(1e-6, 1e-1),
            OptimizerConfig::SgdFull { .. } => {
                s.lr = log(1e-6, 1e-1);
                s.momentum = Some(Dist::OneMinusLogUniform { lo: 1e-4, hi: 0.3 });
                s.weight_decay = log(1e-10, 1.0);
            }
            OptimizerConfig::Adam { .. } => s.lr = log(1e-6, 1.0),
            OptimizerConfig::Qlr { .. } => {
                s.alpha_max = log(1e-4, 10.0);
                s.lambda0 = log(1e-8, 1.0);
                s.omega_dec = log(0.5, 1.0);
                s.omega_inc = log(1.0, 4.0);
            }
        }
        s
    }

    /// `base` with every searched hyperparameter drawn from `rng`, in field
    /// order.
    pub fn sample(&self, base: &RunConfig, rng: &mut impl Rng) -> RunConfig {
        let mut cfg = base.clone();
        let mut draw = |d: &Option<Dist>| d.as_ref().map(|d| d.sample(rng));
        let batch = draw(&self.batch_size);
        let lr = draw(&self.lr);
        let momentum = draw(&self.momentum);
        let wd = draw(&self.weight_decay);
        let alpha_max = draw(&self.alpha_max);
        let lambda0 = draw(&self.lambda0);
        let omega_dec = draw(&self.omega_dec);
        let omega_inc = draw(&self.omega_inc);
        if let (Some(b), Some(d)) = (batch, cfg.dataset.as_mut()) {
            d.batch.batch_size = b.round().max(1.0) as usize;
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        match &mut cfg.optimizer {
            OptimizerConfig::SgdMinimal { lr: l } => set(l, lr),
            OptimizerConfig::SgdFull { lr: l, momentum: m, weight_decay: w } => {
                set(l, lr);
                set(m, momentum);
                set(w, wd);
            }
            OptimizerConfig::Adam { lr: l, .. } => set(l, lr),
            OptimizerConfig::Qlr { config, .. } => {
                set(&mut config.alpha_max, alpha_max);
                set(&mut config.lambda0, lambda0);
                set(&mut config.omega_dec, omega_dec);
                set(&mut config.omega_inc, omega_inc);
            }
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchObjective {
    FinalValLoss,
    FinalTrainLoss,
}

/// Successive-halving schedule: rung `i` trains for `fractions[i]` of the
/// base epochs and the best `keep` share survives to the next rung.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halving {
    pub fractions: Vec<f64>,
    pub keep: f64,
}

impl Default for Halving {
    fn default() -> Self {
        Self { fractions: vec![0.25, 0.5, 1.0], keep: 1.0 / 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: RunConfig,
    /// `None` when the run diverged or produced no score.
    pub score: Option<f64>,
    pub status: RunStatus,
    pub epochs: u64,
    /// Last rung this trial was trained at (0 without halving).
    pub rung: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: TrialResult,
    /// Every trial in index order, at the last rung it reached.
    pub trials: Vec<TrialResult>,
    /// Human-readable description of the schedule used.
    pub method: String,
}

/// Orders trials best first: scored trials by score, then unscored, ties by
/// index.
fn rank(trials: &[TrialResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |t: &TrialResult| match (t.status, t.score) {
            (RunStatus::Diverged { .. }, _) | (_, None) => (1, f64::INFINITY),
            (_, Some(s)) if s.is_nan() => (1, f64::INFINITY),
            (_, Some(s)) => (0, s),
        };
        let (ka, kb) = (key(&trials[a]), key(&trials[b]));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    order
}

/// Random search over `space` around `base`. Trial `i` samples from
/// `ChaCha8Rng::seed_from_u64(seed)` on stream `i`. `evaluate` trains a
/// configuration and returns `(score, status)`.
pub fn random_search_with<F>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    base: &RunConfig,
    halving: Option<&Halving>,
    mut evaluate: F,
) -> Result<SearchResult, BenchError>
where
    F: FnMut(&RunConfig) -> Result<(Option<f64>, RunStatus), BenchError>,
{
    if budget == 0 {
        return Err(BenchError::Config("budget must be at least 1".into()));
    }
    let configs: Vec<RunConfig> = (0..budget)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            space.sample(base, &mut rng)
        })
        .collect();
    let default_rungs = [1.0];
    let (fractions, keep, method) = match halving {
        Some(h) => (
            &h.fractions[..],
            h.keep,
            format!("successive halving over epoch fractions {:?}, keeping {:.3} per rung", h.fractions, h.keep),
        ),
        None => (&default_rungs[..], 1.0, "random search".to_string()),
    };
    let mut trials: Vec<Option<TrialResult>> = vec![None; budget];
    let mut alive: Vec<usize> = (0..budget).collect();
    for (rung, frac) in fractions.iter().enumerate() {
        let epochs = ((base.epochs as f64 * frac).round() as u64).clamp(1, base.epochs);
        for &i in &alive {
            let cfg = RunConfig { epochs, ..configs[i].clone() };
            let (score, status) = evaluate(&cfg)?;
            trials[i] = Some(TrialResult { index: i, config: configs[i].clone(), score, status, epochs, rung });
        }
        if rung + 1 < fractions.len() {
            let current: Vec<TrialResult> = alive.iter().map(|&i| trials[i].clone().unwrap()).collect();
            let survivors = ((current.len() as f64 * keep).ceil() as usize).max(1);
            alive = rank(&current).into_iter().take(survivors).map(|k| current[k].index).collect();
            alive.sort_unstable();
        }
    }
    let trials: Vec<TrialResult> = trials.into_iter().map(Option::unwrap).collect();
    let last_rung = fractions.len() - 1;
    let finalists: Vec<TrialResult> = trials.iter().filter(|t| t.rung == last_rung).cloned().collect();
    let best = finalists[rank(&finalists)[0]].clone();
    Ok(SearchResult { best, trials, method })
}

/// `random_search_with` where each trial is a full `run_training` scored by
/// its final evaluation.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    objective: SearchObjective,
    base: &RunConfig,
    seed: u64,
    halving: Option<&Halving>,
) -> Result<SearchResult, BenchError> {
    let base = RunConfig { output: None, ..base.clone() };
    random_search_with(space, budget, seed, &base, halving, |cfg| {
        let outcome = match run_training(cfg) {
            Ok(o) => o,
            Err(BenchError::Config(e)) => {
                log::warn!("trial rejected: {e}");
                return Ok((None, RunStatus::Diverged { step: 0 }));
            }
            Err(e) => return Err(e),
        };
        let score = outcome.final_eval().and_then(|r| match objective {
            SearchObjective::FinalValLoss => r.val_loss.or(r.train_loss),
            SearchObjective::FinalTrainLoss => r.train_loss,
        });
        Ok((score, outcome.status))
    })
}

/// One-factor sensitivity grids around a base configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// `k ∈ {½, 1, 2}`.
    RescaleK,
    /// `α_max ∈ {10⁻⁴, …, 1}`.
    AlphaMax,
    /// `λ₀ ∈ {10⁻⁸, …, 1}`.
    Lambda0,
    BatchSize,
    /// `ω_inc ∈ {1, 2, 4}` with `ω_dec = 1/ω_inc`.
    SteppingFactor,
}

impl Sweep {
    pub fn values(self) -> Vec<f64> {
        let pow = |b: f64, lo: i32, hi: i32| (lo..=hi).map(|e| b.powi(e)).collect();
        match self {
            Sweep::RescaleK => pow(2.0, -1, 1),
            Sweep::AlphaMax => pow(10.0, -4, 0),
            Sweep::Lambda0 => pow(10.0, -8, 0),
            Sweep::BatchSize => BATCH_SIZES.iter().map(|&b| b as f64).collect(),
            Sweep::SteppingFactor => pow(2.0, 0, 2),
        }
    }

    /// `(value, config)` per grid point. Optimizer sweeps need a QLR base.
    pub fn configs(self, base: &RunConfig) -> Result<Vec<(f64, RunConfig)>, BenchError> {
        self.values()
            .into_iter()
            .map(|v| {
                let mut cfg = base.clone();
                match (self, &mut cfg.optimizer, cfg.dataset.as_mut()) {
                    (Sweep::BatchSize, _, Some(d)) => d.batch.batch_size = v as usize,
                    (Sweep::BatchSize, _, None) => return Err(BenchError::Config("batch sweep needs a dataset".into())),
                    (Sweep::RescaleK, OptimizerConfig::Qlr { config, .. }, _) => config.rescale_k = v,
                    (Sweep::AlphaMax, OptimizerConfig::Qlr { config, .. }, _) => config.alpha_max = v,
                    (Sweep::Lambda0, OptimizerConfig::Qlr { config, .. }, _) => config.lambda0 = v,
                    (Sweep::SteppingFactor, OptimizerConfig::Qlr { config, .. }, _) => {
                        config.omega_inc = v;
                        config.omega_dec = 1.0 / v;
                    }
                    _ => return Err(BenchError::Config(format!("{self:?} sweep needs a QLR optimizer"))),
                }
                Ok((v, cfg))
            })
            .collect()
    }
}
