use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BenchError, MetricRecord, RecordKind};

/// One run's metric as a function of step index or wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    /// Consecutive integer steps `0, 1, …`.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { t: (0..values.len()).map(|i| i as f64).collect(), values }
    }

    /// `metric` of the evaluation records, keyed by step or by wall time.
    pub fn from_records(records: &[MetricRecord], metric: impl Fn(&MetricRecord) -> Option<f64>, align: Align) -> Self {
        let (mut t, mut values) = (Vec::new(), Vec::new());
        for r in records.iter().filter(|r| r.kind == RecordKind::Eval) {
            if let Some(v) = metric(r) {
                t.push(match align {
                    Align::Step => r.step as f64,
                    Align::Time => r.wall_time_s,
                });
                values.push(v);
            }
        }
        Self { t, values }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Align {
    /// Truncate every run to the shortest and compare index by index.
    #[default]
    Step,
    /// Interpolate linearly onto a uniform grid over the common time span.
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn interpolate(s: &Series, at: f64) -> f64 {
    let k = s.t.partition_point(|&x| x <= at);
    if k == 0 {
        return s.values[0];
    }
    if k == s.t.len() {
        return s.values[k - 1];
    }
    let (t0, t1) = (s.t[k - 1], s.t[k]);
    let w = if t1 > t0 { (at - t0) / (t1 - t0) } else { 0.0 };
    s.values[k - 1] + w * (s.values[k] - s.values[k - 1])
}

/// Common grid `t` and the runs resampled onto it, one row per run.
pub fn align_series(runs: &[Series], align: Align) -> Result<(Vec<f64>, Vec<Vec<f64>>), BenchError> {
    let len = runs.iter().map(|r| r.values.len()).min().ok_or_else(|| BenchError::Config("no runs to aggregate".into()))?;
    if len == 0 {
        return Err(BenchError::Config("a run has no points".into()));
    }
    if runs.iter().any(|r| r.t.len() != r.values.len()) {
        return Err(BenchError::Config("series times and values differ in length".into()));
    }
    match align {
        Align::Step => Ok((runs[0].t[..len].to_vec(), runs.iter().map(|r| r.values[..len].to_vec()).collect())),
        Align::Time => {
            let end = runs.iter().map(|r| *r.t.last().unwrap()).fold(f64::INFINITY, f64::min);
            let start = runs.iter().map(|r| r.t[0]).fold(f64::NEG_INFINITY, f64::max);
            let grid: Vec<f64> = if len == 1 || end <= start {
                vec![start; 1]
            } else {
                (0..len).map(|i| start + (end - start) * i as f64 / (len - 1) as f64).collect()
            };
            let rows = runs.iter().map(|r| grid.iter().map(|&g| interpolate(r, g)).collect()).collect();
            Ok((grid, rows))
        }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Bootstrapped median trend. Each of `n_boot` resamples draws `runs.len()`
/// run indices with replacement from `ChaCha8Rng::seed_from_u64(seed)` via
/// `random_range(0..runs.len())`, in order, and takes the pointwise median
/// (mean of the middle pair for even counts). Returns the pointwise mean and
/// population standard deviation of those medians.
pub fn bootstrap_trend(runs: &[Series], n_boot: usize, seed: u64, align: Align) -> Result<Trend, BenchError> {
    if n_boot == 0 {
        return Err(BenchError::Config("n_boot must be at least 1".into()));
    }
    let (t, rows) = align_series(runs, align)?;
    let medians = bootstrap_medians(&rows, n_boot, seed);
    let k = t.len();
    let nb = n_boot as f64;
    let mean: Vec<f64> = (0..k).map(|j| medians.iter().map(|m| m[j]).sum::<f64>() / nb).collect();
    let std = (0..k)
        .map(|j| (medians.iter().map(|m| (m[j] - mean[j]).powi(2)).sum::<f64>() / nb).sqrt())
        .collect();
    Ok(Trend { t, mean, std })
}

/// The `n_boot` pointwise-median trends behind `bootstrap_trend`.
pub fn bootstrap_medians(rows: &[Vec<f64>], n_boot: usize, seed: u64) -> Vec<Vec<f64>> {
    let r = rows.len();
    let k = rows.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_boot)
        .map(|_| {
            let picks: Vec<usize> = (0..r).map(|_| rng.random_range(0..r)).collect();
            (0..k)
                .map(|j| {
                    let mut col: Vec<f64> = picks.iter().map(|&i| rows[i][j]).collect();
                    median(&mut col)
                })
                .collect()
        })
        .collect()
}
