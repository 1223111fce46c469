//! Dataset loading, splitting, standardisation and mini-batch iteration.
//!
//! Everything here is deterministic given its seeds: a split depends only on
//! `SplitSpec::seed`, and the batch order of an epoch only on
//! `(BatchPlan::shuffle_seed, epoch)`.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Batch, Targets, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{0}")]
    Format(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Immutable table of examples. Row counts of inputs and targets agree and
/// every value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub inputs: Tensor<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Tensor<f64>, targets: Targets) -> Result<Self> {
        if inputs.rows != targets.rows() {
            return Err(DataError::Invalid(format!("{} input rows but {} targets", inputs.rows, targets.rows())));
        }
        let finite = match &targets {
            Targets::Real(t) => t.data.iter().all(|v| v.is_finite()),
            Targets::Labels(_) => true,
        };
        if !finite || inputs.data.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite value".into()));
        }
        let task = match targets {
            Targets::Real(_) => Task::Regression,
            Targets::Labels(_) => Task::Classification,
        };
        Ok(Self { name: name.into(), task, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows == 0
    }

    pub fn n_features(&self) -> usize {
        self.inputs.cols
    }

    /// Target width for regression, `max label + 1` for classification.
    pub fn n_outputs(&self) -> usize {
        match &self.targets {
            Targets::Real(t) => t.cols,
            Targets::Labels(l) => l.iter().max().map_or(0, |m| m + 1),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        let b = self.as_batch_unchecked().select(rows);
        Dataset { name: self.name.clone(), task: self.task, inputs: b.inputs, targets: b.targets }
    }

    /// The whole dataset as a single batch.
    pub fn batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.targets.clone()).map_err(|e| DataError::Invalid(e.to_string()))
    }

    fn as_batch_unchecked(&self) -> Batch {
        Batch { inputs: self.inputs.clone(), targets: self.targets.clone() }
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads a comma-separated regression table whose first `n_features`
/// columns are inputs and next `target_columns` columns are targets. A first
/// row containing any non-numeric cell is taken as a header.
pub fn load_csv(path: impl AsRef<Path>, n_features: usize, target_columns: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let width = n_features + target_columns;
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 1;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(|c| c.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} columns, found {}", rec.len())));
        }
        for (j, v) in parsed.into_iter().enumerate() {
            let v = v.ok_or_else(|| parse_err(path, line, format!("column {} is not a number: {:?}", j + 1, &rec[j])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {} is not finite", j + 1)));
            }
            if j < n_features {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Format(format!("{} contains no data rows", path.display())));
    }
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Tensor::new(rows, n_features, xs), Targets::Real(Tensor::new(rows, target_columns, ys)))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| DataError::Format(format!("{}: truncated header", path.display())))
}

/// Reads an IDX image file (magic `0x803`) and label file (magic `0x801`).
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_all(ip)?;
    let labels = read_all(lp)?;
    let magic = be_u32(&images, 0, ip)?;
    if magic != 0x803 {
        return Err(DataError::Format(format!("{}: image magic {magic:#x}, expected 0x803", ip.display())));
    }
    let magic = be_u32(&labels, 0, lp)?;
    if magic != 0x801 {
        return Err(DataError::Format(format!("{}: label magic {magic:#x}, expected 0x801", lp.display())));
    }
    let (n, h, w) = (be_u32(&images, 4, ip)?, be_u32(&images, 8, ip)?, be_u32(&images, 12, ip)?);
    let n_labels = be_u32(&labels, 4, lp)?;
    if n != n_labels {
        return Err(DataError::Format(format!("{n} images but {n_labels} labels")));
    }
    let pixels = &images[16..];
    let labels = &labels[8..];
    if pixels.len() != n * h * w || labels.len() != n {
        return Err(DataError::Format("IDX payload length disagrees with its header".into()));
    }
    let inputs = Tensor::new(n, h * w, pixels.iter().map(|&p| p as f64 / 255.0).collect());
    let name = ip.file_stem().map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, inputs, Targets::Labels(labels.iter().map(|&l| l as usize).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, val_fraction: 0.1, test_fraction: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fs = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fs.iter().any(|f| !(*f >= 0.0)) {
            return Err(DataError::InvalidSplit(format!("fractions must be non-negative, got {fs:?}")));
        }
        let sum: f64 = fs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DataError::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` rows: validation and test are
    /// floor-rounded and the remainder goes to train.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let size = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let (val, test) = (size(self.val_fraction), size(self.test_fraction));
        let train = n.saturating_sub(val + test);
        for (what, f, k) in [("train", self.train_fraction, train), ("val", self.val_fraction, val), ("test", self.test_fraction, test)] {
            if f > 0.0 && k == 0 {
                return Err(DataError::InvalidSplit(format!("{what} split of {n} rows at fraction {f} is empty")));
            }
        }
        Ok((train, val, test))
    }
}

/// Row indices of the train, validation and test parts.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let (train, val, _) = spec.sizes(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = perm.split_off(train + val);
    let val = perm.split_off(train);
    Ok([perm, val, test])
}

pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_indices(ds.len(), spec)?;
    Ok((ds.select(&a), ds.select(&b), ds.select(&c)))
}

/// Per-column affine map to zero mean and unit variance, fitted on one table
/// and applied unchanged to others. Constant columns keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor<f64>) -> Self {
        let n = x.rows.max(1) as f64;
        let mut mean = vec![0.0; x.cols];
        for r in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; x.cols];
        for r in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn transform(&self, x: &Tensor<f64>) -> Tensor<f64> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, x: &Tensor<f64>) -> Tensor<f64> {
        self.map(x, |v, m, s| v * s + m)
    }

    fn map(&self, x: &Tensor<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Tensor<f64> {
        assert_eq!(x.cols, self.mean.len(), "standardiser width");
        let data = x.data.iter().enumerate().map(|(i, &v)| {
            let j = i % x.cols;
            f(v, self.mean[j], self.std[j])
        });
        Tensor::new(x.rows, x.cols, data.collect())
    }
}

/// Train/validation/test parts after optional standardisation, with the
/// fitted maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub input_scaler: Option<Standardizer>,
    pub target_scaler: Option<Standardizer>,
}

/// Splits `ds` and standardises with statistics of the train part only.
/// Target standardisation applies to regression data only.
pub fn prepare(ds: &Dataset, split: &SplitSpec, standardize_inputs: bool, standardize_targets: bool) -> Result<Prepared> {
    let (mut train, mut val, mut test) = split_dataset(ds, split)?;
    let input_scaler = standardize_inputs.then(|| Standardizer::fit(&train.inputs));
    if let Some(s) = &input_scaler {
        for part in [&mut train, &mut val, &mut test] {
            part.inputs = s.transform(&part.inputs);
        }
    }
    let target_scaler = match (&train.targets, standardize_targets) {
        (Targets::Real(t), true) => Some(Standardizer::fit(t)),
        _ => None,
    };
    if let Some(s) = &target_scaler {
        for part in [&mut train, &mut val, &mut test] {
            if let Targets::Real(t) = &part.targets {
                part.targets = Targets::Real(s.transform(t));
            }
        }
    }
    Ok(Prepared { train, val, test, input_scaler, target_scaler })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, shuffle_seed: u64) -> Self {
        Self { batch_size, shuffle_seed, drop_last: false }
    }

    /// Batch size actually used on `n` rows.
    pub fn effective_batch_size(&self, n: usize) -> usize {
        self.batch_size.min(n).max(1)
    }

    /// This plan with the batch size clamped to `n` rows, warning once if
    /// that changes it.
    pub fn clamped(&self, n: usize) -> Self {
        let b = self.effective_batch_size(n);
        if b != self.batch_size {
            log::warn!("batch size {} exceeds the {n} available rows; clamping", self.batch_size);
        }
        Self { batch_size: b, ..*self }
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        let b = self.effective_batch_size(n);
        if self.drop_last {
            n / b
        } else {
            n.div_ceil(b)
        }
    }
}

/// Row order for `epoch`, drawn from a stream keyed by `(shuffle_seed, epoch)`.
pub fn epoch_order(n: usize, plan: &BatchPlan, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.shuffle_seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mini-batches of one epoch.
pub fn batch_iter<'a>(ds: &'a Dataset, plan: &BatchPlan, epoch: u64) -> impl Iterator<Item = Batch> + 'a {
    let n = ds.len();
    let b = plan.effective_batch_size(n);
    let order = epoch_order(n, plan, epoch);
    let count = plan.batches_per_epoch(n);
    (0..count).map(move |i| {
        let rows = &order[i * b..((i + 1) * b).min(n)];
        ds.as_batch_unchecked().select(rows)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    /// Standard deviation of additive target noise (regression).
    pub noise: f64,
    pub n_targets: usize,
    pub n_classes: usize,
    /// Per-coordinate standard deviation of blob centres (classification);
    /// points scatter around their centre with unit variance.
    pub separation: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { noise: 0.1, n_targets: 1, n_classes: 2, separation: 3.0 }
    }
}

/// Parameters the synthetic data was generated from.
#[derive(Clone, Debug, PartialEq)]
pub enum SynthTruth {
    /// Row-major `n_targets × d`.
    Weights(Vec<f64>),
    /// Row-major `n_classes × d`.
    Centers(Vec<f64>),
}

/// `synthesize_with` under default options.
pub fn synthesize(task: Task, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    synthesize_with(task, n, d, seed, &SynthOptions::default()).map(|(ds, _)| ds)
}

/// Regression: `y = Wx + noise` with `x, W ~ N(0, I)`. Classification:
/// labels cycle through the classes and `x = centre[label] + N(0, I)`.
pub fn synthesize_with(task: Task, n: usize, d: usize, seed: u64, opts: &SynthOptions) -> Result<(Dataset, SynthTruth)> {
    if n == 0 || d == 0 {
        return Err(DataError::Invalid("synthetic data needs n, d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    match task {
        Task::Regression => {
            let k = opts.n_targets.max(1);
            let w: Vec<f64> = (0..k * d).map(|_| normal()).collect();
            let x: Vec<f64> = (0..n * d).map(|_| normal()).collect();
            let mut y = Vec::with_capacity(n * k);
            for r in 0..n {
                let xr = &x[r * d..(r + 1) * d];
                for t in 0..k {
                    let clean: f64 = w[t * d..(t + 1) * d].iter().zip(xr).map(|(a, b)| a * b).sum();
                    y.push(clean + opts.noise * normal());
                }
            }
            let ds = Dataset::new("synthetic_regression", Tensor::new(n, d, x), Targets::Real(Tensor::new(n, k, y)))?;
            Ok((ds, SynthTruth::Weights(w)))
        }
        Task::Classification => {
            let c = opts.n_classes.max(2);
            let centers: Vec<f64> = (0..c * d).map(|_| opts.separation * normal()).collect();
            let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            let mut x = Vec::with_capacity(n * d);
            for &l in &labels {
                for j in 0..d {
                    x.push(centers[l * d + j] + normal());
                }
            }
            let ds = Dataset::new("synthetic_blobs", Tensor::new(n, d, x), Targets::Labels(labels))?;
            Ok((ds, SynthTruth::Centers(centers)))
        }
    }
}

/// A smooth nonlinear regression table with the shape of the UCI Energy
/// heating-load data: 692 rows, 8 features, 1 target.
pub fn energy_like(seed: u64) -> Dataset {
    let (n, d) = (692, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let x: Vec<f64> = (0..n * d).map(|_| normal()).collect();
    let y = (0..n)
        .map(|r| {
            let v = &x[r * d..(r + 1) * d];
            3.0 * v[0] + 2.0 * (v[1] * v[2]).tanh() + v[3] * v[3] - (1.5 * v[4]).sin() + 0.5 * v[5] * v[6]
                + 0.8 * v[7].abs()
                + 0.05 * normal()
        })
        .collect();
    Dataset::new("energy_like", Tensor::new(n, d, x), Targets::Real(Tensor::new(n, 1, y))).expect("finite by construction")
}
