//! Reverse-mode differentiation of scalar objectives over flat parameter
//! vectors.
//!
//! Hessian-vector products run the reverse pass over [`Dual`] numbers seeded
//! with the probe direction (forward-over-reverse), so each product costs one
//! dual forward and one dual backward pass. Gauss-Newton products push the
//! direction forward to the model outputs, apply the analytic output-space
//! loss Hessian there, and pull the result back with an ordinary reverse pass.

mod scalar;
mod tape;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scalar::{Dual, Scalar};
pub use tape::{NodeId, Tape, Tensor};

use crate::models::{Model, OutputHead, Recorded};
use tape::softmax_row;

/// Largest parameter count for which [`Objective::explicit_matrix`] will
/// materialise a dense matrix.
pub const DEFAULT_EXPLICIT_CAP: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("parameter manifest does not match the model")]
    ManifestMismatch,
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("refusing to build a dense {n}×{n} matrix (cap {cap})")]
    CapExceeded { n: usize, cap: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Names a contiguous slice of a [`ParamVector`] and the matrix shape it is
/// read as.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub shape: (usize, usize),
    pub offset: usize,
}

impl TensorSlot {
    pub fn new(name: impl Into<String>, shape: (usize, usize), offset: usize) -> Self {
        Self { name: name.into(), shape, offset }
    }

    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type Manifest = Arc<Vec<TensorSlot>>;

/// Flat `f64` parameters plus the manifest mapping slices to model tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    manifest: Manifest,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, manifest: Manifest) -> Result<Self> {
        let mut next = 0;
        for slot in manifest.iter() {
            if slot.offset != next {
                return Err(AutodiffError::InvalidManifest(format!(
                    "slot {} starts at {} but previous slots end at {next}",
                    slot.name, slot.offset
                )));
            }
            next += slot.len();
        }
        if next != values.len() {
            return Err(AutodiffError::LengthMismatch { expected: next, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { context: "parameter vector".into() });
        }
        Ok(Self { values, manifest })
    }

    /// A single-slot vector named `theta`.
    pub fn flat(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, Arc::new(vec![TensorSlot::new("theta", (1, n), 0)]))
    }

    /// Same manifest, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.manifest.clone())
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.len()], manifest: self.manifest.clone() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<&[f64]> {
        self.manifest
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Real(Tensor<f64>),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn rows(&self) -> usize {
        match self {
            Targets::Real(t) => t.rows,
            Targets::Labels(y) => y.len(),
        }
    }
}

/// Input rows with matching targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor<f64>,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Tensor<f64>, targets: Targets) -> Result<Self> {
        if inputs.rows == 0 {
            return Err(AutodiffError::InvalidBatch("a batch needs at least one example".into()));
        }
        if inputs.rows != targets.rows() {
            return Err(AutodiffError::InvalidBatch(format!(
                "{} input rows but {} targets",
                inputs.rows,
                targets.rows()
            )));
        }
        let targets_finite = match &targets {
            Targets::Real(t) => t.data.iter().all(|v| v.is_finite()),
            Targets::Labels(_) => true,
        };
        if !targets_finite || inputs.data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { context: "batch".into() });
        }
        Ok(Self { inputs, targets })
    }

    /// One featureless example, for objectives that ignore data.
    pub fn unit() -> Self {
        Self { inputs: Tensor::new(1, 0, vec![]), targets: Targets::Real(Tensor::new(1, 0, vec![])) }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows == 0
    }

    /// The single-example batch at row `i`.
    pub fn example(&self, i: usize) -> Batch {
        self.select(&[i])
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        let c = self.inputs.cols;
        let mut x = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            x.extend_from_slice(self.inputs.row(r));
        }
        let targets = match &self.targets {
            Targets::Real(t) => {
                let mut y = Vec::with_capacity(rows.len() * t.cols);
                for &r in rows {
                    y.extend_from_slice(t.row(r));
                }
                Targets::Real(Tensor::new(rows.len(), t.cols, y))
            }
            Targets::Labels(l) => Targets::Labels(rows.iter().map(|&r| l[r]).collect()),
        };
        Batch { inputs: Tensor::new(rows.len(), c, x), targets }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    Hessian,
    GgnFisher,
}

/// A model with its loss, evaluated with mean reduction over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    model: Model,
    manifest: Manifest,
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { context: context.into() })
    }
}

impl Objective {
    pub fn new(model: Model) -> Result<Self> {
        model.validate()?;
        let manifest = Arc::new(model.manifest());
        Ok(Self { model, manifest })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn n_params(&self) -> usize {
        self.manifest.iter().map(TensorSlot::len).sum()
    }

    /// Wraps raw values in this objective's manifest.
    pub fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::new(values, self.manifest.clone())
    }

    fn check(&self, params: &ParamVector, batch: &Batch) -> Result<()> {
        if !Arc::ptr_eq(&params.manifest, &self.manifest) && *params.manifest != *self.manifest {
            return Err(AutodiffError::ManifestMismatch);
        }
        self.model.check_batch(batch)
    }

    fn check_direction(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(AutodiffError::LengthMismatch { expected: self.n_params(), found: v.len() });
        }
        check_finite(v, "probe direction")
    }

    fn wrap(&self, values: Vec<f64>, context: &str) -> Result<ParamVector> {
        check_finite(&values, context)?;
        Ok(ParamVector { values, manifest: self.manifest.clone() })
    }

    fn record_f64(&self, params: &ParamVector, batch: &Batch) -> (Tape<f64>, Recorded) {
        let mut tape = Tape::new();
        let rec = self.model.record(&mut tape, &params.values, batch);
        (tape, rec)
    }

    fn record_dual(&self, params: &ParamVector, batch: &Batch, v: &[f64]) -> (Tape<Dual>, Recorded) {
        let duals: Vec<Dual> = params.values.iter().zip(v).map(|(&p, &t)| Dual::new(p, t)).collect();
        let mut tape = Tape::new();
        let rec = self.model.record(&mut tape, &duals, batch);
        (tape, rec)
    }

    pub fn eval_loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let (tape, rec) = self.record_f64(params, batch);
        let loss = tape.value(rec.loss).data[0];
        check_finite(&[loss], "loss evaluation")?;
        Ok(loss)
    }

    pub fn eval_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check(params, batch)?;
        let (tape, rec) = self.record_f64(params, batch);
        let loss = tape.value(rec.loss).data[0];
        check_finite(&[loss], "loss evaluation")?;
        let g = tape.backward(rec.loss, Tensor::new(1, 1, vec![1.0]), self.n_params());
        Ok((loss, self.wrap(g, "gradient")?))
    }

    /// Exact Hessian-vector product `∇²f(θ)·v`.
    pub fn hvp(&self, params: &ParamVector, batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        self.check(params, batch)?;
        self.check_direction(v)?;
        let (tape, rec) = self.record_dual(params, batch, v);
        check_finite(&[tape.value(rec.loss).data[0].value], "loss evaluation")?;
        let g = tape.backward(rec.loss, Tensor::new(1, 1, vec![Dual::new(1.0, 0.0)]), self.n_params());
        self.wrap(g.into_iter().map(|d| d.tangent).collect(), "Hessian-vector product")
    }

    /// `C·v` for the requested curvature. `GgnFisher` returns `JᵀH_out J v`
    /// with `J` the output Jacobian and `H_out` the loss Hessian in output
    /// space.
    pub fn curvature_vp(&self, params: &ParamVector, batch: &Batch, v: &[f64], kind: CurvatureKind) -> Result<ParamVector> {
        match kind {
            CurvatureKind::Hessian => self.hvp(params, batch, v),
            CurvatureKind::GgnFisher => self.ggn_vp(params, batch, v),
        }
    }

    fn ggn_vp(&self, params: &ParamVector, batch: &Batch, v: &[f64]) -> Result<ParamVector> {
        self.check(params, batch)?;
        self.check_direction(v)?;
        let (tape, rec) = self.record_dual(params, batch, v);
        let out = tape.value(rec.outputs);
        let (rows, cols) = out.shape();
        let jv: Vec<f64> = out.data.iter().map(|d| d.tangent).collect();
        let seed = match rec.head {
            OutputHead::Mse { n } => jv.iter().map(|&t| 2.0 / n as f64 * t).collect(),
            OutputHead::SumSquares => jv.iter().map(|&t| 2.0 * t).collect(),
            OutputHead::SoftmaxXent { n } => {
                let mut seed = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    let p: Vec<f64> = softmax_row(out.row(i)).iter().map(|d| d.value).collect();
                    let u = &jv[i * cols..(i + 1) * cols];
                    let pu: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
                    seed.extend(p.iter().zip(u).map(|(&pj, &uj)| (pj * uj - pj * pu) / n as f64));
                }
                seed
            }
            OutputHead::Opaque => {
                return Err(AutodiffError::Unsupported(
                    "Gauss-Newton products need a model/loss split; use Hessian curvature".into(),
                ))
            }
        };
        check_finite(&seed, "output-space curvature")?;
        let primal = tape.primal_tape();
        let g = primal.backward(rec.outputs, Tensor::new(rows, cols, seed), self.n_params());
        self.wrap(g, "Gauss-Newton-vector product")
    }

    /// Dense curvature matrix assembled column by column from
    /// [`Objective::curvature_vp`], symmetrised as `(C + Cᵀ)/2`. Row-major.
    pub fn explicit_matrix(&self, params: &ParamVector, batch: &Batch, kind: CurvatureKind, cap: usize) -> Result<Vec<f64>> {
        let n = self.n_params();
        if n > cap {
            return Err(AutodiffError::CapExceeded { n, cap });
        }
        let mut cols = Vec::with_capacity(n);
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            cols.push(self.curvature_vp(params, batch, &e, kind)?.values);
            e[i] = 0.0;
        }
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = 0.5 * (cols[j][i] + cols[i][j]);
            }
        }
        Ok(m)
    }

    /// Central finite-difference gradient, `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h`.
    pub fn fd_grad(&self, params: &ParamVector, batch: &Batch, h: f64) -> Result<ParamVector> {
        if !(h > 0.0) {
            return Err(AutodiffError::InvalidBatch(format!("finite-difference step must be positive, got {h}")));
        }
        self.check(params, batch)?;
        let mut probe = params.clone();
        let mut g = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let x = params.values[i];
            probe.values[i] = x + h;
            let up = self.eval_loss(&probe, batch)?;
            probe.values[i] = x - h;
            let down = self.eval_loss(&probe, batch)?;
            probe.values[i] = x;
            g.push((up - down) / (2.0 * h));
        }
        self.wrap(g, "finite-difference gradient")
    }

    /// Model outputs (logits for classifiers) for each input row.
    pub fn predict(&self, params: &ParamVector, inputs: &Tensor<f64>) -> Result<Tensor<f64>> {
        let Model::Mlp(spec) = &self.model else {
            return Err(AutodiffError::Unsupported("predictions need an MLP model".into()));
        };
        let targets = match spec.loss {
            crate::models::LossKind::MeanSquaredError => {
                Targets::Real(Tensor::zeros(inputs.rows, spec.n_outputs()))
            }
            crate::models::LossKind::SoftmaxCrossEntropy => Targets::Labels(vec![0; inputs.rows]),
        };
        let batch = Batch::new(inputs.clone(), targets)?;
        self.check(params, &batch)?;
        let (tape, rec) = self.record_f64(params, &batch);
        let out = tape.value(rec.outputs).clone();
        check_finite(&out.data, "model outputs")?;
        Ok(out)
    }
}

/// Evaluation surface the optimizers consume.
pub trait Differentiable {
    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)>;
    fn curvature_product(&self, params: &ParamVector, batch: &Batch, v: &[f64], kind: CurvatureKind) -> Result<ParamVector>;
}

impl Differentiable for Objective {
    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.eval_loss(params, batch)
    }
    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.eval_grad(params, batch)
    }
    fn curvature_product(&self, params: &ParamVector, batch: &Batch, v: &[f64], kind: CurvatureKind) -> Result<ParamVector> {
        self.curvature_vp(params, batch, v, kind)
    }
}

/// Call counts recorded by [`Instrumented`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub losses: usize,
    pub gradients: usize,
    pub curvature_products: usize,
}

/// Counts evaluations passed through to the wrapped objective.
pub struct Instrumented<'a, D: ?Sized> {
    inner: &'a D,
    counts: std::cell::Cell<EvalCounts>,
}

impl<'a, D: Differentiable + ?Sized> Instrumented<'a, D> {
    pub fn new(inner: &'a D) -> Self {
        Self { inner, counts: Default::default() }
    }

    pub fn counts(&self) -> EvalCounts {
        self.counts.get()
    }

    pub fn reset(&self) {
        self.counts.set(EvalCounts::default());
    }

    fn bump(&self, f: impl FnOnce(&mut EvalCounts)) {
        let mut c = self.counts.get();
        f(&mut c);
        self.counts.set(c);
    }
}

impl<D: Differentiable + ?Sized> Differentiable for Instrumented<'_, D> {
    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.bump(|c| c.losses += 1);
        self.inner.loss(params, batch)
    }
    fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.bump(|c| c.gradients += 1);
        self.inner.loss_and_grad(params, batch)
    }
    fn curvature_product(&self, params: &ParamVector, batch: &Batch, v: &[f64], kind: CurvatureKind) -> Result<ParamVector> {
        self.bump(|c| c.curvature_products += 1);
        self.inner.curvature_product(params, batch, v, kind)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max|a − b| / max(max|b|, floor)`.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
