//! Concrete objectives: multilayer perceptrons with MSE or softmax
//! cross-entropy heads, the Rosenbrock function, and a dense quadratic used
//! as an exactly-solvable test problem.

use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Batch, NodeId, ParamVector, Scalar, Tape, Targets, Tensor, TensorSlot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MeanSquaredError,
    SoftmaxCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    /// ReLU for classifiers, tanh for regressors.
    pub fn default_for(loss: LossKind) -> Self {
        match loss {
            LossKind::SoftmaxCrossEntropy => Activation::Relu,
            LossKind::MeanSquaredError => Activation::Tanh,
        }
    }
}

fn default_bias() -> bool {
    true
}

/// Fully connected network with a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input width, hidden widths..., output width.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Option<Activation>,
    pub loss: LossKind,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, loss: LossKind) -> Self {
        Self { layer_widths, activation: None, loss, bias: true }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = Some(activation);
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or_else(|| Activation::default_for(self.loss))
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.layer_widths.len() < 2 {
            return Err(AutodiffError::InvalidModel("an MLP needs at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(AutodiffError::InvalidModel("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn manifest(&self) -> Vec<TensorSlot> {
        let mut slots = Vec::new();
        let mut offset = 0;
        for (l, w) in self.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            slots.push(TensorSlot::new(format!("layer{l}.weight"), (fan_in, fan_out), offset));
            offset += fan_in * fan_out;
            if self.bias {
                slots.push(TensorSlot::new(format!("layer{l}.bias"), (1, fan_out), offset));
                offset += fan_out;
            }
        }
        slots
    }
}

/// `f(x, y) = (a − x)² + b(y − x²)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosenbrockSpec {
    #[serde(default = "RosenbrockSpec::default_a")]
    pub a: f64,
    #[serde(default = "RosenbrockSpec::default_b")]
    pub b: f64,
}

impl RosenbrockSpec {
    fn default_a() -> f64 {
        1.0
    }
    fn default_b() -> f64 {
        100.0
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if !(self.b > 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(AutodiffError::InvalidModel("rosenbrock requires finite a and b > 0".into()));
        }
        Ok(())
    }

    pub fn minimum(&self) -> (f64, f64) {
        (self.a, self.a * self.a)
    }
}

impl Default for RosenbrockSpec {
    fn default() -> Self {
        Self { a: 1.0, b: 100.0 }
    }
}

/// `f(θ) = ½θᵀAθ + bᵀθ` with symmetric `A` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl QuadraticSpec {
    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            a[i * n + i] = d;
        }
        Self { a, b: vec![0.0; n] }
    }

    pub fn with_linear(mut self, b: Vec<f64>) -> Self {
        self.b = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        let n = self.dim();
        if n == 0 || self.a.len() != n * n {
            return Err(AutodiffError::InvalidModel("quadratic needs an n×n matrix and length-n vector".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if self.a[i * n + j] != self.a[j * n + i] {
                    return Err(AutodiffError::InvalidModel("quadratic matrix must be symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Mlp(MlpSpec),
    Rosenbrock(RosenbrockSpec),
    Quadratic(QuadraticSpec),
}

/// How the loss consumes the model outputs, for Gauss-Newton products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum OutputHead {
    /// `(1/N)Σ‖ŷ − y‖²`: output Hessian `(2/N)I`.
    Mse { n: usize },
    /// Mean softmax cross-entropy: per-row `(1/N)(diag(p) − ppᵀ)`.
    SoftmaxXent { n: usize },
    /// Plain `Σ rᵢ²`: output Hessian `2I`.
    SumSquares,
    /// The loss is not split into a model and a convex output loss.
    Opaque,
}

pub(crate) struct Recorded {
    pub loss: NodeId,
    pub outputs: NodeId,
    pub head: OutputHead,
}

impl Model {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        match self {
            Model::Mlp(s) => s.validate(),
            Model::Rosenbrock(s) => s.validate(),
            Model::Quadratic(s) => s.validate(),
        }
    }

    pub fn manifest(&self) -> Vec<TensorSlot> {
        match self {
            Model::Mlp(s) => s.manifest(),
            Model::Rosenbrock(_) => vec![
                TensorSlot::new("x", (1, 1), 0),
                TensorSlot::new("y", (1, 1), 1),
            ],
            Model::Quadratic(s) => vec![TensorSlot::new("theta", (1, s.dim()), 0)],
        }
    }

    /// True when the objective ignores batch contents.
    pub fn is_batch_free(&self) -> bool {
        !matches!(self, Model::Mlp(_))
    }

    pub fn loss_kind(&self) -> Option<LossKind> {
        match self {
            Model::Mlp(s) => Some(s.loss),
            _ => None,
        }
    }

    pub(crate) fn check_batch(&self, batch: &Batch) -> Result<(), AutodiffError> {
        let Model::Mlp(spec) = self else { return Ok(()) };
        if batch.inputs.cols != spec.n_inputs() {
            return Err(AutodiffError::InvalidBatch(format!(
                "batch has {} features, model expects {}",
                batch.inputs.cols,
                spec.n_inputs()
            )));
        }
        match (&batch.targets, spec.loss) {
            (Targets::Real(t), LossKind::MeanSquaredError) if t.cols == spec.n_outputs() => Ok(()),
            (Targets::Real(t), LossKind::MeanSquaredError) => Err(AutodiffError::InvalidBatch(format!(
                "targets have {} columns, model has {} outputs",
                t.cols,
                spec.n_outputs()
            ))),
            (Targets::Labels(y), LossKind::SoftmaxCrossEntropy) => {
                let classes = spec.n_outputs();
                match y.iter().find(|&&l| l >= classes) {
                    Some(&label) => Err(AutodiffError::LabelOutOfRange { label, classes }),
                    None => Ok(()),
                }
            }
            (Targets::Labels(_), LossKind::MeanSquaredError) => {
                Err(AutodiffError::InvalidBatch("mean squared error needs real-valued targets".into()))
            }
            (Targets::Real(_), LossKind::SoftmaxCrossEntropy) => {
                Err(AutodiffError::InvalidBatch("cross-entropy needs integer class labels".into()))
            }
        }
    }

    /// Records the forward computation onto `tape`. `params` is the flat
    /// parameter vector laid out per [`Model::manifest`].
    pub(crate) fn record<T: Scalar>(&self, tape: &mut Tape<T>, params: &[T], batch: &Batch) -> Recorded {
        let leaf = |tape: &mut Tape<T>, slot: &TensorSlot| {
            let (r, c) = slot.shape;
            tape.param(slot.offset, Tensor::new(r, c, params[slot.offset..slot.offset + r * c].to_vec()))
        };
        match self {
            Model::Mlp(spec) => {
                let x = &batch.inputs;
                let mut h = tape.constant(Tensor::from_f64(x.rows, x.cols, &x.data));
                let manifest = spec.manifest();
                let mut slots = manifest.iter();
                let n_layers = spec.layer_widths.len() - 1;
                for l in 0..n_layers {
                    let w = leaf(tape, slots.next().expect("weight slot"));
                    let mut z = tape.matmul(h, w);
                    if spec.bias {
                        let b = leaf(tape, slots.next().expect("bias slot"));
                        z = tape.add_row(z, b);
                    }
                    h = if l + 1 == n_layers {
                        z
                    } else {
                        match spec.activation() {
                            Activation::Relu => tape.relu(z),
                            Activation::Tanh => tape.tanh(z),
                        }
                    };
                }
                let n = x.rows;
                match &batch.targets {
                    Targets::Real(t) => Recorded { loss: tape.mse(h, &t.data), outputs: h, head: OutputHead::Mse { n } },
                    Targets::Labels(y) => {
                        Recorded { loss: tape.softmax_xent(h, y), outputs: h, head: OutputHead::SoftmaxXent { n } }
                    }
                }
            }
            Model::Rosenbrock(spec) => {
                let manifest = self.manifest();
                let x = leaf(tape, &manifest[0]);
                let y = leaf(tape, &manifest[1]);
                let neg_x = tape.scale(x, -1.0);
                let r1 = tape.shift(neg_x, spec.a);
                let x2 = tape.square(x);
                let valley = tape.sub(y, x2);
                let t1 = tape.square(r1);
                let v2 = tape.square(valley);
                let t2 = tape.scale(v2, spec.b);
                let sum = tape.add(t1, t2);
                let loss = tape.sum(sum);
                let r2 = tape.scale(valley, spec.b.sqrt());
                let outputs = tape.concat_cols(&[r1, r2]);
                Recorded { loss, outputs, head: OutputHead::SumSquares }
            }
            Model::Quadratic(spec) => {
                let n = spec.dim();
                let theta = leaf(tape, &self.manifest()[0]);
                let a = tape.constant(Tensor::from_f64(n, n, &spec.a));
                let b = tape.constant(Tensor::from_f64(n, 1, &spec.b));
                let at = tape.matmul(theta, a);
                let prod = tape.mul(theta, at);
                let quad = tape.sum(prod);
                let half = tape.scale(quad, 0.5);
                let lin = tape.matmul(theta, b);
                let loss = tape.add(half, lin);
                Recorded { loss, outputs: loss, head: OutputHead::Opaque }
            }
        }
    }
}

/// Glorot-uniform weights in `[−s, s]`, `s = √(6/(fan_in + fan_out))`, zero
/// biases. Deterministic in `seed`.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> Result<ParamVector, AutodiffError> {
    spec.validate()?;
    let manifest = spec.manifest();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    for slot in &manifest {
        let (fan_in, fan_out) = slot.shape;
        if slot.name.ends_with(".bias") {
            values.extend(std::iter::repeat_n(0.0, fan_out));
        } else {
            let s = glorot_bound(fan_in, fan_out);
            let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
            values.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
        }
    }
    ParamVector::new(values, Arc::new(manifest))
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn rosenbrock_objective(spec: RosenbrockSpec) -> Result<crate::autodiff::Objective, AutodiffError> {
    crate::autodiff::Objective::new(Model::Rosenbrock(spec))
}

/// Mean-reduced loss of precomputed model outputs.
pub fn loss_eval(kind: LossKind, outputs: &Tensor<f64>, targets: &Targets) -> Result<f64, AutodiffError> {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(outputs.clone());
    let loss = match (kind, targets) {
        (LossKind::MeanSquaredError, Targets::Real(t)) => {
            if t.shape() != outputs.shape() {
                return Err(AutodiffError::InvalidBatch("outputs and targets differ in shape".into()));
            }
            tape.mse(z, &t.data)
        }
        (LossKind::SoftmaxCrossEntropy, Targets::Labels(y)) => {
            if y.len() != outputs.rows {
                return Err(AutodiffError::InvalidBatch("one label per output row is required".into()));
            }
            if let Some(&label) = y.iter().find(|&&l| l >= outputs.cols) {
                return Err(AutodiffError::LabelOutOfRange { label, classes: outputs.cols });
            }
            tape.softmax_xent(z, y)
        }
        _ => return Err(AutodiffError::InvalidBatch("target type does not match loss kind".into())),
    };
    let v = tape.value(loss).data[0];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AutodiffError::NonFinite { context: "loss_eval".into() })
    }
}
