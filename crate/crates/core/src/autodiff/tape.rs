//! Tensor-level reverse-mode tape.
//!
//! Nodes are dense row-major matrices. The tape is generic over the element
//! type, so the same graph code yields values (`f64`) or values plus
//! directional derivatives ([`Dual`](super::Dual)).

use super::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::new(rows, cols, data.iter().map(|&x| T::constant(x)).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn primal(&self) -> Tensor<f64> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.primal()).collect(),
        }
    }
}

/// `a (n×k) · b (k×m)`.
fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions differ");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(n, m, out)
}

/// `g (n×m) · bᵀ` where `b` is `k×m`.
fn matmul_rhs_t<T: Scalar>(g: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (g.rows, b.rows);
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let g_row = g.row(i);
        for p in 0..k {
            let mut acc = T::zero();
            for (&x, &y) in g_row.iter().zip(b.row(p)) {
                acc += x * y;
            }
            out.push(acc);
        }
    }
    Tensor::new(n, k, out)
}

/// `aᵀ · g` where `a` is `n×k` and `g` is `n×m`.
fn matmul_lhs_t<T: Scalar>(a: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows, a.cols, g.cols);
    let mut out = vec![T::zero(); k * m];
    for i in 0..n {
        let g_row = g.row(i);
        for p in 0..k {
            let aip = a.data[i * k + p];
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
    Tensor::new(k, m, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Param { offset: usize },
    Constant,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Square(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    ConcatCols(Vec<NodeId>),
    Mse { outputs: NodeId, targets: Vec<f64> },
    SoftmaxXent { logits: NodeId, labels: Vec<usize> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_of(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Leaf whose gradient lands at `offset..offset + rows*cols` of the flat
    /// parameter gradient.
    pub fn param(&mut self, offset: usize, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Param { offset }, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::MatMul(a, b), g)
    }

    /// Adds a `1×m` row to every row of an `n×m` node.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows, 1, "bias must be a single row");
        assert_eq!(av.cols, bv.cols, "bias width differs");
        let mut data = av.data.clone();
        for row in data.chunks_mut(av.cols) {
            for (x, &b) in row.iter_mut().zip(&bv.data) {
                *x += b;
            }
        }
        let v = Tensor::new(av.rows, av.cols, data);
        let g = self.grad_of(&[a, bias]);
        self.push(v, Op::AddRow(a, bias), g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let g = self.grad_of(&[a, b]);
        self.push(v, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x.scale(c));
        let g = self.grad_of(&[a]);
        self.push(v, Op::Scale(a, c), g)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + T::constant(c));
        let g = self.grad_of(&[a]);
        self.push(v, Op::Shift(a), g)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let g = self.grad_of(&[a]);
        self.push(v, Op::Square(a), g)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Scalar::tanh);
        let g = self.grad_of(&[a]);
        self.push(v, Op::Tanh(a), g)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .map(|x| if x.primal() > 0.0 { x } else { T::zero() });
        let g = self.grad_of(&[a]);
        self.push(v, Op::Relu(a), g)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &x in &self.value(a).data {
            acc += x;
        }
        let g = self.grad_of(&[a]);
        self.push(Tensor::new(1, 1, vec![acc]), Op::Sum(a), g)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows, rows, "concat row counts differ");
                data.extend_from_slice(v.row(i));
            }
        }
        let g = self.grad_of(parts);
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), g)
    }

    /// `(1/N) Σᵢ ‖ŷᵢ − yᵢ‖²` over the rows of `outputs`.
    pub fn mse(&mut self, outputs: NodeId, targets: &[f64]) -> NodeId {
        let out = self.value(outputs);
        assert_eq!(out.data.len(), targets.len(), "target shape differs");
        let mut acc = T::zero();
        for (&o, &t) in out.data.iter().zip(targets) {
            let r = o - T::constant(t);
            acc += r * r;
        }
        let loss = acc.scale(1.0 / out.rows as f64);
        let g = self.grad_of(&[outputs]);
        self.push(
            Tensor::new(1, 1, vec![loss]),
            Op::Mse { outputs, targets: targets.to_vec() },
            g,
        )
    }

    /// Mean softmax cross-entropy, stabilised by subtracting each row's
    /// largest logit.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.rows, labels.len(), "label count differs");
        let mut acc = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let shift = T::constant(row_max(row));
            let mut s = T::zero();
            for &v in row {
                s += (v - shift).exp();
            }
            acc += s.ln() - (row[y] - shift);
        }
        let loss = acc.scale(1.0 / z.rows as f64);
        let g = self.grad_of(&[logits]);
        self.push(
            Tensor::new(1, 1, vec![loss]),
            Op::SoftmaxXent { logits, labels: labels.to_vec() },
            g,
        )
    }

    /// Propagates `seed` (the adjoint of `root`) back through the tape and
    /// returns the flat parameter gradient of length `n_params`.
    pub fn backward(&self, root: NodeId, seed: Tensor<T>, n_params: usize) -> Vec<T> {
        assert_eq!(self.value(root).shape(), seed.shape(), "seed shape differs");
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed);
        let mut grad = vec![T::zero(); n_params];

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = adj[idx].take() else { continue };
            let send = |id: NodeId, g: Tensor<T>, adj: &mut Vec<Option<Tensor<T>>>| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut adj[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Param { offset } => {
                    for (dst, &g) in grad[*offset..*offset + up.data.len()].iter_mut().zip(&up.data) {
                        *dst += g;
                    }
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        send(*a, matmul_rhs_t(&up, self.value(*b)), &mut adj);
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, matmul_lhs_t(self.value(*a), &up), &mut adj);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.nodes[bias.0].needs_grad {
                        let mut col = vec![T::zero(); up.cols];
                        for row in up.data.chunks(up.cols) {
                            for (c, &g) in col.iter_mut().zip(row) {
                                *c += g;
                            }
                        }
                        send(*bias, Tensor::new(1, up.cols, col), &mut adj);
                    }
                    send(*a, up, &mut adj);
                }
                Op::Add(a, b) => {
                    send(*b, up.clone(), &mut adj);
                    send(*a, up, &mut adj);
                }
                Op::Sub(a, b) => {
                    send(*b, up.map(|g| -g), &mut adj);
                    send(*a, up, &mut adj);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    send(*a, up.zip(bv, |g, y| g * y), &mut adj);
                    send(*b, up.zip(av, |g, x| g * x), &mut adj);
                }
                Op::Scale(a, c) => send(*a, up.map(|g| g.scale(*c)), &mut adj),
                Op::Shift(a) => send(*a, up, &mut adj),
                Op::Square(a) => {
                    let g = up.zip(self.value(*a), |g, x| g * x.scale(2.0));
                    send(*a, g, &mut adj);
                }
                Op::Tanh(a) => {
                    let one = T::constant(1.0);
                    let g = up.zip(&node.value, |g, y| g * (one - y * y));
                    send(*a, g, &mut adj);
                }
                Op::Relu(a) => {
                    let g = up.zip(self.value(*a), |g, x| if x.primal() > 0.0 { g } else { T::zero() });
                    send(*a, g, &mut adj);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    send(*a, Tensor::new(r, c, vec![up.data[0]; r * c]), &mut adj);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut data = Vec::with_capacity(up.rows * pc);
                        for i in 0..up.rows {
                            data.extend_from_slice(&up.row(i)[start..start + pc]);
                        }
                        start += pc;
                        send(p, Tensor::new(up.rows, pc, data), &mut adj);
                    }
                }
                Op::Mse { outputs, targets } => {
                    let out = self.value(*outputs);
                    let c = up.data[0].scale(2.0 / out.rows as f64);
                    let data = out
                        .data
                        .iter()
                        .zip(targets)
                        .map(|(&o, &t)| c * (o - T::constant(t)))
                        .collect();
                    send(*outputs, Tensor::new(out.rows, out.cols, data), &mut adj);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let z = self.value(*logits);
                    let c = up.data[0].scale(1.0 / z.rows as f64);
                    let mut data = Vec::with_capacity(z.data.len());
                    for (i, &y) in labels.iter().enumerate() {
                        let p = softmax_row(z.row(i));
                        for (j, pj) in p.into_iter().enumerate() {
                            let d = if j == y { pj - T::constant(1.0) } else { pj };
                            data.push(c * d);
                        }
                    }
                    send(*logits, Tensor::new(z.rows, z.cols, data), &mut adj);
                }
            }
        }
        grad
    }
}

impl Tape<super::Dual> {
    /// Drops tangents, leaving a tape with the same structure over values.
    pub fn primal_tape(&self) -> Tape<f64> {
        Tape {
            nodes: self
                .nodes
                .iter()
                .map(|n| Node { value: n.value.primal(), op: n.op.clone(), needs_grad: n.needs_grad })
                .collect(),
        }
    }
}

fn row_max<T: Scalar>(row: &[T]) -> f64 {
    row.iter().map(|x| x.primal()).fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let shift = T::constant(row_max(row));
    let e: Vec<T> = row.iter().map(|&v| (v - shift).exp()).collect();
    let mut s = T::zero();
    for &x in &e {
        s += x;
    }
    e.into_iter().map(|x| x / s).collect()
}
