//! Dense f64 tensors with a reverse-mode tape.
//!
//! The graph is rebuilt dynamically for every rollout (episodes unroll the
//! LSTM to different lengths), so nodes are appended in topological order and
//! a single reverse sweep populates every gradient. Only the operations the
//! navigation model actually needs are implemented; there is no broadcasting
//! beyond row-vector scaling and no GPU path.

mod check;

pub use check::{grad_check, grad_check_sampled};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    BadShape { len: usize, shape: Vec<usize> },
    #[error("non-finite input to {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called twice without reset_grads")]
    BackwardTwice,
    #[error("invalid node id {0}")]
    BadNode(usize),
    #[error("invalid argument to {op}: {detail}")]
    BadArg { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major 2-D tensor of f64 with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.len() != 2 {
            return Err(TensorError::BadShape { len: data.len(), shape });
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols], grad: None }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![v; rows * cols], grad: None }
    }

    /// 1×n row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Tensor { shape: vec![1, data.len()], data, grad: None }
    }

    /// n×1 column vector.
    pub fn column(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len(), 1], data, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v], grad: None }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(TensorError::BadShape { len: 0, shape: vec![r, c] });
        }
        Ok(Tensor { shape: vec![r, c], data: rows.concat(), grad: None })
    }

    /// Uniform in [-limit, limit].
    pub fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
        Tensor { shape: vec![rows, cols], data, grad: None }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let c_n = self.shape[1];
        self.data[r * c_n + c] = v;
    }

    fn ensure_grad(&mut self) -> &mut Vec<f64> {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    /// x (m×n) times a 1×1 node, gradients to both.
    MulScalar { a: NodeId, s: NodeId },
    /// x (m×n) row i scaled by v[i] (v is m×1), gradients to both.
    RowScale { a: NodeId, v: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    SoftmaxRows { a: NodeId },
    LogSoftmaxRows { a: NodeId },
    MeanPoolRows { a: NodeId },
    SumAll { a: NodeId },
    Transpose { a: NodeId },
    Concat { inputs: Vec<NodeId>, axis: usize },
    SelectRow { a: NodeId, idx: usize },
    SelectColumn { a: NodeId, idx: usize },
    Reshape { a: NodeId },
    /// mask holds per-element multipliers (0 or 1/keep); identity is never recorded.
    Dropout { a: NodeId, mask: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    out: Tensor,
}

/// Tape of operations in construction (= topological) order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf (parameter or constant input).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].out
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].out.grad()
    }

    fn push(&mut self, op: Op, out: Tensor) -> NodeId {
        self.nodes.push(Node { op, out });
        NodeId(self.nodes.len() - 1)
    }

    fn shape2(&self, id: NodeId) -> (usize, usize) {
        let t = &self.nodes[id.0].out;
        (t.rows(), t.cols())
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{m}x{k} * {k2}x{n}"),
            });
        }
        let da = &self.nodes[a.0].out.data;
        let db = &self.nodes[b.0].out.data;
        let mut out = vec![0.0; m * n];
        matmul_into(da, db, m, k, n, &mut out);
        let t = Tensor { shape: vec![m, n], data: out, grad: None };
        Ok(self.push(Op::MatMul { a, b }, t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape2(a);
        if sa != self.shape2(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", sa, self.shape2(b)),
            });
        }
        let data = zip_map(&self.nodes[a.0].out.data, &self.nodes[b.0].out.data, |x, y| x + y);
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        Ok(self.push(Op::Add { a, b }, t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape2(a);
        if sa != self.shape2(b) {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                detail: format!("{:?} vs {:?}", sa, self.shape2(b)),
            });
        }
        let data = zip_map(&self.nodes[a.0].out.data, &self.nodes[b.0].out.data, |x, y| x - y);
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        Ok(self.push(Op::Sub { a, b }, t))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape2(a);
        if sa != self.shape2(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", sa, self.shape2(b)),
            });
        }
        let data = zip_map(&self.nodes[a.0].out.data, &self.nodes[b.0].out.data, |x, y| x * y);
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        Ok(self.push(Op::Mul { a, b }, t))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let sa = self.shape2(a);
        let data = self.nodes[a.0].out.data.iter().map(|x| x * factor).collect();
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        self.push(Op::Scale { a, factor }, t)
    }

    /// Multiply by a learnable 1×1 scalar node.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape2(s) != (1, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "mul_scalar",
                detail: format!("scalar operand has shape {:?}", self.shape2(s)),
            });
        }
        let sv = self.nodes[s.0].out.data[0];
        let sa = self.shape2(a);
        let data = self.nodes[a.0].out.data.iter().map(|x| x * sv).collect();
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        Ok(self.push(Op::MulScalar { a, s }, t))
    }

    /// Scale row i of `a` (m×n) by `v[i]` (v is m×1).
    pub fn row_scale(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if self.shape2(v) != (m, 1) {
            return Err(TensorError::ShapeMismatch {
                op: "row_scale",
                detail: format!("{m}x{n} rows scaled by {:?}", self.shape2(v)),
            });
        }
        let av = &self.nodes[a.0].out.data;
        let vv = &self.nodes[v.0].out.data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = av[i * n + j] * vv[i];
            }
        }
        let t = Tensor { shape: vec![m, n], data, grad: None };
        Ok(self.push(Op::RowScale { a, v }, t))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let sa = self.shape2(a);
        let data = self.nodes[a.0].out.data.iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        self.push(Op::Relu { a }, t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let sa = self.shape2(a);
        let data = self.nodes[a.0].out.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        self.push(Op::Sigmoid { a }, t)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let sa = self.shape2(a);
        let data = self.nodes[a.0].out.data.iter().map(|&x| x.tanh()).collect();
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        self.push(Op::Tanh { a }, t)
    }

    /// Row-wise softmax, stabilised by row-max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if n == 0 {
            return Err(TensorError::ShapeMismatch { op: "softmax_rows", detail: "empty rows".into() });
        }
        let av = &self.nodes[a.0].out.data;
        if av.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&av[i * n..(i + 1) * n], &mut data[i * n..(i + 1) * n]);
        }
        let t = Tensor { shape: vec![m, n], data, grad: None };
        Ok(self.push(Op::SoftmaxRows { a }, t))
    }

    /// Row-wise log-softmax (x − logsumexp per row).
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if n == 0 {
            return Err(TensorError::ShapeMismatch { op: "log_softmax_rows", detail: "empty rows".into() });
        }
        let av = &self.nodes[a.0].out.data;
        if av.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: "log_softmax_rows" });
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            for j in 0..n {
                data[i * n + j] = row[j] - lse;
            }
        }
        let t = Tensor { shape: vec![m, n], data, grad: None };
        Ok(self.push(Op::LogSoftmaxRows { a }, t))
    }

    /// Column means: m×n → 1×n.
    pub fn mean_pool_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape2(a);
        let av = &self.nodes[a.0].out.data;
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += av[i * n + j];
            }
        }
        for v in data.iter_mut() {
            *v /= m as f64;
        }
        let t = Tensor { shape: vec![1, n], data, grad: None };
        self.push(Op::MeanPoolRows { a }, t)
    }

    /// Sum of all elements: m×n → 1×1.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].out.data.iter().sum();
        self.push(Op::SumAll { a }, Tensor::scalar(s))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape2(a);
        let av = &self.nodes[a.0].out.data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = av[i * n + j];
            }
        }
        let t = Tensor { shape: vec![n, m], data, grad: None };
        self.push(Op::Transpose { a }, t)
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = extend rows).
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() || axis > 1 {
            return Err(TensorError::BadArg {
                op: "concat",
                detail: format!("{} inputs, axis {axis}", inputs.len()),
            });
        }
        let shapes: Vec<(usize, usize)> = inputs.iter().map(|&i| self.shape2(i)).collect();
        let t = if axis == 0 {
            let n = shapes[0].1;
            if shapes.iter().any(|s| s.1 != n) {
                return Err(TensorError::ShapeMismatch { op: "concat", detail: format!("{shapes:?} on axis 0") });
            }
            let m: usize = shapes.iter().map(|s| s.0).sum();
            let mut data = Vec::with_capacity(m * n);
            for &id in inputs {
                data.extend_from_slice(&self.nodes[id.0].out.data);
            }
            Tensor { shape: vec![m, n], data, grad: None }
        } else {
            let m = shapes[0].0;
            if shapes.iter().any(|s| s.0 != m) {
                return Err(TensorError::ShapeMismatch { op: "concat", detail: format!("{shapes:?} on axis 1") });
            }
            let n: usize = shapes.iter().map(|s| s.1).sum();
            let mut data = vec![0.0; m * n];
            let mut off = 0;
            for (&id, &(_, ni)) in inputs.iter().zip(&shapes) {
                let src = &self.nodes[id.0].out.data;
                for i in 0..m {
                    data[i * n + off..i * n + off + ni].copy_from_slice(&src[i * ni..(i + 1) * ni]);
                }
                off += ni;
            }
            Tensor { shape: vec![m, n], data, grad: None }
        };
        Ok(self.push(Op::Concat { inputs: inputs.to_vec(), axis }, t))
    }

    /// Row `idx` as a 1×n tensor (embedding lookup).
    pub fn select_row(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if idx >= m {
            return Err(TensorError::BadArg { op: "select_row", detail: format!("row {idx} of {m}") });
        }
        let data = self.nodes[a.0].out.data[idx * n..(idx + 1) * n].to_vec();
        let t = Tensor { shape: vec![1, n], data, grad: None };
        Ok(self.push(Op::SelectRow { a, idx }, t))
    }

    /// Column `idx` as an m×1 tensor.
    pub fn select_column(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if idx >= n {
            return Err(TensorError::BadArg { op: "select_column", detail: format!("col {idx} of {n}") });
        }
        let av = &self.nodes[a.0].out.data;
        let data = (0..m).map(|i| av[i * n + idx]).collect();
        let t = Tensor { shape: vec![m, 1], data, grad: None };
        Ok(self.push(Op::SelectColumn { a, idx }, t))
    }

    /// Reinterpret as rows×cols without moving data.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let (m, n) = self.shape2(a);
        if m * n != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{m}x{n} -> {rows}x{cols}"),
            });
        }
        let data = self.nodes[a.0].out.data.clone();
        let t = Tensor { shape: vec![rows, cols], data, grad: None };
        Ok(self.push(Op::Reshape { a }, t))
    }

    /// Inverted dropout: keeps an element with probability 1−rate and scales
    /// it by 1/(1−rate). With `train` off (or rate 0) this is the exact
    /// identity — the input node is returned unchanged.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut impl Rng, train: bool) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadArg { op: "dropout", detail: format!("rate {rate}") });
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let sa = self.shape2(a);
        let mask: Vec<f64> = (0..sa.0 * sa.1)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = zip_map(&self.nodes[a.0].out.data, &mask, |x, m| x * m);
        let t = Tensor { shape: vec![sa.0, sa.1], data, grad: None };
        Ok(self.push(Op::Dropout { a, mask }, t))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Clear all gradient buffers (allows a second `backward`).
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.out.grad = None;
        }
        self.backward_done = false;
    }

    /// One reverse sweep from a scalar loss; every node reachable from it
    /// gets its gradient populated. Calling twice without `reset_grads` is
    /// an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::BadNode(loss.0));
        }
        if self.nodes[loss.0].out.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.nodes[loss.0].out.shape.clone() });
        }
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_done = true;
        self.nodes[loss.0].out.ensure_grad()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if self.nodes[i].out.grad.is_none() {
                continue;
            }
            let g = self.nodes[i].out.grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = self.shape2(a);
                    let n = self.shape2(b).1;
                    // dA = dC·Bᵀ
                    let bv = self.nodes[b.0].out.data.clone();
                    let mut da = vec![0.0; m * k];
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i2 * n + j] * bv[p * n + j];
                            }
                            da[i2 * k + p] = s;
                        }
                    }
                    // dB = Aᵀ·dC
                    let av = self.nodes[a.0].out.data.clone();
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i2 in 0..m {
                                s += av[i2 * k + p] * g[i2 * n + j];
                            }
                            db[p * n + j] = s;
                        }
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                    accumulate(self.nodes[b.0].out.ensure_grad(), &db);
                }
                Op::Add { a, b } => {
                    accumulate(self.nodes[a.0].out.ensure_grad(), &g);
                    accumulate(self.nodes[b.0].out.ensure_grad(), &g);
                }
                Op::Sub { a, b } => {
                    accumulate(self.nodes[a.0].out.ensure_grad(), &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(self.nodes[b.0].out.ensure_grad(), &neg);
                }
                Op::Mul { a, b } => {
                    let bv = self.nodes[b.0].out.data.clone();
                    let av = self.nodes[a.0].out.data.clone();
                    let da = zip_map(&g, &bv, |x, y| x * y);
                    let db = zip_map(&g, &av, |x, y| x * y);
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                    accumulate(self.nodes[b.0].out.ensure_grad(), &db);
                }
                Op::Scale { a, factor } => {
                    let da: Vec<f64> = g.iter().map(|x| x * factor).collect();
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::MulScalar { a, s } => {
                    let sv = self.nodes[s.0].out.data[0];
                    let av = self.nodes[a.0].out.data.clone();
                    let da: Vec<f64> = g.iter().map(|x| x * sv).collect();
                    let ds: f64 = g.iter().zip(&av).map(|(x, y)| x * y).sum();
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                    accumulate(self.nodes[s.0].out.ensure_grad(), &[ds]);
                }
                Op::RowScale { a, v } => {
                    let (m, n) = self.shape2(a);
                    let vv = self.nodes[v.0].out.data.clone();
                    let av = self.nodes[a.0].out.data.clone();
                    let mut da = vec![0.0; m * n];
                    let mut dv = vec![0.0; m];
                    for i2 in 0..m {
                        for j in 0..n {
                            da[i2 * n + j] = g[i2 * n + j] * vv[i2];
                            dv[i2] += g[i2 * n + j] * av[i2 * n + j];
                        }
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                    accumulate(self.nodes[v.0].out.ensure_grad(), &dv);
                }
                Op::Relu { a } => {
                    let av = self.nodes[a.0].out.data.clone();
                    let da = zip_map(&g, &av, |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::Sigmoid { a } => {
                    let out = self.nodes[i].out.data.clone();
                    let da = zip_map(&g, &out, |x, s| x * s * (1.0 - s));
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::Tanh { a } => {
                    let out = self.nodes[i].out.data.clone();
                    let da = zip_map(&g, &out, |x, t| x * (1.0 - t * t));
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::SoftmaxRows { a } => {
                    let (m, n) = self.shape2(a);
                    let out = self.nodes[i].out.data.clone();
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        let s = &out[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            da[r * n + j] = s[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::LogSoftmaxRows { a } => {
                    let (m, n) = self.shape2(a);
                    let out = self.nodes[i].out.data.clone();
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..n {
                            let soft = out[r * n + j].exp();
                            da[r * n + j] = gr[j] - soft * gsum;
                        }
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::MeanPoolRows { a } => {
                    let (m, n) = self.shape2(a);
                    let mut da = vec![0.0; m * n];
                    for i2 in 0..m {
                        for j in 0..n {
                            da[i2 * n + j] = g[j] / m as f64;
                        }
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::SumAll { a } => {
                    let count = self.nodes[a.0].out.numel();
                    let da = vec![g[0]; count];
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::Transpose { a } => {
                    let (m, n) = self.shape2(a);
                    let mut da = vec![0.0; m * n];
                    for i2 in 0..m {
                        for j in 0..n {
                            da[i2 * n + j] = g[j * m + i2];
                        }
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::Concat { inputs, axis } => {
                    if axis == 0 {
                        let mut off = 0;
                        for &id in &inputs {
                            let count = self.nodes[id.0].out.numel();
                            accumulate(self.nodes[id.0].out.ensure_grad(), &g[off..off + count]);
                            off += count;
                        }
                    } else {
                        let m = self.shape2(inputs[0]).0;
                        let total: usize = inputs.iter().map(|&id| self.shape2(id).1).sum();
                        let mut off = 0;
                        for &id in &inputs {
                            let ni = self.shape2(id).1;
                            let mut da = vec![0.0; m * ni];
                            for r in 0..m {
                                da[r * ni..(r + 1) * ni]
                                    .copy_from_slice(&g[r * total + off..r * total + off + ni]);
                            }
                            accumulate(self.nodes[id.0].out.ensure_grad(), &da);
                            off += ni;
                        }
                    }
                }
                Op::SelectRow { a, idx } => {
                    let (m, n) = self.shape2(a);
                    let mut da = vec![0.0; m * n];
                    da[idx * n..(idx + 1) * n].copy_from_slice(&g);
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::SelectColumn { a, idx } => {
                    let (m, n) = self.shape2(a);
                    let mut da = vec![0.0; m * n];
                    for i2 in 0..m {
                        da[i2 * n + idx] = g[i2];
                    }
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
                Op::Reshape { a } => {
                    accumulate(self.nodes[a.0].out.ensure_grad(), &g);
                }
                Op::Dropout { a, mask } => {
                    let da = zip_map(&g, &mask, |x, m2| x * m2);
                    accumulate(self.nodes[a.0].out.ensure_grad(), &da);
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(target: &mut [f64], src: &[f64]) {
    for (t, s) in target.iter_mut().zip(src) {
        *t += s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Standard LSTM cell parameters as graph nodes (one matrix pair + bias per
/// gate; `x` side is 1×input, `h` side is 1×hidden).
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w_xi: NodeId,
    pub w_hi: NodeId,
    pub b_i: NodeId,
    pub w_xf: NodeId,
    pub w_hf: NodeId,
    pub b_f: NodeId,
    pub w_xg: NodeId,
    pub w_hg: NodeId,
    pub b_g: NodeId,
    pub w_xo: NodeId,
    pub w_ho: NodeId,
    pub b_o: NodeId,
}

/// One LSTM step composed from primitive ops (gradients come from the tape).
/// Returns (h', c').
pub fn lstm_step(
    g: &mut Graph,
    p: &LstmNodes,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let gate = |g: &mut Graph, wx, wh, b| -> Result<NodeId> {
        let xa = g.matmul(x, wx)?;
        let ha = g.matmul(h, wh)?;
        let s = g.add(xa, ha)?;
        g.add(s, b)
    };
    let i_g = gate(g, p.w_xi, p.w_hi, p.b_i)?;
    let i_g = g.sigmoid(i_g);
    let f_g = gate(g, p.w_xf, p.w_hf, p.b_f)?;
    let f_g = g.sigmoid(f_g);
    let o_g = gate(g, p.w_xo, p.w_ho, p.b_o)?;
    let o_g = g.sigmoid(o_g);
    let cand = gate(g, p.w_xg, p.w_hg, p.b_g)?;
    let cand = g.tanh(cand);

    let keep = g.mul(f_g, c)?;
    let write = g.mul(i_g, cand)?;
    let c_next = g.add(keep, write)?;
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o_g, c_act)?;
    Ok((h_next, c_next))
}
