//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Values are stored as 2-D
//! row-major blocks (`[rows, cols]`); 1-D inputs are lifted to `[1, n]`.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation tags, used for diagnostics and for the gradient-check fault hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Concat,
    Slice,
    Reshape,
    Gather,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sum,
    Mean,
    Exp,
    Log,
    LogFloor,
    Sqrt,
    Abs,
    ClampMin,
    Softmax,
    Sigmoid,
    Tanh,
    Relu,
    Gelu,
    Cosine,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::Gather => "gather",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::LogFloor => "log_floor",
            OpKind::Sqrt => "sqrt",
            OpKind::Abs => "abs",
            OpKind::ClampMin => "clamp_min",
            OpKind::Softmax => "softmax",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Gelu => "gelu",
            OpKind::Cosine => "cosine",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL_OPS.iter().copied().find(|k| k.name() == name)
    }
}

const ALL_OPS: [OpKind; 26] = [
    OpKind::Leaf,
    OpKind::MatMul,
    OpKind::Transpose,
    OpKind::Concat,
    OpKind::Slice,
    OpKind::Reshape,
    OpKind::Gather,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Scale,
    OpKind::AddScalar,
    OpKind::Sum,
    OpKind::Mean,
    OpKind::Exp,
    OpKind::Log,
    OpKind::LogFloor,
    OpKind::Sqrt,
    OpKind::Abs,
    OpKind::ClampMin,
    OpKind::Softmax,
    OpKind::Sigmoid,
    OpKind::Tanh,
    OpKind::Relu,
    OpKind::Gelu,
    OpKind::Cosine,
];

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    LogFloor(Var, f64),
    Sqrt(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Cosine(Var, Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Gather { .. } => OpKind::Gather,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::LogFloor(..) => OpKind::LogFloor,
            Op::Sqrt(_) => OpKind::Sqrt,
            Op::Abs(_) => OpKind::Abs,
            Op::ClampMin(..) => OpKind::ClampMin,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Cosine(..) => OpKind::Cosine,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], keyed by node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(&var).map(Vec::as_slice)
    }

    /// Gradient for `var`, or zeros of `len` when it did not influence the loss.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.grads.get(&var).cloned().unwrap_or_else(|| vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

const COSINE_FLOOR: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// Sum a broadcast gradient `[rows, cols]` back down to `[r, c]`.
fn reduce_broadcast(grad: &[f64], rows: usize, cols: usize, r: usize, c: usize) -> Vec<f64> {
    if r == rows && c == cols {
        return grad.to_vec();
    }
    let mut out = vec![0.0; r * c];
    for i in 0..rows {
        let ri = if r == 1 { 0 } else { i };
        for j in 0..cols {
            let cj = if c == 1 { 0 } else { j };
            out[ri * c + cj] += grad[i * cols + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scale the backward rule of one op kind by 1.5 so that
    /// gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a tensor as a graph input. Tensors of rank > 2 are rejected.
    pub fn leaf(&mut self, tensor: &Tensor) -> Result<Var> {
        let (rows, cols) = match tensor.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::contract(format!(
                    "graph supports rank 1 or 2 tensors, got shape {other:?}"
                )))
            }
        };
        let requires_grad = tensor.requires_grad;
        self.nodes.push(Node {
            rows,
            cols,
            value: tensor.data().to_vec(),
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input (never receives a gradient).
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() || rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch {
                op: "constant",
                left: vec![rows, cols],
                right: vec![value.len()],
            });
        }
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant_row(&mut self, value: Vec<f64>) -> Result<Var> {
        let n = value.len();
        self.constant(1, n, value)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let n = &self.nodes[v.0];
        [n.rows, n.cols]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Copy a node out as a tensor (without gradient).
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&[n.rows, n.cols], n.value.clone()).expect("node shape")
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        Error::ShapeMismatch {
            op,
            left: vec![ar, ac],
            right: vec![br, bc],
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(m, n, out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        Ok(self.push(c, r, out, Op::Transpose(a), &[a]))
    }

    /// Concatenate along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        if axis > 1 {
            return Err(Error::contract(format!("concat axis {axis} out of range")));
        }
        let (r0, c0) = self.dims(inputs[0]);
        for &v in &inputs[1..] {
            let (r, c) = self.dims(v);
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(self.mismatch("concat", inputs[0], v));
            }
        }
        let (rows, cols, out) = if axis == 0 {
            let rows = inputs.iter().map(|&v| self.dims(v).0).sum();
            let mut out = Vec::with_capacity(rows * c0);
            for &v in inputs {
                out.extend_from_slice(&self.nodes[v.0].value);
            }
            (rows, c0, out)
        } else {
            let cols: usize = inputs.iter().map(|&v| self.dims(v).1).sum();
            let mut out = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &v in inputs {
                    let c = self.nodes[v.0].cols;
                    out.extend_from_slice(&self.nodes[v.0].value[i * c..(i + 1) * c]);
                }
            }
            (r0, cols, out)
        };
        Ok(self.push(
            rows,
            cols,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Take `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: vec![r, c],
                right: vec![axis, start, len],
            });
        }
        let av = &self.nodes[a.0].value;
        let (rows, cols, out) = if axis == 0 {
            (len, c, av[start * c..(start + len) * c].to_vec())
        } else {
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&av[i * c + start..i * c + start + len]);
            }
            (r, len, out)
        };
        Ok(self.push(rows, cols, out, Op::Slice { input: a, axis, start }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r * c != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: vec![r, c],
                right: vec![rows, cols],
            });
        }
        let out = self.nodes[a.0].value.clone();
        Ok(self.push(rows, cols, out, Op::Reshape(a), &[a]))
    }

    /// Select rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::contract("gather with no indices"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for table with {r} rows"
            )));
        }
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            ids.len(),
            c,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    fn broadcast_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let ok = |x: usize, y: usize| x == y || x == 1 || y == 1;
        if !ok(ar, br) || !ok(ac, bc) {
            return Err(self.mismatch(op, a, b));
        }
        Ok((ar.max(br), ac.max(bc)))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = op.kind().name();
        let (rows, cols) = self.broadcast_dims(name, a, b)?;
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out = if ar == br && ac == bc {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let x = av[if ar == 1 { 0 } else { i } * ac + if ac == 1 { 0 } else { j }];
                    let y = bv[if br == 1 { 0 } else { i } * bc + if bc == 1 { 0 } else { j }];
                    out.push(f(x, y));
                }
            }
            out
        };
        Ok(self.push(rows, cols, out, op, &[a, b]))
    }

    /// Elementwise sum with 2-D broadcasting over unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product with 2-D broadcasting over unit dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op, &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        Ok(self.unary(a, Op::Scale(a, k), |x| k * x))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        Ok(self.unary(a, Op::AddScalar(a), |x| x + k))
    }

    /// Sum of all entries, as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().sum();
        Ok(self.push(1, 1, vec![s], Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let m = v.iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(1, 1, vec![m], Op::Mean(a), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        Ok(self.unary(a, Op::Exp(a), f64::exp))
    }

    /// Natural log; non-positive input is a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((i, &x)) = self.nodes[a.0].value.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                index: i,
                value: x,
            });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    /// `ln(max(x, floor))`; gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        if !(floor > 0.0) {
            return Err(Error::contract(format!("log_floor needs floor > 0, got {floor}")));
        }
        Ok(self.unary(a, Op::LogFloor(a, floor), |x| x.max(floor).ln()))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some((i, &x)) = self.nodes[a.0].value.iter().enumerate().find(|(_, &x)| x < 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "sqrt",
                index: i,
                value: x,
            });
        }
        Ok(self.unary(a, Op::Sqrt(a), f64::sqrt))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        Ok(self.unary(a, Op::Abs(a), f64::abs))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        Ok(self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor)))
    }

    /// Softmax along each row.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (o, &x) in orow.iter_mut().zip(row) {
                *o = (x - max).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        Ok(self.push(r, c, out, Op::Softmax(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        Ok(self.unary(a, Op::Sigmoid(a), sigmoid))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        Ok(self.unary(a, Op::Tanh(a), f64::tanh))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        Ok(self.unary(a, Op::Relu(a), |x| x.max(0.0)))
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        Ok(self.unary(a, Op::Gelu(a), gelu))
    }

    /// Cosine similarity of the flattened inputs, denominator floored at 1e-12.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ar * ac != br * bc {
            return Err(self.mismatch("cosine", a, b));
        }
        let value = cosine_similarity(&self.nodes[a.0].value, &self.nodes[b.0].value);
        Ok(self.push(1, 1, vec![value], Op::Cosine(a, b), &[a, b]))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.dims(loss);
        if r * c != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape [{r}, {c}]"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut contributions = self.backward_rule(node, &g);
            if self.fault == Some(node.op.kind()) {
                for (_, grad) in contributions.iter_mut() {
                    grad.iter_mut().for_each(|x| *x *= 1.5);
                }
            }
            for (input, grad) in contributions {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], grad);
                }
            }
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.filter(|_| self.nodes[i].requires_grad).map(|g| (Var(i), g)))
            .collect();
        Ok(Gradients { grads })
    }

    /// Run backward and write gradients into the given leaf tensors.
    pub fn backward_into(&self, loss: Var, leaves: &mut [(Var, &mut Tensor)]) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (var, tensor) in leaves.iter_mut() {
            if tensor.requires_grad {
                tensor.grad = Some(grads.get_or_zeros(*var, tensor.len()));
            }
        }
        Ok(grads)
    }

    fn backward_rule(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let y = node.value.as_slice();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                let av = val(*a);
                let bv = val(*b);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let x = av[i * k + p];
                        if x != 0.0 {
                            for (o, &gy) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gy;
                            }
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                vec![(*a, ga)]
            }
            Op::Concat { inputs, axis } => {
                let mut out = Vec::with_capacity(inputs.len());
                if *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = self.nodes[v.0].value.len();
                        out.push((v, g[offset..offset + n].to_vec()));
                        offset += n;
                    }
                } else {
                    let total = node.cols;
                    let mut col = 0;
                    for &v in inputs {
                        let (r, c) = self.dims(v);
                        let mut gv = Vec::with_capacity(r * c);
                        for i in 0..r {
                            gv.extend_from_slice(&g[i * total + col..i * total + col + c]);
                        }
                        col += c;
                        out.push((v, gv));
                    }
                }
                out
            }
            Op::Slice { input, axis, start } => {
                let (r, c) = self.dims(*input);
                let mut ga = vec![0.0; r * c];
                if *axis == 0 {
                    ga[start * c..start * c + g.len()].copy_from_slice(g);
                } else {
                    let len = node.cols;
                    for i in 0..r {
                        ga[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                }
                vec![(*input, ga)]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Gather { table, ids } => {
                let (r, c) = self.dims(*table);
                let mut gt = vec![0.0; r * c];
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += g[k * c + j];
                    }
                }
                vec![(*table, gt)]
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (ar, ac) = self.dims(*a);
                let (br, bc) = self.dims(*b);
                let ga = reduce_broadcast(g, node.rows, node.cols, ar, ac);
                let mut gb = reduce_broadcast(g, node.rows, node.cols, br, bc);
                if sign < 0.0 {
                    gb.iter_mut().for_each(|x| *x = -*x);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (ar, ac) = self.dims(*a);
                let (br, bc) = self.dims(*b);
                let av = val(*a);
                let bv = val(*b);
                let (rows, cols) = (node.rows, node.cols);
                let at = |i: usize, j: usize, r: usize, c: usize, v: &[f64]| {
                    v[if r == 1 { 0 } else { i } * c + if c == 1 { 0 } else { j }]
                };
                let mut full_a = vec![0.0; rows * cols];
                let mut full_b = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * cols + j;
                        full_a[k] = g[k] * at(i, j, br, bc, bv);
                        full_b[k] = g[k] * at(i, j, ar, ac, av);
                    }
                }
                vec![
                    (*a, reduce_broadcast(&full_a, rows, cols, ar, ac)),
                    (*b, reduce_broadcast(&full_b, rows, cols, br, bc)),
                ]
            }
            Op::Scale(a, k) => vec![(*a, g.iter().map(|x| x * k).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::Sum(a) => vec![(*a, vec![g[0]; self.nodes[a.0].value.len()])],
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Exp(a) => vec![(*a, g.iter().zip(y).map(|(g, y)| g * y).collect())],
            Op::Log(a) => vec![(*a, g.iter().zip(val(*a)).map(|(g, x)| g / x).collect())],
            Op::LogFloor(a, floor) => vec![(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > *floor { g / x } else { 0.0 })
                    .collect(),
            )],
            Op::Sqrt(a) => vec![(
                *a,
                g.iter()
                    .zip(y)
                    .map(|(g, y)| if *y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect(),
            )],
            Op::Abs(a) => vec![(
                *a,
                g.iter().zip(val(*a)).map(|(g, &x)| g * x.signum() * (x != 0.0) as u8 as f64).collect(),
            )],
            Op::ClampMin(a, floor) => vec![(
                *a,
                g.iter().zip(val(*a)).map(|(g, &x)| if x > *floor { *g } else { 0.0 }).collect(),
            )],
            Op::Softmax(a) => {
                let (r, c) = (node.rows, node.cols);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::Sigmoid(a) => vec![(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())],
            Op::Tanh(a) => vec![(*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())],
            Op::Relu(a) => vec![(
                *a,
                g.iter().zip(val(*a)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
            )],
            Op::Gelu(a) => vec![(*a, g.iter().zip(val(*a)).map(|(g, &x)| g * gelu_grad(x)).collect())],
            Op::Cosine(a, b) => {
                let (ga, gb) = cosine_grad(val(*a), val(*b), g[0]);
                vec![(*a, ga), (*b, gb)]
            }
        }
    }
}

/// Cosine similarity with the denominator floored at 1e-12 (zero vectors give 0).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(COSINE_FLOOR)
}

fn cosine_grad(a: &[f64], b: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na * nb;
    if denom <= COSINE_FLOOR {
        let ga = b.iter().map(|y| g * y / COSINE_FLOOR).collect();
        let gb = a.iter().map(|x| g * x / COSINE_FLOOR).collect();
        return (ga, gb);
    }
    let c = dot / denom;
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| g * (y / denom - c * x / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| g * (x / denom - c * y / (nb * nb)))
        .collect();
    (ga, gb)
}
