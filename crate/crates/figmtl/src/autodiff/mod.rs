//! Reverse-mode automatic differentiation over dense row-major f64 arrays.
//!
//! A [`Tape`] owns every tensor created during a forward pass. Operations
//! append nodes and return [`TensorId`] handles; since an operation can only
//! reference earlier nodes, reverse insertion order is a topological order
//! and [`Tape::backward`] visits each node exactly once, accumulating
//! gradients additively across fan-out.
//!
//! Scope is deliberately narrow: 64-bit floats, no broadcasting beyond
//! bias-add and scalar ops, and only the operations the encoder and losses
//! need. A tape is confined to one thread; independent tapes may run in
//! parallel.

mod gradcheck;

pub use gradcheck::grad_check;

use crate::error::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddBias { a: TensorId, bias: TensorId },
    Scale { a: TensorId, k: f64 },
    AddScalar { a: TensorId },
    Sigmoid { a: TensorId },
    Softplus { a: TensorId },
    Gelu { a: TensorId },
    Ln { a: TensorId },
    Clamp { a: TensorId, lo: f64, hi: f64 },
    Softmax { a: TensorId, axis: usize },
    MaskedSoftmaxRows { a: TensorId },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Embedding { table: TensorId, ids: Vec<usize> },
    Row { a: TensorId, row: usize },
    SliceCols { a: TensorId, start: usize, len: usize },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    Transpose { a: TensorId },
    Sum { a: TensorId },
    Mean { a: TensorId },
}

#[derive(Debug)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Insertion-ordered computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Row-major 2D matrix product of flat buffers.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x), computed without overflow for large |x|.
fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            op,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input: participates in the forward pass only.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "constant: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(data, shape.to_vec(), Op::Leaf, false)
    }

    /// Differentiable leaf: receives a gradient during backward.
    pub fn param(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "param: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(data, shape.to_vec(), Op::Leaf, true)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Gradient buffer, present after [`Tape::backward`] touched the node.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let node = &self.nodes[id.0];
        assert_eq!(node.data.len(), 1, "scalar() on tensor of shape {:?}", node.shape);
        node.data[0]
    }

    fn dims2(&self, id: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::Contract(format!("{op} requires a 2-D tensor, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // ── Forward operations ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::MatMul { a, b }, needs))
    }

    fn zip_same_shape(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, op, needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    /// `[r, c] + [c]` row broadcast; the only broadcast this tape supports
    /// besides scalar ops.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "add_bias")?;
        if self.shape(bias) != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        let bias_data = self.data(bias);
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bias_data[j];
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(data, vec![r, c], Op::AddBias { a, bias }, needs))
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| x * k).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, Op::Scale { a, k }, needs)
    }

    pub fn add_scalar(&mut self, a: TensorId, k: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| x + k).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, Op::AddScalar { a }, needs)
    }

    fn unary(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, op, needs)
    }

    /// Elementwise logistic function; saturates, never errors.
    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, sigmoid_scalar, Op::Sigmoid { a })
    }

    /// Elementwise ln(1 + e^x).
    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, softplus_scalar, Op::Softplus { a })
    }

    /// Elementwise GELU (tanh approximation).
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, gelu_scalar, Op::Gelu { a })
    }

    /// Elementwise natural log; every element must be strictly positive.
    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        if let Some(&bad) = self.data(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Numeric(format!("ln of non-positive value {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Ln { a }))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only where the input
    /// lies inside the interval.
    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    /// Softmax along `axis`, stabilized by max-subtraction.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        if let Some(&bad) = self.data(a).iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("softmax input contains {bad}")));
        }
        let axis_size = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |s: usize| o * axis_size * inner + s * inner + i;
                let mut max = f64::NEG_INFINITY;
                for s in 0..axis_size {
                    max = max.max(src[at(s)]);
                }
                let mut sum = 0.0;
                for s in 0..axis_size {
                    let e = (src[at(s)] - max).exp();
                    out[at(s)] = e;
                    sum += e;
                }
                for s in 0..axis_size {
                    out[at(s)] /= sum;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, shape, Op::Softmax { a, axis }, needs))
    }

    /// Row-wise softmax over a 2-D tensor restricted to columns where `mask`
    /// is true; masked columns come out exactly zero.
    pub fn masked_softmax_rows(&mut self, a: TensorId, mask: &[bool]) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "masked_softmax_rows")?;
        if mask.len() != c {
            return Err(Error::Contract(format!(
                "mask length {} does not match {} columns",
                mask.len(),
                c
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Numeric("masked softmax with all columns masked".into()));
        }
        if let Some(&bad) = self.data(a).iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("softmax input contains {bad}")));
        }
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if mask[j] {
                    max = max.max(row[j]);
                }
            }
            let mut sum = 0.0;
            for j in 0..c {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, vec![r, c], Op::MaskedSoftmaxRows { a }, needs))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| {
            Error::Contract("layer_norm on a zero-rank tensor".into())
        })?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape.clone(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let src = self.data(x);
        let gamma_d = self.data(gamma);
        let beta_d = self.data(beta);
        let rows = src.len() / d;
        let mut out = vec![0.0; src.len()];
        for i in 0..rows {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out[i * d + j] = (row[j] - mean) * inv_std * gamma_d[j] + beta_d[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, shape, Op::LayerNorm { x, gamma, beta, eps }, needs))
    }

    /// Gather rows of `table` by id; backward scatter-adds into the table.
    pub fn embedding(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (vocab, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocabulary { id: bad, size: vocab });
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            out,
            vec![ids.len(), d],
            Op::Embedding { table, ids: ids.to_vec() },
            needs,
        ))
    }

    /// Select one row of a 2-D tensor as a `[1, c]` tensor.
    pub fn row(&mut self, a: TensorId, row: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "row")?;
        if row >= r {
            return Err(Error::Contract(format!("row {row} out of range for {r} rows")));
        }
        let data = self.data(a)[row * c..(row + 1) * c].to_vec();
        let needs = self.needs(a);
        Ok(self.push(data, vec![1, c], Op::Row { a, row }, needs))
    }

    /// Select a contiguous column range of a 2-D tensor.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if start + len > c {
            return Err(Error::Contract(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let src = self.data(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(data, vec![r, len], Op::SliceCols { a, start, len }, needs))
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero tensors".into()));
        }
        let (_, c) = self.dims2(parts[0], "concat_rows")?;
        let mut total_rows = 0;
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total_rows += r;
        }
        let mut data = Vec::with_capacity(total_rows * c);
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            vec![total_rows, c],
            Op::ConcatRows { parts: parts.to_vec() },
            needs,
        ))
    }

    /// Concatenate 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        }
        let (r, _) = self.dims2(parts[0], "concat_cols")?;
        let mut total_cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total_cols += pc;
        }
        let mut data = Vec::with_capacity(r * total_cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.shape(p)[1];
                let src = self.data(p);
                data.extend_from_slice(&src[i * pc..(i + 1) * pc]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            data,
            vec![r, total_cols],
            Op::ConcatCols { parts: parts.to_vec() },
            needs,
        ))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(a, "transpose")?;
        let data = transpose_raw(self.data(a), r, c);
        let needs = self.needs(a);
        Ok(self.push(data, vec![c, r], Op::Transpose { a }, needs))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![s], vec![1], Op::Sum { a }, needs)
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len() as f64;
        let s: f64 = self.data(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![s / n], vec![1], Op::Mean { a }, needs)
    }

    // ── Backward ────────────────────────────────────────────────────────

    fn accumulate(&mut self, id: TensorId, contribution: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let len = self.nodes[id.0].data.len();
        let slot = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, &c) in slot.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Accumulate into a sub-range of a node's gradient buffer.
    fn accumulate_at(&mut self, id: TensorId, offset: usize, contribution: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let len = self.nodes[id.0].data.len();
        let slot = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, &c) in slot[offset..offset + contribution.len()].iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse pass from a scalar loss. The loss gradient with respect to
    /// itself is set to exactly 1.0; every other touched node accumulates
    /// chain-rule contributions in reverse insertion order.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.clone().expect("grad checked above");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}

                Op::MatMul { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    if self.needs(a) {
                        let bt = transpose_raw(self.data(b), k, n);
                        let da = matmul_raw(&grad, &bt, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let at = transpose_raw(self.data(a), m, k);
                        let db = matmul_raw(&at, &grad, k, m, n);
                        self.accumulate(b, &db);
                    }
                }

                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }

                Op::Sub { a, b } => {
                    self.accumulate(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|&g| -g).collect();
                    self.accumulate(b, &neg);
                }

                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let da: Vec<f64> =
                            grad.iter().zip(self.data(b)).map(|(&g, &y)| g * y).collect();
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<f64> =
                            grad.iter().zip(self.data(a)).map(|(&g, &x)| g * x).collect();
                        self.accumulate(b, &db);
                    }
                }

                Op::AddBias { a, bias } => {
                    self.accumulate(a, &grad);
                    if self.needs(bias) {
                        let c = self.shape(bias)[0];
                        let mut db = vec![0.0; c];
                        for (idx, &g) in grad.iter().enumerate() {
                            db[idx % c] += g;
                        }
                        self.accumulate(bias, &db);
                    }
                }

                Op::Scale { a, k } => {
                    let da: Vec<f64> = grad.iter().map(|&g| g * k).collect();
                    self.accumulate(a, &da);
                }

                Op::AddScalar { a } => {
                    self.accumulate(a, &grad);
                }

                Op::Sigmoid { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].data)
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect();
                    self.accumulate(a, &da);
                }

                Op::Softplus { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(self.data(a))
                        .map(|(&g, &x)| g * sigmoid_scalar(x))
                        .collect();
                    self.accumulate(a, &da);
                }

                Op::Gelu { a } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(self.data(a))
                        .map(|(&g, &x)| g * gelu_deriv(x))
                        .collect();
                    self.accumulate(a, &da);
                }

                Op::Ln { a } => {
                    let da: Vec<f64> =
                        grad.iter().zip(self.data(a)).map(|(&g, &x)| g / x).collect();
                    self.accumulate(a, &da);
                }

                Op::Clamp { a, lo, hi } => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(self.data(a))
                        .map(|(&g, &x)| if x >= lo && x <= hi { g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }

                Op::Softmax { a, axis } => {
                    let shape = self.nodes[i].shape.clone();
                    let y = &self.nodes[i].data;
                    let axis_size = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut da = vec![0.0; y.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |s: usize| o * axis_size * inner + s * inner + ii;
                            let mut dot = 0.0;
                            for s in 0..axis_size {
                                dot += grad[at(s)] * y[at(s)];
                            }
                            for s in 0..axis_size {
                                da[at(s)] = y[at(s)] * (grad[at(s)] - dot);
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }

                Op::MaskedSoftmaxRows { a } => {
                    // Masked outputs are exactly zero, so the plain softmax
                    // Jacobian sends no gradient through them.
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let y = &self.nodes[i].data;
                    let mut da = vec![0.0; y.len()];
                    for row in 0..r {
                        let base = row * c;
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += grad[base + j] * y[base + j];
                        }
                        for j in 0..c {
                            da[base + j] = y[base + j] * (grad[base + j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }

                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = *self.nodes[i].shape.last().expect("layer_norm shape");
                    let src = self.data(x).to_vec();
                    let gamma_d = self.data(gamma).to_vec();
                    let rows = src.len() / d;
                    let mut dx = vec![0.0; src.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for row in 0..rows {
                        let base = row * d;
                        let xr = &src[base..base + d];
                        let mean = xr.iter().sum::<f64>() / d as f64;
                        let var =
                            xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        // g = dy * gamma; dx = inv_std * (g - mean(g) - xhat * mean(g*xhat))
                        let mut g_mean = 0.0;
                        let mut gx_mean = 0.0;
                        for j in 0..d {
                            let xhat = (xr[j] - mean) * inv_std;
                            let g = grad[base + j] * gamma_d[j];
                            g_mean += g;
                            gx_mean += g * xhat;
                            dgamma[j] += grad[base + j] * xhat;
                            dbeta[j] += grad[base + j];
                        }
                        g_mean /= d as f64;
                        gx_mean /= d as f64;
                        for j in 0..d {
                            let xhat = (xr[j] - mean) * inv_std;
                            let g = grad[base + j] * gamma_d[j];
                            dx[base + j] = inv_std * (g - g_mean - xhat * gx_mean);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }

                Op::Embedding { table, ids } => {
                    if self.needs(table) {
                        let d = self.nodes[i].shape[1];
                        let len = self.nodes[table.0].data.len();
                        let slot =
                            self.nodes[table.0].grad.get_or_insert_with(|| vec![0.0; len]);
                        for (pos, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                slot[id * d + j] += grad[pos * d + j];
                            }
                        }
                    }
                }

                Op::Row { a, row } => {
                    let c = self.nodes[i].shape[1];
                    self.accumulate_at(a, row * c, &grad);
                }

                Op::SliceCols { a, start, len } => {
                    if self.needs(a) {
                        let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                        let mut da = vec![0.0; r * c];
                        for row in 0..r {
                            for j in 0..len {
                                da[row * c + start + j] = grad[row * len + j];
                            }
                        }
                        self.accumulate(a, &da);
                    }
                }

                Op::ConcatRows { parts } => {
                    let c = self.nodes[i].shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let r = self.shape(p)[0];
                        let piece = grad[offset..offset + r * c].to_vec();
                        self.accumulate(p, &piece);
                        offset += r * c;
                    }
                }

                Op::ConcatCols { parts } => {
                    let (r, total_c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let mut col_offset = 0;
                    for p in parts {
                        let pc = self.shape(p)[1];
                        let mut piece = Vec::with_capacity(r * pc);
                        for row in 0..r {
                            let base = row * total_c + col_offset;
                            piece.extend_from_slice(&grad[base..base + pc]);
                        }
                        self.accumulate(p, &piece);
                        col_offset += pc;
                    }
                }

                Op::Transpose { a } => {
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let da = transpose_raw(&grad, r, c);
                    self.accumulate(a, &da);
                }

                Op::Sum { a } => {
                    let g = grad[0];
                    let da = vec![g; self.nodes[a.0].data.len()];
                    self.accumulate(a, &da);
                }

                Op::Mean { a } => {
                    let n = self.nodes[a.0].data.len();
                    let g = grad[0] / n as f64;
                    let da = vec![g; n];
                    self.accumulate(a, &da);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
