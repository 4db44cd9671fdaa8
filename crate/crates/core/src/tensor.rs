//! Dense row-major tensors and a tape for reverse-mode differentiation.
//!
//! Every learned computation in the crate is recorded on a [`Tape`]. Values
//! are plain [`Tensor`]s; a [`Var`] is a handle to a node on one tape. Nodes
//! are appended in execution order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.
//!
//! All reductions accumulate in ascending index order. Running the same
//! graph on the same inputs gives bit-identical values and gradients.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero-sized axis")]
    ZeroAxis(Vec<usize>),
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{0}: operation needs an input of rank >= {1}")]
    RankTooLow(&'static str, usize),
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}: reduction over an empty axis")]
    EmptyAxis(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: expected {expected} targets, got {got}")]
    TargetLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(TensorError::ZeroAxis(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Panics on a zero-sized axis.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero-sized axis in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new([n], data)
    }

    /// Stacks fixed-width rows into an `(rows, W)` matrix.
    pub fn from_rows<const W: usize>(rows: &[[f64; W]]) -> Result<Self> {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new([rows.len(), W], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of range on axis {i}");
            flat = flat * d + ix;
        }
        self.data[flat]
    }

    /// Row `i` of the tensor viewed as `(shape[0], rest)`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.numel() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Relu(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Softmax { input: Var, axis: usize },
    SumAxis { input: Var, axis: usize },
    SumAll(Var),
    MaxAxis { input: Var, axis: usize, argmax: Vec<usize> },
    Reshape(Var),
    GatherRows { input: Var, rows: Vec<usize> },
    TransposeLast(Var),
    ConcatLast(Var, Var),
    SliceLast { input: Var, start: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    SmoothL1 { pred: Var, target: Vec<f64>, beta: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of executed operations.
///
/// A tape owns the values of every node it records. Gradients are only
/// kept for leaves; intermediate gradients are dropped once the backward
/// sweep has passed them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to the right of `out`, zero on stretched axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; out.len()];
    let offset = out.len() - shape.len();
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits `(out_flat, a_flat, b_flat)` for every element of `out`, in
/// ascending output order.
fn broadcast_walk(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let total: usize = out.iter().product();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    while o < total {
        for t in 0..inner {
            f(o + t, oa + t * ia, ob + t * ib);
        }
        o += inner;
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `out[m,n] += a[m,k] * b[k,n]`, accumulating over `k` in ascending order.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Batched matmul bookkeeping: for each output batch, the `(a, b)` matrix
/// offsets (in matrices).
fn matmul_batches(batch_a: &[usize], batch_b: &[usize], out: &[usize]) -> Vec<(usize, usize)> {
    let sa = broadcast_strides(batch_a, out);
    let sb = broadcast_strides(batch_b, out);
    let mut pairs = Vec::new();
    if out.is_empty() {
        pairs.push((0, 0));
    } else {
        broadcast_walk(out, &sa, &sb, |_, ia, ib| pairs.push((ia, ib)));
    }
    pairs
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input; its gradient is populated by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Drops stored gradients so that backward may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.consumed = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(op_name, value.data())?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| TensorError::ShapeMismatch {
            op: name,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })?;
        let n: usize = out_shape.iter().product();
        let mut out = vec![0.0; n];
        let (da, db) = (ta.data(), tb.data());
        if ta.shape() == tb.shape() {
            for i in 0..n {
                out[i] = apply(kind, da[i], db[i]);
            }
        } else {
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            broadcast_walk(&out_shape, &sa, &sb, |o, ia, ib| out[o] = apply(kind, da[ia], db[ib]));
        }
        let value = Tensor::new(out_shape, out)?;
        self.record(name, value, Op::Binary(kind, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// ReLU; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.record("relu", value, Op::Relu(a), &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.record("scale", value, Op::Scale(a, factor), &[a])
    }

    /// `(.., m, k) x (.., k, n) -> (.., m, n)`; batch axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        if ra < 2 || rb < 2 {
            return Err(TensorError::RankTooLow("matmul", 2));
        }
        let (m, k) = (ta.shape()[ra - 2], ta.shape()[ra - 1]);
        let (k2, n) = (tb.shape()[rb - 2], tb.shape()[rb - 1]);
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if k != k2 {
            return Err(mismatch());
        }
        let batch = broadcast_shape(&ta.shape()[..ra - 2], &tb.shape()[..rb - 2]).ok_or_else(mismatch)?;
        let pairs = matmul_batches(&ta.shape()[..ra - 2], &tb.shape()[..rb - 2], &batch);
        let mut out = vec![0.0; pairs.len() * m * n];
        for (bi, &(ia, ib)) in pairs.iter().enumerate() {
            gemm_acc(
                &ta.data()[ia * m * k..(ia + 1) * m * k],
                &tb.data()[ib * k * n..(ib + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let value = Tensor::new(shape, out)?;
        self.record("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::BadAxis {
                op: "softmax",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        if len == 0 {
            return Err(TensorError::EmptyAxis("softmax"));
        }
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.record("softmax", value, Op::Softmax { input: a, axis }, &[a])
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let rank = self.value(a).rank();
        if rank == 0 {
            return Err(TensorError::RankTooLow("softmax", 1));
        }
        self.softmax(a, rank - 1)
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::BadAxis {
                op: "sum_axis",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let x = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        self.record("sum_axis", value, Op::SumAxis { input: a, axis }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.record("sum", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Maximum along `axis`; ties resolve to the smallest index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::BadAxis {
                op: "max_axis",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let x = t.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + j) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        argmax[o * inner + i] = j;
                    }
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        self.record("max_axis", value, Op::MaxAxis { input: a, axis, argmax }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::new(shape, t.data().to_vec())?;
        self.record("reshape", value, Op::Reshape(a), &[a])
    }

    /// Selects rows along axis 0; repeated rows are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(TensorError::RankTooLow("gather_rows", 1));
        }
        let count = t.shape()[0];
        let w = t.numel() / count;
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= count {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    len: count,
                });
            }
            out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let value = Tensor::new(shape, out)?;
        self.record(
            "gather_rows",
            value,
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            &[a],
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let r = t.rank();
        if r < 2 {
            return Err(TensorError::RankTooLow("transpose", 2));
        }
        let (m, n) = (t.shape()[r - 2], t.shape()[r - 1]);
        let batches = t.numel() / (m * n);
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for b in 0..batches {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[off + j * m + i] = x[off + i * n + j];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let value = Tensor::new(shape, out)?;
        self.record("transpose", value, Op::TransposeLast(a), &[a])
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_lastdim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        if ra == 0 || ra != rb || ta.shape()[..ra - 1] != tb.shape()[..rb - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (wa, wb) = (ta.shape()[ra - 1], tb.shape()[rb - 1]);
        let rows = ta.numel() / wa;
        let mut out = Vec::with_capacity(ta.numel() + tb.numel());
        for r in 0..rows {
            out.extend_from_slice(&ta.data()[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&tb.data()[r * wb..(r + 1) * wb]);
        }
        let mut shape = ta.shape().to_vec();
        shape[ra - 1] = wa + wb;
        let value = Tensor::new(shape, out)?;
        self.record("concat", value, Op::ConcatLast(a, b), &[a, b])
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_lastdim(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let r = t.rank();
        if r == 0 {
            return Err(TensorError::RankTooLow("slice", 1));
        }
        let w = t.shape()[r - 1];
        if start >= end || end > w {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: end,
                len: w,
            });
        }
        let rows = t.numel() / w;
        let mut out = Vec::with_capacity(rows * (end - start));
        for row in 0..rows {
            out.extend_from_slice(&t.data()[row * w + start..row * w + end]);
        }
        let mut shape = t.shape().to_vec();
        shape[r - 1] = end - start;
        let value = Tensor::new(shape, out)?;
        self.record("slice", value, Op::SliceLast { input: a, start }, &[a])
    }

    /// Mean cross-entropy of `(B, K)` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 {
            return Err(TensorError::RankTooLow("cross_entropy", 2));
        }
        let (b, k) = (t.shape()[0], t.shape()[1]);
        if targets.len() != b {
            return Err(TensorError::TargetLength {
                op: "cross_entropy",
                expected: b,
                got: targets.len(),
            });
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= k {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    len: k,
                });
            }
            let row = t.row(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[r * k + j] = e;
                sum += e;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p /= sum;
            }
            loss += sum.ln() + mx - row[y];
        }
        let value = Tensor::scalar(loss / b as f64);
        self.record(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean binary cross-entropy with logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if targets.len() != t.numel() {
            return Err(TensorError::TargetLength {
                op: "bce_with_logits",
                expected: t.numel(),
                got: targets.len(),
            });
        }
        let mut loss = 0.0;
        for (&z, &y) in t.data().iter().zip(targets) {
            // max(z,0) - z*y + log(1 + exp(-|z|))
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(loss / t.numel() as f64);
        self.record(
            "bce_with_logits",
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Mean smooth-L1 (Huber with transition `beta`) against a constant target.
    pub fn smooth_l1(&mut self, pred: Var, target: &[f64], beta: f64) -> Result<Var> {
        let t = self.value(pred);
        if target.len() != t.numel() {
            return Err(TensorError::TargetLength {
                op: "smooth_l1",
                expected: t.numel(),
                got: target.len(),
            });
        }
        let mut loss = 0.0;
        for (&p, &y) in t.data().iter().zip(target) {
            let d = (p - y).abs();
            loss += if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta };
        }
        let value = Tensor::scalar(loss / t.numel() as f64);
        self.record(
            "smooth_l1",
            value,
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                beta,
            },
            &[pred],
        )
    }

    /// Populates the gradient of every trainable leaf with `d loss / d leaf`.
    ///
    /// Leaves the loss does not depend on receive zeros. Running backward a
    /// second time without [`Tape::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.grad = Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data,
                });
            }
        }
        self.consumed = true;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (da, db) = (ta.data(), tb.data());
                let (rga, rgb) = (self.requires_grad(*a), self.requires_grad(*b));
                let mut ga = if rga { vec![0.0; da.len()] } else { Vec::new() };
                let mut gb = if rgb { vec![0.0; db.len()] } else { Vec::new() };
                let sa = broadcast_strides(ta.shape(), out.shape());
                let sb = broadcast_strides(tb.shape(), out.shape());
                broadcast_walk(out.shape(), &sa, &sb, |o, ia, ib| {
                    let go = g[o];
                    let (wa, wb) = match kind {
                        BinaryKind::Add => (1.0, 1.0),
                        BinaryKind::Sub => (1.0, -1.0),
                        BinaryKind::Mul => (db[ib], da[ia]),
                    };
                    if rga {
                        ga[ia] += go * wa;
                    }
                    if rgb {
                        gb[ib] += go * wb;
                    }
                });
                if rga {
                    self.accumulate(grads, *a, ga);
                }
                if rgb {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = x.iter().zip(g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Scale(a, f) => {
                let ga = g.iter().map(|&gi| gi * f).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, out.shape(), g, grads),
            Op::Softmax { input, axis } => {
                let y = out.data();
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            dot += g[base + j * inner] * y[base + j * inner];
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            ga[p] = y[p] * (g[p] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, ga);
            }
            Op::SumAxis { input, axis } => {
                let shape = self.value(*input).shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        ga[(o * len + j) * inner..(o * len + j + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *input, ga);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::MaxAxis { input, axis, argmax } => {
                let shape = self.value(*input).shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let j = argmax[o * inner + i];
                        ga[(o * len + j) * inner + i] += g[o * inner + i];
                    }
                }
                self.accumulate(grads, *input, ga);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::GatherRows { input, rows } => {
                let t = self.value(*input);
                let w = t.numel() / t.shape()[0];
                let mut ga = vec![0.0; t.numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for (d, &s) in ga[r * w..(r + 1) * w].iter_mut().zip(&g[k * w..(k + 1) * w]) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *input, ga);
            }
            Op::TransposeLast(a) => {
                let r = out.rank();
                // out is (.., n, m); input was (.., m, n)
                let (n, m) = (out.shape()[r - 2], out.shape()[r - 1]);
                let batches = out.numel() / (m * n);
                let mut ga = vec![0.0; g.len()];
                for b in 0..batches {
                    let off = b * m * n;
                    for j in 0..n {
                        for i in 0..m {
                            ga[off + i * n + j] = g[off + j * m + i];
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatLast(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let wa = ta.shape()[ta.rank() - 1];
                let wb = tb.shape()[tb.rank() - 1];
                let rows = ta.numel() / wa;
                let mut ga = Vec::with_capacity(ta.numel());
                let mut gb = Vec::with_capacity(tb.numel());
                for r in 0..rows {
                    let row = &g[r * (wa + wb)..(r + 1) * (wa + wb)];
                    ga.extend_from_slice(&row[..wa]);
                    gb.extend_from_slice(&row[wa..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::SliceLast { input, start } => {
                let t = self.value(*input);
                let w = t.shape()[t.rank() - 1];
                let sw = out.shape()[out.rank() - 1];
                let rows = t.numel() / w;
                let mut ga = vec![0.0; t.numel()];
                for r in 0..rows {
                    ga[r * w + start..r * w + start + sw].copy_from_slice(&g[r * sw..(r + 1) * sw]);
                }
                self.accumulate(grads, *input, ga);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let b = targets.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f64;
                let mut ga = probs.clone();
                for (r, &y) in targets.iter().enumerate() {
                    ga[r * k + y] -= 1.0;
                }
                for v in &mut ga {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, ga);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits).data();
                let scale = g[0] / z.len() as f64;
                let ga = z
                    .iter()
                    .zip(targets)
                    .map(|(&zi, &y)| (sigmoid(zi) - y) * scale)
                    .collect();
                self.accumulate(grads, *logits, ga);
            }
            Op::SmoothL1 { pred, target, beta } => {
                let p = self.value(*pred).data();
                let scale = g[0] / p.len() as f64;
                let ga = p
                    .iter()
                    .zip(target)
                    .map(|(&pi, &y)| {
                        let d = pi - y;
                        let dd = if d.abs() < *beta { d / beta } else { d.signum() };
                        dd * scale
                    })
                    .collect();
                self.accumulate(grads, *pred, ga);
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, out_shape: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        let (m, k) = (ta.shape()[ra - 2], ta.shape()[ra - 1]);
        let n = tb.shape()[rb - 1];
        let batch = &out_shape[..out_shape.len() - 2];
        let pairs = matmul_batches(&ta.shape()[..ra - 2], &tb.shape()[..rb - 2], batch);
        let (da, db) = (ta.data(), tb.data());
        if self.requires_grad(a) {
            let mut ga = vec![0.0; da.len()];
            for (bi, &(ia, ib)) in pairs.iter().enumerate() {
                let gm = &g[bi * m * n..(bi + 1) * m * n];
                let bm = &db[ib * k * n..(ib + 1) * k * n];
                let gam = &mut ga[ia * m * k..(ia + 1) * m * k];
                // ga = g . b^T
                for i in 0..m {
                    let grow = &gm[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bm[p * n..(p + 1) * n];
                        let mut acc = 0.0;
                        for (x, y) in grow.iter().zip(brow) {
                            acc += x * y;
                        }
                        gam[i * k + p] += acc;
                    }
                }
            }
            self.accumulate(grads, a, ga);
        }
        if self.requires_grad(b) {
            let mut gb = vec![0.0; db.len()];
            for (bi, &(ia, ib)) in pairs.iter().enumerate() {
                let gm = &g[bi * m * n..(bi + 1) * m * n];
                let am = &da[ia * m * k..(ia + 1) * m * k];
                let gbm = &mut gb[ib * k * n..(ib + 1) * k * n];
                // gb = a^T . g
                for i in 0..m {
                    let grow = &gm[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = am[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, &gv) in gbm[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
            self.accumulate(grads, b, gb);
        }
    }
}

fn apply(kind: BinaryKind, x: f64, y: f64) -> f64 {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest relative disagreement between tape gradients and central
/// differences of `f`, over every coordinate of every input.
///
/// The per-coordinate error is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check_many<F, E>(f: F, inputs: &[Tensor], eps: f64) -> std::result::Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |xs: &[Tensor]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(TensorError::NonScalarLoss(v.shape().to_vec()).into());
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("leaf gradient"))
        .collect();

    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for t in 0..inputs.len() {
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[t].data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[t].data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> std::result::Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    grad_check_many(|tape, vs| f(tape, vs[0]), std::slice::from_ref(x), eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn self_difference_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let d = tape.sub(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[0.0, 1.0]));
        let r = tape.relu(a).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(tape.add(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn overflow_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full([2], 1e300));
        assert!(matches!(tape.mul(a, a), Err(TensorError::NonFinite { op: "mul" })));
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut tape = Tape::new();
        let mut eye = Tensor::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let i3 = tape.constant(eye);
        let v = tape.constant(t(&[3, 1], &[4.0, -5.0, 6.5]));
        let r = tape.matmul(i3, v).unwrap();
        assert_eq!(tape.value(r).data(), &[4.0, -5.0, 6.5]);
    }

    #[test]
    fn small_matmul_by_hand() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let r = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(r).data(), &[11.0]);
    }

    #[test]
    fn matmul_inner_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_simple_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[0.0, 0.0]));
        let s = tape.softmax_lastdim(a).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        let b = tape.constant(t(&[1], &[7.3]));
        let s = tape.softmax_lastdim(b).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);
    }

    #[test]
    fn softmax_of_scalar_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1.0));
        assert!(tape.softmax_lastdim(a).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.3, -2.0, 5.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(TensorError::TapeConsumed));
        tape.reset_grads();
        tape.backward(s).unwrap();
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
        assert!(matches!(
            grad_check(|_, v| Ok(v), &t(&[2], &[1.0, 2.0]), 1e-5),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn gather_repeated_row_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let gth = tape.gather_rows(x, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(gth).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = tape.sum(gth).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            tape.gather_rows(x, &[3]),
            Err(TensorError::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn max_ties_pick_first() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 1], &[2.0, 2.0, 1.0]));
        let m = tape.max_axis(x, 0).unwrap();
        let s = tape.sum(m).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_gradcheck_is_exact() {
        let x = t(&[4], &[0.1, -0.7, 3.0, 2.5]);
        let err = grad_check(|tape, v| tape.sum(v), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn relu_gradcheck_away_from_kink() {
        let x = t(&[5], &[0.3, -0.7, 1.2, -2.0, 0.05]);
        let err = grad_check(
            |tape, v| {
                let r = tape.relu(v)?;
                tape.sum(r)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn loss_gradchecks() {
        let logits = t(&[3, 4], &[0.1, -0.3, 0.8, 0.0, 1.5, 0.2, -1.1, 0.4, -0.2, 0.9, 0.3, -0.6]);
        let err = grad_check(|tape, v| tape.cross_entropy(v, &[2, 0, 1]), &logits, 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
        let z = t(&[4], &[0.3, -1.2, 2.0, 0.0]);
        let err = grad_check(|tape, v| tape.bce_with_logits(v, &[1.0, 0.0, 1.0, 0.0]), &z, 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
        let err = grad_check(|tape, v| tape.smooth_l1(v, &[0.0, 0.5, 1.0, 1.9], 0.5), &z, 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn cross_entropy_value() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let l = tape.cross_entropy(z, &[1]).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat_lastdim(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = tape.slice_lastdim(c, 1, 3).unwrap();
        assert_eq!(tape.value(s), tape.value(b));
    }
}
