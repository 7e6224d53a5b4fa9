//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive application appends a node holding the output values,
//! the operand ids, and whatever state its backward rule needs. `backward`
//! walks the nodes in exact reverse recording order, so the chain rule is
//! applied once per node with gradients accumulated additively into the
//! operands. A tape records one forward pass; running `backward` twice
//! without re-recording is an error.
//!
//! Shapes are row-major. Sequence data is time-major [time, features]
//! except inside the wavelet path, which is channel-major [features, time];
//! `transpose` moves between the two at module boundaries.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Fieldless discriminant for instrumentation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    AddRow,
    Mul,
    Scale,
    MatMul,
    Transpose,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Concat,
    Slice,
    ReverseRows,
    MeanRows,
    SumAll,
    Reshape,
    ResampleRows,
    Conv1dSame,
    HaarLow,
    HaarHigh,
    HaarSynth,
    CrossEntropy,
    Dropout,
}

enum Op {
    Leaf,
    Add { a: usize, b: usize },
    /// Broadcast-add a row vector to every row of a matrix.
    AddRow { m: usize, v: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    MatMul { a: usize, b: usize },
    Transpose { a: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Softmax { a: usize, axis: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    ReverseRows { a: usize },
    MeanRows { a: usize },
    SumAll { a: usize },
    Reshape { a: usize },
    ResampleRows { a: usize, in_len: usize },
    Conv1dSame { x: usize, k: usize, b: usize },
    HaarLow { a: usize },
    HaarHigh { a: usize },
    HaarSynth { low: usize, high: usize },
    /// Saved softmax probabilities live in `probs`, row per sample.
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
    Dropout { a: usize, mask: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add { .. } => OpKind::Add,
            Op::AddRow { .. } => OpKind::AddRow,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Relu { .. } => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::ReverseRows { .. } => OpKind::ReverseRows,
            Op::MeanRows { .. } => OpKind::MeanRows,
            Op::SumAll { .. } => OpKind::SumAll,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::ResampleRows { .. } => OpKind::ResampleRows,
            Op::Conv1dSame { .. } => OpKind::Conv1dSame,
            Op::HaarLow { .. } => OpKind::HaarLow,
            Op::HaarHigh { .. } => OpKind::HaarHigh,
            Op::HaarSynth { .. } => OpKind::HaarSynth,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Dropout { .. } => OpKind::Dropout,
        }
    }
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Recording tape. One forward pass per tape; gradients for leaf nodes
/// survive `backward` and are read with [`Tape::grad`].
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Decompose `shape` around `axis` into (outer, len, inner) extents so a
/// lane iteration covers the whole array.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded ops of a kind; used to assert which code paths ran.
    pub fn count_kind(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Wavelet analysis/synthesis applications recorded on this tape.
    pub fn wavelet_op_count(&self) -> usize {
        self.count_kind(OpKind::HaarLow)
            + self.count_kind(OpKind::HaarHigh)
            + self.count_kind(OpKind::HaarSynth)
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite output of {:?}",
            op.kind()
        );
        self.nodes.push(Node {
            shape,
            values,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Record an input tensor. `requires_grad` follows the tensor.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Record a constant (never differentiated).
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.push(shape, values, false, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        let numel = shape.iter().product();
        self.constant(shape, vec![0.0; numel])
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Scalar convenience accessor; panics on non-scalars.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor {
        Tensor::new(self.shape(id).to_vec(), self.value(id).to_vec()).expect("node is consistent")
    }

    /// Gradient of the last backward pass. Retained for leaf nodes only.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    // ── elementwise and linear ops ──────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let values = self.nodes[a.0].values.iter().map(|x| x * c).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Scale { a: a.0, c })
    }

    /// m[r,n] + v broadcast over rows; v is [n] or [1,n].
    pub fn add_row(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        let (r, n) = self.dims2("add_row", m)?;
        let vn = self.nodes[v.0].values.len();
        if vn != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.nodes[m.0].shape.clone(),
                rhs: self.nodes[v.0].shape.clone(),
            });
        }
        let mut values = self.nodes[m.0].values.clone();
        for row in values.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(&self.nodes[v.0].values) {
                *o += b;
            }
        }
        let rg = self.nodes[m.0].requires_grad || self.nodes[v.0].requires_grad;
        let _ = r;
        Ok(self.push(self.nodes[m.0].shape.clone(), values, rg, Op::AddRow { m: m.0, v: v.0 }))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut values = vec![0.0; m * n];
        matmul_raw(&self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n, &mut values);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(vec![m, n], values, rg, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2("transpose", a)?;
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![c, r], values, rg, Op::Transpose { a: a.0 }))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Sigmoid { a: a.0 })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.tanh()).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Tanh { a: a.0 })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.max(0.0)).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Relu { a: a.0 })
    }

    /// Numerically stable softmax along `axis`; lanes sum to 1.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        if shape[axis] == 0 {
            return Err(Error::EmptyAxis { axis, shape });
        }
        let (outer, len, inner) = lanes(&shape, axis);
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = f64::NEG_INFINITY;
                for l in 0..len {
                    m = m.max(src[base + l * inner]);
                }
                let mut sum = 0.0;
                for l in 0..len {
                    let e = (src[base + l * inner] - m).exp();
                    values[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..len {
                    values[base + l * inner] /= sum;
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, values, rg, Op::Softmax { a: a.0, axis }))
    }

    // ── shape ops ───────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        assert!(!parts.is_empty(), "concat of zero parts");
        let first = self.nodes[parts[0].0].shape.clone();
        if axis >= first.len() {
            return Err(Error::InvalidAxis { axis, shape: first });
        }
        let mut out_shape = first.clone();
        for p in &parts[1..] {
            let s = &self.nodes[p.0].shape;
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.clone(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = lanes(&first, axis);
        let total_len = out_shape[axis];
        let mut values = vec![0.0; outer * total_len * inner];
        let mut offset = 0;
        for p in parts {
            let plen = self.nodes[p.0].shape[axis];
            let src = &self.nodes[p.0].values;
            for o in 0..outer {
                let dst_base = (o * total_len + offset) * inner;
                let src_base = o * plen * inner;
                values[dst_base..dst_base + plen * inner]
                    .copy_from_slice(&src[src_base..src_base + plen * inner]);
            }
            offset += plen;
        }
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(
            out_shape,
            values,
            rg,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, shape });
        }
        if start + len > shape[axis] {
            return Err(Error::LengthMismatch {
                expected: shape[axis],
                got: start + len,
            });
        }
        let (outer, full, inner) = lanes(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_base = (o * full + start) * inner;
            let dst_base = o * len * inner;
            values[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out_shape, values, rg, Op::Slice { a: a.0, axis, start }))
    }

    pub fn reverse_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2("reverse_rows", a)?;
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            values[i * c..(i + 1) * c].copy_from_slice(&src[(r - 1 - i) * c..(r - i) * c]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![r, c], values, rg, Op::ReverseRows { a: a.0 }))
    }

    /// Mean over rows: [r, c] -> [1, c].
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2("mean_rows", a)?;
        if r == 0 {
            return Err(Error::EmptyAxis {
                axis: 0,
                shape: vec![r, c],
            });
        }
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; c];
        for row in src.chunks(c) {
            for (o, x) in values.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in values.iter_mut() {
            *o /= r as f64;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![1, c], values, rg, Op::MeanRows { a: a.0 }))
    }

    /// Sum of all entries -> scalar [1].
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].values.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s], rg, Op::SumAll { a: a.0 })
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].values.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let values = self.nodes[a.0].values.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(shape, values, rg, Op::Reshape { a: a.0 }))
    }

    /// Linear temporal resampling of a time-major [L, c] sequence to
    /// [new_len, c]. Endpoints map to endpoints; interior positions
    /// interpolate at t*(L-1)/(new_len-1).
    pub fn resample_rows(&mut self, a: TensorId, new_len: usize) -> Result<TensorId> {
        let (r, c) = self.dims2("resample_rows", a)?;
        if r == 0 || new_len == 0 {
            return Err(Error::EmptySequence {
                op: "resample_rows",
            });
        }
        let src = &self.nodes[a.0].values;
        let mut values = vec![0.0; new_len * c];
        for t in 0..new_len {
            let (i0, i1, w) = resample_coords(r, new_len, t);
            let r0 = &src[i0 * c..(i0 + 1) * c];
            let r1 = &src[i1 * c..(i1 + 1) * c];
            let dst = &mut values[t * c..(t + 1) * c];
            for ((d, x0), x1) in dst.iter_mut().zip(r0).zip(r1) {
                *d = (1.0 - w) * x0 + w * x1;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![new_len, c], values, rg, Op::ResampleRows { a: a.0, in_len: r }))
    }

    /// Same-padded 1-D convolution over channel-major x[d_in, L] with
    /// kernel [d_out, d_in, 3] and bias [d_out]. The temporal width is
    /// fixed at 3; anything else is a configuration error.
    pub fn conv1d_same(&mut self, x: TensorId, k: TensorId, b: TensorId) -> Result<TensorId> {
        let (d_in, len) = self.dims2("conv1d_same", x)?;
        let kshape = self.nodes[k.0].shape.clone();
        if kshape.len() != 3 {
            return Err(Error::Config(format!(
                "conv1d kernel must be [d_out, d_in, width], got {kshape:?}"
            )));
        }
        if kshape[2] != 3 {
            return Err(Error::Config(format!(
                "conv1d kernel width must be 3, got {}",
                kshape[2]
            )));
        }
        if kshape[1] != d_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d_same",
                lhs: vec![d_in, len],
                rhs: kshape,
            });
        }
        let d_out = kshape[0];
        if self.nodes[b.0].values.len() != d_out {
            return Err(Error::ShapeMismatch {
                op: "conv1d_same",
                lhs: vec![d_out],
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let xs = &self.nodes[x.0].values;
        let ks = &self.nodes[k.0].values;
        let bs = &self.nodes[b.0].values;
        let mut values = vec![0.0; d_out * len];
        for o in 0..d_out {
            let orow = &mut values[o * len..(o + 1) * len];
            orow.fill(bs[o]);
            for ci in 0..d_in {
                let xrow = &xs[ci * len..(ci + 1) * len];
                let kbase = (o * d_in + ci) * 3;
                let (k0, k1, k2) = (ks[kbase], ks[kbase + 1], ks[kbase + 2]);
                for t in 0..len {
                    let left = if t > 0 { xrow[t - 1] } else { 0.0 };
                    let right = if t + 1 < len { xrow[t + 1] } else { 0.0 };
                    orow[t] += k0 * left + k1 * xrow[t] + k2 * right;
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad
            || self.nodes[k.0].requires_grad
            || self.nodes[b.0].requires_grad;
        Ok(self.push(vec![d_out, len], values, rg, Op::Conv1dSame { x: x.0, k: k.0, b: b.0 }))
    }

    // ── orthonormal Haar analysis/synthesis (channel-major [d, L]) ──────

    /// Low band: out[ch, k] = (x[ch, 2k] + x[ch, 2k+1]) / sqrt(2).
    pub fn haar_low(&mut self, a: TensorId) -> Result<TensorId> {
        let (d, len) = self.even_time("haar_low", a)?;
        let src = &self.nodes[a.0].values;
        let half = len / 2;
        let mut values = vec![0.0; d * half];
        for ch in 0..d {
            let row = &src[ch * len..(ch + 1) * len];
            let out = &mut values[ch * half..(ch + 1) * half];
            for k in 0..half {
                out[k] = (row[2 * k] + row[2 * k + 1]) * FRAC_1_SQRT_2;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![d, half], values, rg, Op::HaarLow { a: a.0 }))
    }

    /// High band: out[ch, k] = (x[ch, 2k] - x[ch, 2k+1]) / sqrt(2).
    pub fn haar_high(&mut self, a: TensorId) -> Result<TensorId> {
        let (d, len) = self.even_time("haar_high", a)?;
        let src = &self.nodes[a.0].values;
        let half = len / 2;
        let mut values = vec![0.0; d * half];
        for ch in 0..d {
            let row = &src[ch * len..(ch + 1) * len];
            let out = &mut values[ch * half..(ch + 1) * half];
            for k in 0..half {
                out[k] = (row[2 * k] - row[2 * k + 1]) * FRAC_1_SQRT_2;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(vec![d, half], values, rg, Op::HaarHigh { a: a.0 }))
    }

    /// Exact inverse of the analysis pair:
    /// x[2k] = (low[k] + high[k]) / sqrt(2), x[2k+1] = (low[k] - high[k]) / sqrt(2).
    pub fn haar_synth(&mut self, low: TensorId, high: TensorId) -> Result<TensorId> {
        self.same_shape("haar_synth", low, high)?;
        let (d, half) = self.dims2("haar_synth", low)?;
        let ls = &self.nodes[low.0].values;
        let hs = &self.nodes[high.0].values;
        let len = half * 2;
        let mut values = vec![0.0; d * len];
        for ch in 0..d {
            let lrow = &ls[ch * half..(ch + 1) * half];
            let hrow = &hs[ch * half..(ch + 1) * half];
            let out = &mut values[ch * len..(ch + 1) * len];
            for k in 0..half {
                out[2 * k] = (lrow[k] + hrow[k]) * FRAC_1_SQRT_2;
                out[2 * k + 1] = (lrow[k] - hrow[k]) * FRAC_1_SQRT_2;
            }
        }
        let rg = self.nodes[low.0].requires_grad || self.nodes[high.0].requires_grad;
        Ok(self.push(vec![d, len], values, rg, Op::HaarSynth { low: low.0, high: high.0 }))
    }

    // ── loss and regularization ─────────────────────────────────────────

    /// Mean negative log-likelihood of `labels` under softmax(logits[B, C]),
    /// computed via log-sum-exp so extreme logits stay finite.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (bsz, classes) = self.dims2("cross_entropy", logits)?;
        if labels.len() != bsz {
            return Err(Error::LengthMismatch {
                expected: bsz,
                got: labels.len(),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
        let src = &self.nodes[logits.0].values;
        let mut probs = vec![0.0; bsz * classes];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &src[i * classes..(i + 1) * classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                probs[i * classes + j] = e;
                sum += e;
            }
            for j in 0..classes {
                probs[i * classes + j] /= sum;
            }
            let lse = m + sum.ln();
            total += lse - row[label];
        }
        let loss = total / bsz as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "cross_entropy loss".to_string(),
            });
        }
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Inverted dropout with keep-scaling; the mask is drawn at record time
    /// from the supplied stream. `p == 0` is the identity and records nothing.
    pub fn dropout(&mut self, a: TensorId, p: f64, rng: &mut rand_chacha::ChaCha8Rng) -> TensorId {
        if p <= 0.0 {
            return a;
        }
        use rand::Rng;
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.nodes[a.0].values.len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.nodes[a.0].shape.clone(), values, rg, Op::Dropout { a: a.0, mask })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Populate gradients of `loss` with respect to every leaf recorded on
    /// the tape that requires grad. Intermediate gradients are freed as the
    /// reverse sweep passes them; leaf gradients remain readable.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(Error::StaleTape);
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.backward_done = true;
        self.grads = Vec::with_capacity(self.nodes.len());
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                self.grads[i] = None;
                continue;
            }
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            let g = if is_leaf {
                continue; // keep leaf gradients readable
            } else {
                match self.grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            self.apply_backward(i, &g);
        }
        Ok(())
    }

    fn apply_backward(&mut self, i: usize, g: &[f64]) {
        // Accumulate `delta` into the gradient of node `id` if it wants one.
        macro_rules! acc {
            ($id:expr, $f:expr) => {{
                let id: usize = $id;
                if self.nodes[id].requires_grad {
                    let numel = self.nodes[id].values.len();
                    let slot = self.grads[id].get_or_insert_with(|| vec![0.0; numel]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(slot.as_mut_slice());
                }
            }};
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                acc!(a, |ga: &mut [f64]| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                acc!(b, |gb: &mut [f64]| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::AddRow { m, v } => {
                let (m, v) = (*m, *v);
                let n = self.nodes[v].values.len();
                acc!(m, |gm: &mut [f64]| {
                    for (x, y) in gm.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                acc!(v, |gv: &mut [f64]| {
                    for row in g.chunks(n) {
                        for (x, y) in gv.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av = &self.nodes[a].values;
                let bv = &self.nodes[b].values;
                acc!(a, |ga: &mut [f64]| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * z;
                    }
                });
                acc!(b, |gb: &mut [f64]| {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                acc!(a, |ga: &mut [f64]| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y * c;
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a].shape[0];
                let k = self.nodes[a].shape[1];
                let n = self.nodes[b].shape[1];
                if self.nodes[a].requires_grad {
                    // ga += g . b^T : [m,n] x [n,k]
                    let bvals = &self.nodes[b].values;
                    let mut delta = vec![0.0; m * k];
                    for i2 in 0..m {
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        let drow = &mut delta[i2 * k..(i2 + 1) * k];
                        for p in 0..k {
                            let brow = &bvals[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for (gv, bv2) in grow.iter().zip(brow) {
                                s += gv * bv2;
                            }
                            drow[p] += s;
                        }
                    }
                    acc!(a, |ga: &mut [f64]| {
                        for (x, y) in ga.iter_mut().zip(&delta) {
                            *x += y;
                        }
                    });
                }
                if self.nodes[b].requires_grad {
                    // gb += a^T . g : [k,m] x [m,n]
                    let avals = &self.nodes[a].values;
                    let mut delta = vec![0.0; k * n];
                    for i2 in 0..m {
                        let arow = &avals[i2 * k..(i2 + 1) * k];
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        for (p, &ap) in arow.iter().enumerate() {
                            if ap == 0.0 {
                                continue;
                            }
                            let drow = &mut delta[p * n..(p + 1) * n];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += ap * gv;
                            }
                        }
                    }
                    acc!(b, |gb: &mut [f64]| {
                        for (x, y) in gb.iter_mut().zip(&delta) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                let r = self.nodes[a].shape[0];
                let c = self.nodes[a].shape[1];
                acc!(a, |ga: &mut [f64]| {
                    // g has shape [c, r]
                    for j in 0..c {
                        for i2 in 0..r {
                            ga[i2 * c + j] += g[j * r + i2];
                        }
                    }
                });
            }
            Op::Sigmoid { a } => {
                let a = *a;
                let y = &self.nodes[i].values;
                acc!(a, |ga: &mut [f64]| {
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *x += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh { a } => {
                let a = *a;
                let y = &self.nodes[i].values;
                acc!(a, |ga: &mut [f64]| {
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *x += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Relu { a } => {
                let a = *a;
                let y = &self.nodes[i].values;
                acc!(a, |ga: &mut [f64]| {
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        if *yv > 0.0 {
                            *x += gv;
                        }
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let (a, axis) = (*a, *axis);
                let (outer, len, inner) = lanes(&self.nodes[i].shape, axis);
                let y = &self.nodes[i].values;
                acc!(a, |ga: &mut [f64]| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * len * inner + ii;
                            let mut dot = 0.0;
                            for l in 0..len {
                                let idx = base + l * inner;
                                dot += g[idx] * y[idx];
                            }
                            for l in 0..len {
                                let idx = base + l * inner;
                                ga[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].shape.clone();
                let (outer, total_len, inner) = lanes(&out_shape, axis);
                let mut offset = 0;
                for p in parts {
                    let plen = self.nodes[p].shape[axis];
                    acc!(p, |gp: &mut [f64]| {
                        for o in 0..outer {
                            let src_base = (o * total_len + offset) * inner;
                            let dst_base = o * plen * inner;
                            for idx in 0..plen * inner {
                                gp[dst_base + idx] += g[src_base + idx];
                            }
                        }
                    });
                    offset += plen;
                }
            }
            Op::Slice { a, axis, start } => {
                let (a, axis, start) = (*a, *axis, *start);
                let in_shape = self.nodes[a].shape.clone();
                let (outer, full, inner) = lanes(&in_shape, axis);
                let len = self.nodes[i].shape[axis];
                acc!(a, |ga: &mut [f64]| {
                    for o in 0..outer {
                        let dst_base = (o * full + start) * inner;
                        let src_base = o * len * inner;
                        for idx in 0..len * inner {
                            ga[dst_base + idx] += g[src_base + idx];
                        }
                    }
                });
            }
            Op::ReverseRows { a } => {
                let a = *a;
                let r = self.nodes[i].shape[0];
                let c = self.nodes[i].shape[1];
                acc!(a, |ga: &mut [f64]| {
                    for i2 in 0..r {
                        let src = &g[(r - 1 - i2) * c..(r - i2) * c];
                        for (x, y) in ga[i2 * c..(i2 + 1) * c].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                });
            }
            Op::MeanRows { a } => {
                let a = *a;
                let r = self.nodes[a].shape[0];
                let c = self.nodes[a].shape[1];
                let inv = 1.0 / r as f64;
                acc!(a, |ga: &mut [f64]| {
                    for i2 in 0..r {
                        for j in 0..c {
                            ga[i2 * c + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::SumAll { a } => {
                let a = *a;
                let gv = g[0];
                acc!(a, |ga: &mut [f64]| {
                    for x in ga.iter_mut() {
                        *x += gv;
                    }
                });
            }
            Op::Reshape { a } => {
                let a = *a;
                acc!(a, |ga: &mut [f64]| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::ResampleRows { a, in_len } => {
                let (a, in_len) = (*a, *in_len);
                let new_len = self.nodes[i].shape[0];
                let c = self.nodes[i].shape[1];
                acc!(a, |ga: &mut [f64]| {
                    for t in 0..new_len {
                        let (i0, i1, w) = resample_coords(in_len, new_len, t);
                        for j in 0..c {
                            let gv = g[t * c + j];
                            ga[i0 * c + j] += (1.0 - w) * gv;
                            ga[i1 * c + j] += w * gv;
                        }
                    }
                });
            }
            Op::Conv1dSame { x, k, b } => {
                let (x, k, b) = (*x, *k, *b);
                let d_in = self.nodes[x].shape[0];
                let len = self.nodes[x].shape[1];
                let d_out = self.nodes[i].shape[0];
                let xs = &self.nodes[x].values;
                let ks = &self.nodes[k].values;
                acc!(x, |gx: &mut [f64]| {
                    for o in 0..d_out {
                        let grow = &g[o * len..(o + 1) * len];
                        for ci in 0..d_in {
                            let kbase = (o * d_in + ci) * 3;
                            let (k0, k1, k2) = (ks[kbase], ks[kbase + 1], ks[kbase + 2]);
                            let gxrow = &mut gx[ci * len..(ci + 1) * len];
                            for t in 0..len {
                                let gv = grow[t];
                                if t > 0 {
                                    gxrow[t - 1] += k0 * gv;
                                }
                                gxrow[t] += k1 * gv;
                                if t + 1 < len {
                                    gxrow[t + 1] += k2 * gv;
                                }
                            }
                        }
                    }
                });
                acc!(k, |gk: &mut [f64]| {
                    for o in 0..d_out {
                        let grow = &g[o * len..(o + 1) * len];
                        for ci in 0..d_in {
                            let xrow = &xs[ci * len..(ci + 1) * len];
                            let kbase = (o * d_in + ci) * 3;
                            let mut s0 = 0.0;
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for t in 0..len {
                                let gv = grow[t];
                                if t > 0 {
                                    s0 += xrow[t - 1] * gv;
                                }
                                s1 += xrow[t] * gv;
                                if t + 1 < len {
                                    s2 += xrow[t + 1] * gv;
                                }
                            }
                            gk[kbase] += s0;
                            gk[kbase + 1] += s1;
                            gk[kbase + 2] += s2;
                        }
                    }
                });
                acc!(b, |gb: &mut [f64]| {
                    for o in 0..d_out {
                        gb[o] += g[o * len..(o + 1) * len].iter().sum::<f64>();
                    }
                });
            }
            Op::HaarLow { a } => {
                let a = *a;
                let d = self.nodes[i].shape[0];
                let half = self.nodes[i].shape[1];
                let len = half * 2;
                acc!(a, |ga: &mut [f64]| {
                    for ch in 0..d {
                        let grow = &g[ch * half..(ch + 1) * half];
                        let gxrow = &mut ga[ch * len..(ch + 1) * len];
                        for kk in 0..half {
                            let gv = grow[kk] * FRAC_1_SQRT_2;
                            gxrow[2 * kk] += gv;
                            gxrow[2 * kk + 1] += gv;
                        }
                    }
                });
            }
            Op::HaarHigh { a } => {
                let a = *a;
                let d = self.nodes[i].shape[0];
                let half = self.nodes[i].shape[1];
                let len = half * 2;
                acc!(a, |ga: &mut [f64]| {
                    for ch in 0..d {
                        let grow = &g[ch * half..(ch + 1) * half];
                        let gxrow = &mut ga[ch * len..(ch + 1) * len];
                        for kk in 0..half {
                            let gv = grow[kk] * FRAC_1_SQRT_2;
                            gxrow[2 * kk] += gv;
                            gxrow[2 * kk + 1] -= gv;
                        }
                    }
                });
            }
            Op::HaarSynth { low, high } => {
                let (low, high) = (*low, *high);
                let d = self.nodes[i].shape[0];
                let len = self.nodes[i].shape[1];
                let half = len / 2;
                acc!(low, |gl: &mut [f64]| {
                    for ch in 0..d {
                        let grow = &g[ch * len..(ch + 1) * len];
                        let out = &mut gl[ch * half..(ch + 1) * half];
                        for kk in 0..half {
                            out[kk] += (grow[2 * kk] + grow[2 * kk + 1]) * FRAC_1_SQRT_2;
                        }
                    }
                });
                acc!(high, |gh: &mut [f64]| {
                    for ch in 0..d {
                        let grow = &g[ch * len..(ch + 1) * len];
                        let out = &mut gh[ch * half..(ch + 1) * half];
                        for kk in 0..half {
                            out[kk] += (grow[2 * kk] - grow[2 * kk + 1]) * FRAC_1_SQRT_2;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let logits = *logits;
                let bsz = labels.len();
                let classes = self.nodes[logits].shape[1];
                let gscale = g[0] / bsz as f64;
                acc!(logits, |gl: &mut [f64]| {
                    for (i2, &label) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let idx = i2 * classes + j;
                            let indicator = if j == label { 1.0 } else { 0.0 };
                            gl[idx] += gscale * (probs[idx] - indicator);
                        }
                    }
                });
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                acc!(a, |ga: &mut [f64]| {
                    for ((x, gv), mv) in ga.iter_mut().zip(g).zip(mask) {
                        *x += gv * mv;
                    }
                });
            }
        }
    }

    // ── shape validation helpers ────────────────────────────────────────

    fn dims2(&self, op: &'static str, a: TensorId) -> Result<(usize, usize)> {
        let s = &self.nodes[a.0].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.clone(),
                rhs: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    fn even_time(&self, op: &'static str, a: TensorId) -> Result<(usize, usize)> {
        let (d, len) = self.dims2(op, a)?;
        if len % 2 != 0 {
            return Err(Error::NotDivisible {
                len,
                divisor: 2,
                padded: len + 1,
            });
        }
        Ok((d, len))
    }
}

fn resample_coords(in_len: usize, out_len: usize, t: usize) -> (usize, usize, f64) {
    if out_len == 1 || in_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = t as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
    let i0 = (pos.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, pos - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut tape = Tape::new();
        let eye = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let a = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);

        let proj = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let b = tape.constant(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let out = tape.matmul(proj, b).unwrap();
        assert_eq!(tape.value(out), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = crate::rng::stream_rng(11, crate::rng::StreamKind::Init, 0);
        use rand::Rng;
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // brute-force triple loop
        let (m, k, n) = (3, 4, 2);
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    expect[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut tape = Tape::new();
        let ta = tape.constant(vec![m, k], a);
        let tb = tape.constant(vec![k, n], b);
        let out = tape.matmul(ta, tb).unwrap();
        for (got, want) in tape.value(out).iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]);
        let b = tape.constant(vec![2, 2], vec![0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_shift_invariant_and_oracle() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4], vec![0.0; 4]);
        let s = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(s), &[0.25, 0.25, 0.25, 0.25]);

        let x1 = tape.constant(vec![1, 2], vec![1.3, 1.3 + 0.7]);
        let x2 = tape.constant(vec![1, 2], vec![0.0, 0.7]);
        let s1 = tape.softmax(x1, 1).unwrap();
        let s2 = tape.softmax(x2, 1).unwrap();
        for (a, b) in tape.value(s1).iter().zip(tape.value(s2)) {
            assert!((a - b).abs() <= 1e-12);
        }

        let x = tape.constant(vec![1, 3], vec![1.0, 2.0, 3.0]);
        let s = tape.softmax(x, 1).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (got, v) in tape.value(s).iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((got - v.exp() / z).abs() <= 1e-12);
        }
        let sum: f64 = tape.value(s).iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn softmax_empty_axis_is_error() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0, 3], vec![]);
        assert!(tape.softmax(x, 0).is_err());
    }

    #[test]
    fn conv1d_zero_kernel_and_identity_tap() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let zk = tape.constant(vec![1, 1, 3], vec![0.0; 3]);
        let zb = tape.constant(vec![1], vec![0.0]);
        let out = tape.conv1d_same(x, zk, zb).unwrap();
        assert_eq!(tape.value(out), &[0.0; 4]);

        let idk = tape.constant(vec![1, 1, 3], vec![0.0, 1.0, 0.0]);
        let out = tape.conv1d_same(x, idk, zb).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_matches_sliding_window_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(5, crate::rng::StreamKind::Init, 0);
        let (d, len) = (2, 6);
        let x: Vec<f64> = (0..d * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..d * d * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        // explicit sliding window with zero padding
        let mut expect = vec![0.0; d * len];
        for o in 0..d {
            for t in 0..len {
                let mut s = b[o];
                for ci in 0..d {
                    for (dt, off) in [-1i64, 0, 1].iter().enumerate() {
                        let tt = t as i64 + off;
                        if tt >= 0 && (tt as usize) < len {
                            s += k[(o * d + ci) * 3 + dt] * x[ci * len + tt as usize];
                        }
                    }
                }
                expect[o * len + t] = s;
            }
        }
        let mut tape = Tape::new();
        let tx = tape.constant(vec![d, len], x);
        let tk = tape.constant(vec![d, d, 3], k);
        let tb = tape.constant(vec![d], b);
        let out = tape.conv1d_same(tx, tk, tb).unwrap();
        for (got, want) in tape.value(out).iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv1d_rejects_other_widths() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4], vec![0.0; 4]);
        let k = tape.constant(vec![1, 1, 5], vec![0.0; 5]);
        let b = tape.constant(vec![1], vec![0.0]);
        assert!(matches!(tape.conv1d_same(x, k, b), Err(Error::Config(_))));
    }

    #[test]
    fn cross_entropy_onehot_uniform_and_oracle() {
        let mut tape = Tape::new();
        // near one-hot confidence: enormous margin drives loss to 0
        let x = tape.constant(vec![1, 3], vec![500.0, 0.0, 0.0]);
        let l = tape.cross_entropy(x, &[0]).unwrap();
        assert!(tape.scalar_value(l).abs() < 1e-12);

        let x = tape.constant(vec![1, 20], vec![0.0; 20]);
        let l = tape.cross_entropy(x, &[7]).unwrap();
        assert!((tape.scalar_value(l) - (20.0f64).ln()).abs() <= 1e-12);

        // B=2 random case against the direct summation
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(2, crate::rng::StreamKind::Init, 0);
        let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [2usize, 0];
        let mut expect = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &logits[i * 3..(i + 1) * 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[y].exp() / z).ln();
        }
        expect /= 2.0;
        let x = tape.constant(vec![2, 3], logits);
        let l = tape.cross_entropy(x, &labels).unwrap();
        assert!((tape.scalar_value(l) - expect).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 3], vec![0.0; 6]);
        let err = tape.cross_entropy(x, &[1, 3]).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn backward_sum_gives_ones_and_square_gives_2x() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t2(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).into_param());
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![1], vec![3.0]).unwrap().into_param());
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_and_stale_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t2(1, 2, &[1.0, 2.0]).into_param());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss { .. })));

        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0).into_param());
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::StaleTape)));
    }

    #[test]
    fn haar_pair_hand_case() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let lo = tape.haar_low(x).unwrap();
        let hi = tape.haar_high(x).unwrap();
        let r2 = std::f64::consts::SQRT_2;
        let want_lo = [3.0 / r2, 7.0 / r2];
        let want_hi = [-1.0 / r2, -1.0 / r2];
        for (g, w) in tape.value(lo).iter().zip(&want_lo) {
            assert!((g - w).abs() <= 1e-12);
        }
        for (g, w) in tape.value(hi).iter().zip(&want_hi) {
            assert!((g - w).abs() <= 1e-12);
        }
        let back = tape.haar_synth(lo, hi).unwrap();
        for (g, w) in tape.value(back).iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn resample_ramp_matches_uniform_grid() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![5, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = tape.resample_rows(x, 8).unwrap();
        for (t, got) in tape.value(y).iter().enumerate() {
            let want = t as f64 * 4.0 / 7.0;
            assert!((got - want).abs() <= 1e-12, "t={t} got={got} want={want}");
        }
        // already at target length: exact identity
        let x = tape.constant(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = tape.resample_rows(x, 3).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn instrumentation_counts_ops() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let lo = tape.haar_low(x).unwrap();
        let _hi = tape.haar_high(x).unwrap();
        let _ = tape.haar_low(lo);
        assert_eq!(tape.count_kind(OpKind::HaarLow), 2);
        assert_eq!(tape.wavelet_op_count(), 3);
    }
}
