use std::rc::Rc;

use super::tensor::{matmul_raw, matmul_transpose_a, matmul_transpose_b};
use super::{NdError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Cos,
    Sin,
    Log,
    Exp,
    Square,
    /// Gradient is zero where the input was clamped.
    Clamp(f64, f64),
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Cos => "cos",
            Unary::Sin => "sin",
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Square => "square",
            Unary::Clamp(..) => "clamp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Cos => x.cos(),
            Unary::Sin => x.sin(),
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Cos => -x.sin(),
            Unary::Sin => x.cos(),
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
            Unary::Square => 2.0 * x,
            Unary::Clamp(lo, hi) => {
                if x < lo || x > hi {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    SoftmaxRows(Var),
    SegmentMean(Var, Rc<[usize]>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Unary(_, u) => u.name(),
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::SegmentMean(..) => "segment_mean",
            Op::LayerNorm { .. } => "layer_norm",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NdError {
    NdError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Scales the backward rule of every node of the named operation by 1.5.
    /// Test fixture for gradient-check negative controls.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, op_name: &'static str) {
        self.fault = Some(op_name);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (parameter or input under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims();
        let (k2, n) = bv.dims();
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(mismatch(name, av, bv));
        }
        let (r, c) = av.dims();
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn broadcast_row(&mut self, a: Var, row: Var, mul: bool) -> Result<Var, NdError> {
        let (av, rv) = (self.value(a), self.value(row));
        let (m, n) = av.dims();
        let name = if mul { "mul_row" } else { "add_row" };
        if rv.dims() != (1, n) {
            return Err(mismatch(name, av, rv));
        }
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, &r) in chunk.iter_mut().zip(rv.data()) {
                if mul {
                    *x *= r
                } else {
                    *x += r
                }
            }
        }
        let rg = self.rg(a) || self.rg(row);
        let op = if mul {
            Op::MulRow(a, row)
        } else {
            Op::AddRow(a, row)
        };
        Ok(self.push(Tensor::matrix(m, n, data)?, op, rg))
    }

    /// `a (m x n) + row (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NdError> {
        self.broadcast_row(a, row, false)
    }

    /// `a (m x n) * row (1 x n)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NdError> {
        self.broadcast_row(a, row, true)
    }

    /// `a (m x n) * col (m x 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NdError> {
        let (av, cv) = (self.value(a), self.value(col));
        let (m, n) = av.dims();
        if cv.dims() != (m, 1) {
            return Err(mismatch("mul_col", av, cv));
        }
        let mut data = av.data().to_vec();
        for (i, chunk) in data.chunks_mut(n.max(1)).enumerate() {
            let s = cv.data()[i];
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, factor), rg)
    }

    /// `a + c` elementwise for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::Offset(a), rg)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let v = self.value(a).map(|x| kind.apply(x));
        let rg = self.rg(a);
        self.push(v, Op::Unary(a, kind), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Unary::Clamp(lo, hi))
    }

    /// Sum of all entries, as a `1 x 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums: `m x n -> 1 x n`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = av.dims();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(&av.data()[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::row_vector(out), Op::SumRows(a), rg)
    }

    /// Row sums: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols().max(1);
        let out: Vec<f64> = av.data().chunks(n).map(|c| c.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::column_vector(out), Op::SumCols(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NdError> {
        let av = self.value(a);
        let (m, n) = av.dims();
        if start > end || end > n {
            return Err(NdError::IndexOutOfRange { index: end, len: n });
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(m, end - start, data)?,
            Op::SliceCols(a, start),
            rg,
        ))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NdError> {
        let av = self.value(a);
        let (m, n) = av.dims();
        if start > end || end > m {
            return Err(NdError::IndexOutOfRange { index: end, len: m });
        }
        let data = av.data()[start * n..end * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(end - start, n, data)?,
            Op::SliceRows(a, start),
            rg,
        ))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var, NdError> {
        let av = self.value(a);
        let (m, n) = av.dims();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            if i >= m {
                return Err(NdError::IndexOutOfRange { index: i, len: m });
            }
            data.extend_from_slice(av.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(index.len(), n, data)?,
            Op::GatherRows(a, index),
            rg,
        ))
    }

    /// Adds input row `i` into output row `index[i]` of an `out_rows x n` result.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: Rc<[usize]>,
        out_rows: usize,
    ) -> Result<Var, NdError> {
        let av = self.value(a);
        let (m, n) = av.dims();
        if index.len() != m {
            return Err(NdError::IndexOutOfRange {
                index: index.len(),
                len: m,
            });
        }
        let mut data = vec![0.0; out_rows * n];
        for (i, &dst) in index.iter().enumerate() {
            if dst >= out_rows {
                return Err(NdError::IndexOutOfRange {
                    index: dst,
                    len: out_rows,
                });
            }
            for (o, x) in data[dst * n..(dst + 1) * n].iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(out_rows, n, data)?,
            Op::ScatterAddRows(a, index),
            rg,
        ))
    }

    /// Softmax of a column vector `e x 1` within groups sharing a segment id.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segment: Rc<[usize]>,
        n_segments: usize,
    ) -> Result<Var, NdError> {
        let av = self.value(a);
        if av.cols() != 1 || av.rows() != segment.len() {
            return Err(NdError::ShapeMismatch {
                op: "segment_softmax",
                left: av.shape().to_vec(),
                right: vec![segment.len(), 1],
            });
        }
        let x = av.data();
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (&v, &s) in x.iter().zip(segment.iter()) {
            if s >= n_segments {
                return Err(NdError::IndexOutOfRange {
                    index: s,
                    len: n_segments,
                });
            }
            max[s] = max[s].max(v);
        }
        let mut denom = vec![0.0; n_segments];
        let mut out: Vec<f64> = x
            .iter()
            .zip(segment.iter())
            .map(|(&v, &s)| {
                let e = (v - max[s]).exp();
                denom[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segment.iter()) {
            *o /= denom[s];
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::column_vector(out),
            Op::SegmentSoftmax(a, segment),
            rg,
        ))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = av.dims();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            let mx = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in chunk.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            chunk.iter_mut().for_each(|x| *x /= s);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::SoftmaxRows(a), rg)
    }

    /// Mean of row blocks: `offsets` has `G + 1` entries partitioning the rows.
    pub fn segment_mean(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var, NdError> {
        let av = self.value(a);
        let (m, n) = av.dims();
        if offsets.is_empty() || *offsets.last().unwrap() != m || offsets[0] != 0 {
            return Err(NdError::ShapeMismatch {
                op: "segment_mean",
                left: av.shape().to_vec(),
                right: vec![*offsets.last().unwrap_or(&0)],
            });
        }
        let g = offsets.len() - 1;
        let mut data = vec![0.0; g * n];
        for s in 0..g {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi <= lo {
                return Err(NdError::EmptySegment(s));
            }
            let inv = 1.0 / (hi - lo) as f64;
            let out = &mut data[s * n..(s + 1) * n];
            for r in lo..hi {
                for (o, x) in out.iter_mut().zip(av.row(r)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(g, n, data)?,
            Op::SegmentMean(a, offsets),
            rg,
        ))
    }

    /// Per-row normalization with biased variance, then `* gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NdError> {
        let xv = self.value(x);
        let (m, d) = xv.dims();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.dims() != (1, d) {
            return Err(mismatch("layer_norm", xv, gv));
        }
        if bv.dims() != (1, d) {
            return Err(mismatch("layer_norm", xv, bv));
        }
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gv.data()[c] + bv.data()[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::matrix(m, d, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NdError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NdError::NotScalar(lv.shape().to_vec()));
        }
        let shapes: Vec<(usize, usize)> = self.nodes.iter().map(|n| n.value.dims()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(1, 1));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            if self.fault == Some(node.op.name()) {
                g.data_mut().iter_mut().for_each(|v| *v *= 1.5);
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        let (gm, gn) = g.dims();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims();
                let n = bv.cols();
                if self.rg(*a) {
                    let da = matmul_transpose_b(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.rg(*b) {
                    let db = matmul_transpose_a(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::matrix(gm, gn, d).unwrap());
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::matrix(gm, gn, d).unwrap());
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    let mut d = vec![0.0; gn];
                    for chunk in g.data().chunks(gn.max(1)) {
                        d.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
                    }
                    self.accumulate(grads, *row, Tensor::row_vector(d));
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.rg(*a) {
                    let mut d = g.data().to_vec();
                    for chunk in d.chunks_mut(gn.max(1)) {
                        chunk.iter_mut().zip(rv.data()).for_each(|(o, r)| *o *= r);
                    }
                    self.accumulate(grads, *a, Tensor::matrix(gm, gn, d).unwrap());
                }
                if self.rg(*row) {
                    let mut d = vec![0.0; gn];
                    for (gc, ac) in g.data().chunks(gn.max(1)).zip(av.data().chunks(gn.max(1))) {
                        for j in 0..gn {
                            d[j] += gc[j] * ac[j];
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row_vector(d));
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                if self.rg(*a) {
                    let mut d = g.data().to_vec();
                    for (i, chunk) in d.chunks_mut(gn.max(1)).enumerate() {
                        let s = cv.data()[i];
                        chunk.iter_mut().for_each(|o| *o *= s);
                    }
                    self.accumulate(grads, *a, Tensor::matrix(gm, gn, d).unwrap());
                }
                if self.rg(*col) {
                    let d: Vec<f64> = g
                        .data()
                        .chunks(gn.max(1))
                        .zip(av.data().chunks(gn.max(1)))
                        .map(|(gc, ac)| gc.iter().zip(ac).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *col, Tensor::column_vector(d));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::Unary(a, kind) => {
                let av = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(av.data().iter().zip(out.data()))
                    .map(|(gv, (&x, &y))| gv * kind.derivative(x, y))
                    .collect();
                self.accumulate(grads, *a, Tensor::matrix(gm, gn, d).unwrap());
            }
            Op::Sum(a) => {
                let (m, n) = self.value(*a).dims();
                self.accumulate(grads, *a, Tensor::full(m, n, g.data()[0]));
            }
            Op::SumRows(a) => {
                let (m, n) = self.value(*a).dims();
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend_from_slice(g.data());
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::SumCols(a) => {
                let (m, n) = self.value(*a).dims();
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    d.extend(std::iter::repeat(g.data()[i]).take(n));
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.rg(*p) {
                        let mut d = Vec::with_capacity(gm * w);
                        for r in 0..gm {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::matrix(gm, w, d).unwrap());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.value(*p).rows();
                    if self.rg(*p) {
                        let d = g.data()[offset * gn..(offset + h) * gn].to_vec();
                        self.accumulate(grads, *p, Tensor::matrix(h, gn, d).unwrap());
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + gn].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::SliceRows(a, start) => {
                let (m, n) = self.value(*a).dims();
                let mut d = vec![0.0; m * n];
                d[start * n..(start + gm) * n].copy_from_slice(g.data());
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::GatherRows(a, index) => {
                let (m, n) = self.value(*a).dims();
                let mut d = vec![0.0; m * n];
                for (i, &src) in index.iter().enumerate() {
                    for (o, x) in d[src * n..(src + 1) * n].iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::ScatterAddRows(a, index) => {
                let n = gn;
                let mut d = Vec::with_capacity(index.len() * n);
                for &dst in index.iter() {
                    d.extend_from_slice(g.row(dst));
                }
                self.accumulate(grads, *a, Tensor::matrix(index.len(), n, d).unwrap());
            }
            Op::SegmentSoftmax(a, segment) => {
                // dx_i = y_i (g_i - sum_{k in seg(i)} g_k y_k)
                let y = out.data();
                let n_seg = segment.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((&gv, &yv), &s) in g.data().iter().zip(y).zip(segment.iter()) {
                    dot[s] += gv * yv;
                }
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y)
                    .zip(segment.iter())
                    .map(|((&gv, &yv), &s)| yv * (gv - dot[s]))
                    .collect();
                self.accumulate(grads, *a, Tensor::column_vector(d));
            }
            Op::SoftmaxRows(a) => {
                let mut d = vec![0.0; gm * gn];
                for r in 0..gm {
                    let (yr, gr) = (out.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..gn {
                        d[r * gn + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(gm, gn, d).unwrap());
            }
            Op::SegmentMean(a, offsets) => {
                let (m, n) = self.value(*a).dims();
                let mut d = vec![0.0; m * n];
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    let inv = 1.0 / (hi - lo) as f64;
                    for r in lo..hi {
                        for (o, x) in d[r * n..(r + 1) * n].iter_mut().zip(g.row(s)) {
                            *o = x * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(m, n, d).unwrap());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = gn;
                let gv = self.value(*gamma).data();
                if self.rg(*x) {
                    let mut dx = vec![0.0; gm * d];
                    for r in 0..gm {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            dx[r * d + c] =
                                inv_std[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::matrix(gm, d, dx).unwrap());
                }
                if self.rg(*gamma) {
                    let mut dg = vec![0.0; d];
                    for r in 0..gm {
                        for c in 0..d {
                            dg[c] += g.get(r, c) * xhat[r * d + c];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::row_vector(dg));
                }
                if self.rg(*beta) {
                    let mut db = vec![0.0; d];
                    for r in 0..gm {
                        db.iter_mut().zip(g.row(r)).for_each(|(o, x)| *o += x);
                    }
                    self.accumulate(grads, *beta, Tensor::row_vector(db));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Tensor) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let grads = tape.backward(y).unwrap();
        let analytic = grads.get(x);
        let h = 1e-5;
        for i in 0..x0.numel() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let xv = t.leaf(xp);
                let out = build(&mut t, xv);
                t.value(out).data()[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-5, "component {i}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn matmul_hand_example() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let b = t.constant(Tensor::from_rows(&[[1.0], [1.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[[1.5, -2.0], [0.25, 4.0]]));
        let i = t.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c), t.value(a));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(NdError::ShapeMismatch { .. })));
    }

    #[test]
    fn grad_of_sum_matmul_is_ones_times_bt() {
        let bv = Tensor::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.25, -0.75]]);
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [-1.0, 0.5]]));
        let b = t.constant(bv.clone());
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c);
        let g = t.backward(s).unwrap().get(a);
        let expected: Vec<f64> = (0..2).map(|k| bv.row(k).iter().sum()).collect();
        for r in 0..3 {
            assert_eq!(g.row(r), expected.as_slice());
        }
        fd_check(
            |t, x| {
                let b = t.constant(bv.clone());
                let c = t.matmul(x, b).unwrap();
                t.sum(c)
            },
            Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [-1.0, 0.5]]),
        );
    }

    #[test]
    fn elementwise_values() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        let c = t.cos(z);
        let si = t.sin(z);
        assert_eq!(t.value(s).data()[0], 0.5);
        assert_eq!(t.value(c).data()[0], 1.0);
        assert_eq!(t.value(si).data()[0], 0.0);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.backward(s).unwrap().get(z).data()[0], 0.25);
    }

    #[test]
    fn sum_and_square_grads() {
        let x0 = Tensor::from_rows(&[[1.0, -2.0, 3.5]]);
        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let s = t.sum(x);
        assert_eq!(t.backward(s).unwrap().get(x).data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let xx = t.mul(x, x).unwrap();
        let s = t.sum(xx);
        assert_eq!(t.backward(s).unwrap().get(x).data(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(NdError::NotScalar(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones(1, 2));
        let unused = t.leaf(Tensor::ones(3, 1));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert!(g.wrt(unused).is_none());
        assert_eq!(g.get(unused), Tensor::zeros(3, 1));
    }

    #[test]
    fn layer_norm_basic_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 3.0], [5.0, 5.0]]));
        let g = t.constant(Tensor::ones(1, 2));
        let b = t.constant(Tensor::zeros(1, 2));
        let y = t.layer_norm(x, g, b, 1e-300).unwrap();
        assert_eq!(t.value(y).row(0), &[-1.0, 1.0]);
        assert_eq!(t.value(y).row(1), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0, 3.0], [-50.0, 0.0, 50.0]]));
        let y = t.softmax_rows(x);
        for r in 0..2 {
            let row = t.value(y).row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn structural_ops_gradcheck() {
        let x0 = Tensor::from_rows(&[[0.3, -1.2, 0.7], [1.1, 0.4, -0.2], [0.5, 0.9, -0.8]]);
        let w = Tensor::from_rows(&[[0.2, -0.7, 1.3], [0.4, 0.1, -0.9], [1.5, -0.3, 0.6]]);
        fd_check(
            |t, x| {
                let sm = t.softmax_rows(x);
                let tr = t.transpose(sm);
                let cols = t.slice_cols(tr, 1, 3).unwrap();
                let rows = t.slice_rows(x, 0, 2).unwrap();
                let cat = t.concat_cols(&[cols, tr]).unwrap();
                let cat_r = t.concat_rows(&[rows, x]).unwrap();
                let g = t.gather_rows(cat_r, Rc::from(vec![4usize, 0, 0, 2])).unwrap();
                let sc = t.scatter_add_rows(g, Rc::from(vec![1usize, 0, 1, 1]), 3).unwrap();
                let wv = t.constant(w.clone());
                let p = t.mul(sc, wv).unwrap();
                let m = t.segment_mean(p, Rc::from(vec![0usize, 1, 3])).unwrap();
                let s1 = t.sum(m);
                let col = t.sum_cols(cat);
                let s2 = t.sum(col);
                let rs = t.sum_rows(x);
                let rsq = t.square(rs);
                let s3 = t.sum(rsq);
                let a = t.add(s1, s2).unwrap();
                t.add(a, s3).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn broadcast_and_unary_gradcheck() {
        let x0 = Tensor::from_rows(&[[0.3, -1.2], [1.1, 0.4], [0.5, 0.9]]);
        fd_check(
            |t, x| {
                let row = t.slice_rows(x, 0, 1).unwrap();
                let col = t.slice_cols(x, 1, 2).unwrap();
                let a = t.add_row(x, row).unwrap();
                let b = t.mul_row(a, row).unwrap();
                let c = t.mul_col(b, col).unwrap();
                let s = t.sigmoid(c);
                let co = t.cos(s);
                let si = t.sin(x);
                let e = t.exp(si);
                let sh = t.offset(e, 2.0);
                let l = t.log(sh);
                let lr = t.leaky_relu(c, 0.2);
                let d = t.sub(co, l).unwrap();
                let d = t.add(d, lr).unwrap();
                let d = t.scale(d, 0.7);
                let seg = t.segment_softmax(col, Rc::from(vec![0usize, 1, 0]), 2).unwrap();
                let sq = t.square(seg);
                let s1 = t.sum(sq);
                let s2 = t.sum(d);
                t.add(s1, s2).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::column_vector(vec![0.1, 3.0, -2.0, 0.7, 0.7]));
        let y = t
            .segment_softmax(x, Rc::from(vec![0usize, 1, 0, 1, 2]), 3)
            .unwrap();
        let v = t.value(y).data();
        assert!((v[0] + v[2] - 1.0).abs() <= 1e-12);
        assert!((v[1] + v[3] - 1.0).abs() <= 1e-12);
        assert_eq!(v[4], 1.0);
    }

    #[test]
    fn segment_mean_rejects_empty_segment() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(2, 2));
        assert!(matches!(
            t.segment_mean(x, Rc::from(vec![0usize, 0, 2])),
            Err(NdError::EmptySegment(0))
        ));
    }

    #[test]
    fn injected_fault_changes_gradient() {
        let mut t = Tape::new();
        t.inject_fault("sigmoid");
        let z = t.leaf(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.backward(s).unwrap().get(z).data()[0], 0.375);
    }
}
