//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] is an arena: every primitive appends a node holding its forward
//! value and whatever it needs for the adjoint, and hands back a [`Var`]
//! handle. Because nodes can only reference earlier nodes, construction order
//! is already a topological order and [`Tape::backward`] simply walks the
//! arena in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{matmul_into, order_free_sum, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    /// `(offset + s) * x` with `s` a learnable `1 x 1`.
    ScaleBy { x: Var, s: Var, offset: f64 },
    Mul(Var, Var),
    ScaleRows(Var, Vec<f64>),
    Concat { parts: Vec<Var>, axis: usize },
    Gather(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    Relu(Var),
    Abs(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout(Var, Vec<f64>),
    Transpose(Var),
    SumAll(Var),
    PickCols(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated into `v` by [`Tape::backward`], if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data).expect("shape checked")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if self.shape(bias) != (1, cols) {
            return Err(mismatch("add_row", format!("{:?} bias for {cols} columns", self.shape(bias))));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..rows {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| c * x);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `(offset + s) * x` where `s` is a `1 x 1` tensor.
    pub fn scale_by(&mut self, x: Var, s: Var, offset: f64) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(mismatch("scale_by", format!("scalar expected, got {:?}", self.shape(s))));
        }
        let factor = offset + self.value(s).item();
        let value = self.map(x, |v| factor * v);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::ScaleBy { x, s, offset }, rg))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let (rows, _) = self.shape(a);
        if factors.len() != rows {
            return Err(mismatch("scale_rows", format!("{} factors for {rows} rows", factors.len())));
        }
        let mut value = self.value(a).clone();
        for (r, f) in factors.iter().enumerate() {
            for v in value.row_mut(r) {
                *v *= f;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::ScaleRows(a, factors), rg))
    }

    /// Concatenation along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(mismatch("concat", "no inputs".into()));
        }
        let value = match axis {
            0 => {
                let cols = self.shape(parts[0]).1;
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols {
                        return Err(mismatch("concat", format!("{} vs {cols} columns", t.cols())));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::from_vec(rows, cols, data)?
            }
            1 => {
                let rows = self.shape(parts[0]).0;
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != rows {
                        return Err(mismatch("concat", format!("{} vs {rows} rows", t.rows())));
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::from_vec(rows, cols, data)?
            }
            _ => return Err(Error::InvalidAxis(axis)),
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Output row `i` is input row `indices[i]`.
    pub fn row_gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(mismatch("row_gather", format!("row {bad} of {rows}")));
        }
        let value = self.value(a).select_rows(&indices);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Gather(a, indices), rg))
    }

    /// Output row `s` is the sum of the input rows whose id is `s`.
    ///
    /// Each segment is summed in value order, so relabelling the input rows
    /// leaves the result bit-identical.
    pub fn segment_sum(&mut self, a: Var, segment_ids: Vec<usize>, num_segments: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if segment_ids.len() != rows {
            return Err(mismatch("segment_sum", format!("{} ids for {rows} rows", segment_ids.len())));
        }
        if let Some(&id) = segment_ids.iter().find(|&&s| s >= num_segments) {
            return Err(Error::SegmentOutOfRange { id, num_segments });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_segments];
        for (r, &s) in segment_ids.iter().enumerate() {
            members[s].push(r);
        }
        let input = self.value(a);
        let mut value = Tensor::zeros(num_segments, cols);
        let mut scratch = Vec::new();
        for (s, rows_in) in members.iter().enumerate() {
            match rows_in.len() {
                0 => {}
                1 => value.row_mut(s).copy_from_slice(input.row(rows_in[0])),
                _ => {
                    for c in 0..cols {
                        scratch.clear();
                        scratch.extend(rows_in.iter().map(|&r| input.get(r, c)));
                        value.set(s, c, order_free_sum(&mut scratch));
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SegmentSum(a, segment_ids), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        debug_assert!(cols > 0 || value.is_empty());
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::abs);
        let rg = self.rg(a);
        self.push(value, Op::Abs(a), rg)
    }

    /// Row-wise normalisation to zero mean and unit (biased) variance,
    /// followed by a learnable gain and bias (`1 x cols` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != (1, cols) {
                return Err(mismatch("layer_norm", format!("{:?} parameter for {cols} columns", self.shape(p))));
            }
        }
        let input = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Inverted dropout. The mask is drawn from a ChaCha stream seeded by
    /// `seed`, so the same seed always drops the same coordinates.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let value = {
            let t = self.value(a);
            let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::from_vec(t.rows(), t.cols(), data)?
        };
        let rg = self.rg(a);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column `cols[r]` of every row `r`, as an `n x 1` column.
    pub fn pick_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let (rows, width) = self.shape(a);
        if cols.len() != rows {
            return Err(mismatch("pick_cols", format!("{} picks for {rows} rows", cols.len())));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= width) {
            return Err(Error::InvalidClass { class: c, num_classes: width });
        }
        let t = self.value(a);
        let data = cols.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let value = Tensor::from_vec(rows, 1, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::PickCols(a, cols), rg))
    }

    /// Accumulates `d loss / d v` into every node that requires a gradient.
    ///
    /// The tape can be differentiated once; afterwards gradients stay readable
    /// through [`Tape::grad`] but no further backward pass is allowed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Intermediate gradients are kept too; they are cheap at this scale
        // and handy when debugging.
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    // dA = G B^T
                    let bt = tb.transpose();
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, bt.data(), &mut da, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    // dB = A^T G
                    let at = ta.transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), g, &mut db, k, m, n);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, g);
                self.acc_if(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, g);
                if self.rg(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::AddRow(a, bias) => {
                self.acc_if(grads, *a, g);
                if self.rg(*bias) {
                    let cols = out.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g.iter().map(|x| c * x).collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::ScaleBy { x, s, offset } => {
                let factor = offset + self.value(*s).item();
                if self.rg(*x) {
                    let d: Vec<f64> = g.iter().map(|v| factor * v).collect();
                    accumulate(grads, *x, &d);
                }
                if self.rg(*s) {
                    let ds: f64 = g.iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    accumulate(grads, *s, &[ds]);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &d);
                }
                if self.rg(*b) {
                    let d: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::ScaleRows(a, factors) => {
                if self.rg(*a) {
                    let cols = out.cols();
                    let mut d = g.to_vec();
                    for (r, f) in factors.iter().enumerate() {
                        for v in &mut d[r * cols..(r + 1) * cols] {
                            *v *= f;
                        }
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::Concat { parts, axis } => match axis {
                0 => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.rg(p) {
                            accumulate(grads, p, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                _ => {
                    let (rows, cols) = out.shape();
                    let mut col0 = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        if self.rg(p) {
                            let mut d = Vec::with_capacity(rows * pc);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * cols + col0..r * cols + col0 + pc]);
                            }
                            accumulate(grads, p, &d);
                        }
                        col0 += pc;
                    }
                }
            },
            Op::Gather(a, indices) => {
                if self.rg(*a) {
                    let (rows, cols) = self.shape(*a);
                    let mut d = vec![0.0; rows * cols];
                    for (o, &src) in indices.iter().enumerate() {
                        for c in 0..cols {
                            d[src * cols + c] += g[o * cols + c];
                        }
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::SegmentSum(a, ids) => {
                if self.rg(*a) {
                    let cols = out.cols();
                    let mut d = Vec::with_capacity(ids.len() * cols);
                    for &s in ids {
                        d.extend_from_slice(&g[s * cols..(s + 1) * cols]);
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::Softmax(a) => {
                if self.rg(*a) {
                    let cols = out.cols();
                    let mut d = vec![0.0; g.len()];
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            d[r * cols + c] = y[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::LogSoftmax(a) => {
                if self.rg(*a) {
                    let cols = out.cols();
                    let mut d = vec![0.0; g.len()];
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let total: f64 = gr.iter().sum();
                        for c in 0..cols {
                            d[r * cols + c] = gr[c] - libm::exp(y[c]) * total;
                        }
                    }
                    accumulate(grads, *a, &d);
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::Abs(a) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(gv, x)| {
                            if *x > 0.0 {
                                *gv
                            } else if *x < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = out.shape();
                let gv = self.value(*gain).data();
                if self.rg(*x) {
                    let mut d = vec![0.0; rows * cols];
                    let n = cols as f64;
                    for r in 0..rows {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for c in 0..cols {
                            let dxh = gr[c] * gv[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                        }
                        mean_dxh /= n;
                        mean_dxh_xh /= n;
                        for c in 0..cols {
                            let dxh = gr[c] * gv[c];
                            d[r * cols + c] = inv_std[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                    accumulate(grads, *x, &d);
                }
                if self.rg(*gain) {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                    accumulate(grads, *gain, &d);
                }
                if self.rg(*bias) {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += g[r * cols + c];
                        }
                    }
                    accumulate(grads, *bias, &d);
                }
            }
            Op::Dropout(a, mask) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g.iter().zip(mask).map(|(x, m)| x * m).collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let (rows, cols) = out.shape();
                    let gt = Tensor::from_vec(rows, cols, g.to_vec()).expect("grad shape").transpose();
                    accumulate(grads, *a, gt.data());
                }
            }
            Op::SumAll(a) => {
                if self.rg(*a) {
                    let d = vec![g[0]; self.value(*a).len()];
                    accumulate(grads, *a, &d);
                }
            }
            Op::PickCols(a, cols) => {
                if self.rg(*a) {
                    let width = self.shape(*a).1;
                    let mut d = vec![0.0; self.value(*a).len()];
                    for (r, &c) in cols.iter().enumerate() {
                        d[r * width + c] += g[r];
                    }
                    accumulate(grads, *a, &d);
                }
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if self.rg(v) {
            accumulate(grads, v, g);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
