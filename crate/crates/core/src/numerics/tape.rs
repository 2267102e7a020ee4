use std::rc::Rc;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse row pattern (CSR) for attention over closed neighborhoods.
/// Entries of row `i` are `cols[row_ptr[i]..row_ptr[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
}

impl AttentionPattern {
    /// Neighbor lists plus a self-loop per row, columns sorted.
    pub fn with_self_loops(adj: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(adj.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for (i, nb) in adj.iter().enumerate() {
            let start = cols.len();
            cols.extend(nb.iter().copied().filter(|&j| j != i));
            cols.push(i);
            cols[start..].sort_unstable();
            row_ptr.push(cols.len());
        }
        AttentionPattern { row_ptr, cols }
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Row index of every stored entry.
    pub fn row_of_entries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows() {
            out.extend(std::iter::repeat_n(i, self.row_ptr[i + 1] - self.row_ptr[i]));
        }
        out
    }

    /// Dense boolean mask, true where an entry is stored.
    pub fn dense_mask(&self) -> Vec<bool> {
        let n = self.rows();
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for k in self.row_range(i) {
                mask[i * n + self.cols[k]] = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MaskMul(Var, Rc<Vec<f64>>),
    LeakyRelu(Var, f64),
    Relu(Var),
    Elu(Var),
    Exp(Var),
    MaskedRowSoftmax(Var),
    OuterSum(Var, Var),
    EdgeSum(Var, Var, Rc<AttentionPattern>),
    SparseSoftmax(Var, Rc<AttentionPattern>),
    SparseMatMul(Var, Rc<AttentionPattern>, Var),
    Mean(Var),
    MeanRows(Var),
    Concat(Vec<Var>, Axis),
    Pick(Var, usize, usize),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records forward computations so [`Tape::backward`] can replay them in
/// reverse. A tape is single-use: build, differentiate, drop.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> Error {
    Error::Shape { op, lhs, rhs }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape(), data);
        self.push(value, op)
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::new(sa, data), op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// `a` (n x d) plus the row vector `bias` (1 x d) on every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != [1, sa[1]] {
            return Err(shape_err("add_row", sa, sb));
        }
        let b = self.value(bias).data().to_vec();
        let x = self.value(a);
        let data = x
            .data()
            .chunks(sa[1].max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(v, w)| v + w).collect::<Vec<_>>())
            .collect();
        Ok(self.push(Tensor::new(sa, data), Op::AddRow(a, bias)))
    }

    /// `a` plus the 1 x 1 value `s` on every entry.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != [1, 1] {
            return Err(shape_err("add_scalar", self.shape(a), ss));
        }
        let k = self.value(s).item();
        Ok(self.map(a, Op::AddScalar(a, s), |v| v + k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |v| v * k)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, Op::Elu(a), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    /// Multiplies by a fixed mask (e.g. a dropout draw).
    pub fn mask_mul(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let sa = self.shape(a);
        if mask.len() != sa[0] * sa[1] {
            return Err(shape_err("mask_mul", sa, [mask.len(), 1]));
        }
        let data = self.value(a).data().iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        Ok(self.push(Tensor::new(sa, data), Op::MaskMul(a, mask)))
    }

    /// Inverted dropout: entries are zeroed with probability `rate` and the
    /// survivors scaled by `1 / (1 - rate)`. Identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let len = self.value(a).len();
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mask_mul(a, Rc::new(mask)).expect("mask built from the input length")
    }

    /// Softmax along each row restricted to entries where `mask` is true.
    /// Masked entries are exactly 0; a fully masked row is all zeros.
    pub fn row_softmax_masked(&mut self, a: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let sa = self.shape(a);
        if mask.len() != sa[0] * sa[1] {
            return Err(shape_err("row_softmax_masked", sa, [mask.len(), 1]));
        }
        let x = self.value(a);
        let w = sa[1];
        let mut out = vec![0.0; x.len()];
        for r in 0..sa[0] {
            let span = r * w..(r + 1) * w;
            softmax_into(&x.data()[span.clone()], Some(&mask[span.clone()]), &mut out[span]);
        }
        Ok(self.push(Tensor::new(sa, out), Op::MaskedRowSoftmax(a)))
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (n x 1), `b` (m x 1).
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != 1 || sb[1] != 1 {
            return Err(shape_err("outer_sum", sa, sb));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let value = Tensor::from_fn([sa[0], sb[0]], |i, j| x[i] + y[j]);
        Ok(self.push(value, Op::OuterSum(a, b)))
    }

    /// Per stored entry `k = (i, j)` of `pattern`: `src[i] + dst[j]`.
    pub fn edge_sum(&mut self, src: Var, dst: Var, pattern: Rc<AttentionPattern>) -> Result<Var> {
        let (ss, sd) = (self.shape(src), self.shape(dst));
        let n = pattern.rows();
        if ss != [n, 1] || sd != [n, 1] {
            return Err(shape_err("edge_sum", ss, sd));
        }
        let (x, y) = (self.value(src).data(), self.value(dst).data());
        let mut out = Vec::with_capacity(pattern.nnz());
        for i in 0..n {
            for k in pattern.row_range(i) {
                out.push(x[i] + y[pattern.cols[k]]);
            }
        }
        let value = Tensor::new([pattern.nnz(), 1], out);
        Ok(self.push(value, Op::EdgeSum(src, dst, pattern)))
    }

    /// Softmax of stored entries within each row of `pattern`.
    pub fn sparse_softmax(&mut self, e: Var, pattern: Rc<AttentionPattern>) -> Result<Var> {
        let se = self.shape(e);
        if se != [pattern.nnz(), 1] {
            return Err(shape_err("sparse_softmax", se, [pattern.nnz(), 1]));
        }
        let x = self.value(e).data();
        let mut out = vec![0.0; x.len()];
        for i in 0..pattern.rows() {
            let span = pattern.row_range(i);
            softmax_into(&x[span.clone()], None, &mut out[span]);
        }
        let value = Tensor::new(se, out);
        Ok(self.push(value, Op::SparseSoftmax(e, pattern)))
    }

    /// `out[i] = sum over stored (i, j) of weights[k] * x[j]`.
    pub fn sparse_matmul(&mut self, weights: Var, pattern: Rc<AttentionPattern>, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(weights), self.shape(x));
        if sw != [pattern.nnz(), 1] || sx[0] != pattern.rows() {
            return Err(shape_err("sparse_matmul", sw, sx));
        }
        let d = sx[1];
        let (w, xv) = (self.value(weights).data(), self.value(x).data());
        let mut out = vec![0.0; pattern.rows() * d];
        for i in 0..pattern.rows() {
            let orow = &mut out[i * d..(i + 1) * d];
            for k in pattern.row_range(i) {
                let j = pattern.cols[k];
                let a = w[k];
                for (o, v) in orow.iter_mut().zip(&xv[j * d..(j + 1) * d]) {
                    *o += a * v;
                }
            }
        }
        let value = Tensor::new([pattern.rows(), d], out);
        Ok(self.push(value, Op::SparseMatMul(weights, pattern, x)))
    }

    /// Mean of all entries, as a 1 x 1 tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Column means of an n x d tensor, as 1 x d.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let [n, d] = x.shape();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(Tensor::new([1, d], out), Op::MeanRows(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.shape(parts[0]);
        let value = match axis {
            Axis::Cols => {
                let mut width = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s[0] != first[0] {
                        return Err(shape_err("concat", first, s));
                    }
                    width += s[1];
                }
                let mut data = Vec::with_capacity(first[0] * width);
                for r in 0..first[0] {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::new([first[0], width], data)
            }
            Axis::Rows => {
                let mut height = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let s = self.shape(p);
                    if s[1] != first[1] {
                        return Err(shape_err("concat", first, s));
                    }
                    height += s[0];
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new([height, first[1]], data)
            }
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// The single entry `a[r][c]`, as 1 x 1.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = self.value(a).get(r, c);
        self.push(Tensor::scalar(v), Op::Pick(a, r, c))
    }

    /// Mean squared error between same-shaped tensors, as 1 x 1.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(shape_err("mse_loss", sp, st));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target)))
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::filled(self.shape(root), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.rows(), x.cols(), y.cols());
                let ga = acc(grads, *a, x.shape());
                for i in 0..n {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += gd[i * m + j] * y.data()[p * m + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
                let gb = acc(grads, *b, y.shape());
                for i in 0..n {
                    for p in 0..k {
                        let xv = x.data()[i * k + p];
                        if xv == 0.0 {
                            continue;
                        }
                        for j in 0..m {
                            gb[p * m + j] += xv * gd[i * m + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, out.shape()), gd, 1.0);
                add_into(acc(grads, *b, out.shape()), gd, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, out.shape()), gd, 1.0);
                add_into(acc(grads, *b, out.shape()), gd, -1.0);
            }
            Op::AddRow(a, bias) => {
                add_into(acc(grads, *a, out.shape()), gd, 1.0);
                let d = out.cols();
                let gb = acc(grads, *bias, [1, d]);
                for row in gd.chunks(d.max(1)) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            Op::AddScalar(a, s) => {
                add_into(acc(grads, *a, out.shape()), gd, 1.0);
                acc(grads, *s, [1, 1])[0] += gd.iter().sum::<f64>();
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let ga = acc(grads, *a, out.shape());
                for ((o, gv), yv) in ga.iter_mut().zip(gd).zip(y) {
                    *o += gv * yv;
                }
                let gb = acc(grads, *b, out.shape());
                for ((o, gv), xv) in gb.iter_mut().zip(gd).zip(x) {
                    *o += gv * xv;
                }
            }
            Op::Scale(a, k) => add_into(acc(grads, *a, out.shape()), gd, *k),
            Op::MaskMul(a, mask) => {
                let ga = acc(grads, *a, out.shape());
                for ((o, gv), m) in ga.iter_mut().zip(gd).zip(mask.iter()) {
                    *o += gv * m;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, out.shape());
                for ((o, gv), xv) in ga.iter_mut().zip(gd).zip(x) {
                    *o += if *xv > 0.0 { *gv } else { slope * gv };
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, out.shape());
                for ((o, gv), xv) in ga.iter_mut().zip(gd).zip(x) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Elu(a) => {
                let x = self.value(*a).data();
                let ga = acc(grads, *a, out.shape());
                for ((o, gv), xv) in ga.iter_mut().zip(gd).zip(x) {
                    *o += if *xv > 0.0 { *gv } else { gv * xv.exp() };
                }
            }
            Op::Exp(a) => {
                let ga = acc(grads, *a, out.shape());
                for ((o, gv), yv) in ga.iter_mut().zip(gd).zip(out.data()) {
                    *o += gv * yv;
                }
            }
            Op::MaskedRowSoftmax(a) => {
                let w = out.cols();
                let ga = acc(grads, *a, out.shape());
                for r in 0..out.rows() {
                    let span = r * w..(r + 1) * w;
                    softmax_backward(&out.data()[span.clone()], &gd[span.clone()], &mut ga[span]);
                }
            }
            Op::OuterSum(a, b) => {
                let [n, m] = out.shape();
                let ga = acc(grads, *a, [n, 1]);
                for i in 0..n {
                    ga[i] += gd[i * m..(i + 1) * m].iter().sum::<f64>();
                }
                let gb = acc(grads, *b, [m, 1]);
                for i in 0..n {
                    for j in 0..m {
                        gb[j] += gd[i * m + j];
                    }
                }
            }
            Op::EdgeSum(src, dst, pattern) => {
                let n = pattern.rows();
                let gs = acc(grads, *src, [n, 1]);
                for i in 0..n {
                    gs[i] += gd[pattern.row_range(i)].iter().sum::<f64>();
                }
                let gt = acc(grads, *dst, [n, 1]);
                for (k, &j) in pattern.cols.iter().enumerate() {
                    gt[j] += gd[k];
                }
            }
            Op::SparseSoftmax(e, pattern) => {
                let ge = acc(grads, *e, out.shape());
                for i in 0..pattern.rows() {
                    let span = pattern.row_range(i);
                    softmax_backward(&out.data()[span.clone()], &gd[span.clone()], &mut ge[span]);
                }
            }
            Op::SparseMatMul(weights, pattern, x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let wv = self.value(*weights).data();
                let gw = acc(grads, *weights, [pattern.nnz(), 1]);
                for i in 0..pattern.rows() {
                    let grow = &gd[i * d..(i + 1) * d];
                    for k in pattern.row_range(i) {
                        let j = pattern.cols[k];
                        gw[k] += grow.iter().zip(xv.row(j)).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let gx = acc(grads, *x, xv.shape());
                for i in 0..pattern.rows() {
                    for k in pattern.row_range(i) {
                        let j = pattern.cols[k];
                        let a = wv[k];
                        for c in 0..d {
                            gx[j * d + c] += a * gd[i * d + c];
                        }
                    }
                }
            }
            Op::Mean(a) => {
                let s = self.shape(*a);
                let k = gd[0] / (s[0] * s[1]) as f64;
                acc(grads, *a, s).iter_mut().for_each(|o| *o += k);
            }
            Op::MeanRows(a) => {
                let [n, d] = self.shape(*a);
                let ga = acc(grads, *a, [n, d]);
                for r in 0..n {
                    for c in 0..d {
                        ga[r * d + c] += gd[c] / n as f64;
                    }
                }
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Cols => {
                    let width = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let [n, w] = self.shape(p);
                        let gp = acc(grads, p, [n, w]);
                        for r in 0..n {
                            for c in 0..w {
                                gp[r * w + c] += gd[r * width + offset + c];
                            }
                        }
                        offset += w;
                    }
                }
                Axis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let s = self.shape(p);
                        let len = s[0] * s[1];
                        add_into(acc(grads, p, s), &gd[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
            },
            Op::Pick(a, r, c) => {
                let s = self.shape(*a);
                acc(grads, *a, s)[r * s[1] + c] += gd[0];
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let k = 2.0 * gd[0] / pv.len() as f64;
                let s = self.shape(*p);
                let diff: Vec<f64> = pv.iter().zip(tv).map(|(a, b)| k * (a - b)).collect();
                add_into(acc(grads, *p, s), &diff, 1.0);
                add_into(acc(grads, *t, s), &diff, -1.0);
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, shape: [usize; 2]) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn softmax_into(x: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let on = |j: usize| mask.is_none_or(|m| m[j]);
    let max = (0..x.len()).filter(|&j| on(j)).map(|j| x[j]).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut sum = 0.0;
    for j in 0..x.len() {
        out[j] = if on(j) { (x[j] - max).exp() } else { 0.0 };
        sum += out[j];
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

// masked entries have y = 0, so they receive no gradient
fn softmax_backward(y: &[f64], g: &[f64], dst: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for j in 0..y.len() {
        dst[j] += y[j] * (g[j] - dot);
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not affect the root.
    pub fn wrt(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn masked_softmax_uniform_over_unmasked() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::filled([2, 5], 0.7));
        let mask = vec![
            true, false, true, true, false, //
            false, false, false, false, false,
        ];
        let y = t.row_softmax_masked(x, Rc::new(mask)).unwrap();
        let v = t.value(y);
        assert_eq!(v.row(0), &[1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(v.row(1), &[0.0; 5]);
    }

    #[test]
    fn masked_entries_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let x = t.leaf(rand_tensor([3, 4], &mut rng));
        let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
        let y = t.row_softmax_masked(x, Rc::new(mask.clone())).unwrap();
        let w = t.leaf(rand_tensor([3, 4], &mut rng));
        let z = t.mul(y, w).unwrap();
        let loss = t.mean(z);
        let g = t.backward(loss);
        let gx = g.get(x).unwrap();
        for (i, m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(gx.data()[i], 0.0);
            }
        }
        for r in 0..3 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_of_identical_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new([2, 2], vec![1.0, -2.0, 3.0, 0.5]));
        let loss = t.mse_loss(x, x).unwrap();
        assert_eq!(t.value(loss).item(), 0.0);
        let g = t.backward(loss);
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros([3, 4]));
        let b = t.leaf(Tensor::zeros([3, 2]));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
        assert!(t.add(a, b).is_err());
        assert!(t.mse_loss(a, b).is_err());
        assert!(t.add_row(a, b).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![rand_tensor([3, 4], &mut rng), rand_tensor([4, 2], &mut rng)];
        let target = rand_tensor([3, 2], &mut rng);
        let err = grad_check(
            |t, p| {
                let y = t.matmul(p[0], p[1]).unwrap();
                let tt = t.leaf(target.clone());
                t.mse_loss(y, tt).unwrap()
            },
            &params,
            1e-5,
        );
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let adj = vec![vec![1, 2], vec![0], vec![0, 3], vec![2]];
            let pattern = Rc::new(AttentionPattern::with_self_loops(&adj));
            let dense_mask = Rc::new(pattern.dense_mask());
            let drop = Rc::new((0..12).map(|i| if i % 4 == 0 { 0.0 } else { 1.25 }).collect::<Vec<_>>());
            let params = vec![
                rand_tensor([4, 3], &mut rng),
                rand_tensor([3, 1], &mut rng),
                rand_tensor([3, 1], &mut rng),
                rand_tensor([1, 3], &mut rng),
                rand_tensor([4, 3], &mut rng),
            ];
            let err = grad_check(
                |t, p| {
                    let h = t.add_row(p[0], p[3]).unwrap();
                    let h = t.mask_mul(h, drop.clone()).unwrap();
                    let s = t.matmul(h, p[1]).unwrap();
                    let d = t.matmul(h, p[2]).unwrap();
                    // sparse attention route
                    let e = t.edge_sum(s, d, pattern.clone()).unwrap();
                    let e = t.leaky_relu(e, 0.2);
                    let a = t.sparse_softmax(e, pattern.clone()).unwrap();
                    let out1 = t.sparse_matmul(a, pattern.clone(), h).unwrap();
                    // dense masked route
                    let dense = t.outer_sum(s, d).unwrap();
                    let dense = t.exp(dense);
                    let a2 = t.row_softmax_masked(dense, dense_mask.clone()).unwrap();
                    let out2 = t.matmul(a2, h).unwrap();
                    let both = t.concat(&[out1, out2], Axis::Cols).unwrap();
                    let both = t.elu(both);
                    let pooled = t.mean_rows(both);
                    let first = t.pick(pooled, 0, 1);
                    let shifted = t.add_scalar(both, first).unwrap();
                    let r = t.relu(shifted);
                    let sq = t.mul(r, r).unwrap();
                    let diff = t.sub(sq, both).unwrap();
                    let scaled = t.scale(diff, 0.5);
                    let stacked = t.concat(&[scaled, p[4], p[4]], Axis::Cols).unwrap();
                    let top = t.concat(&[stacked, stacked], Axis::Rows).unwrap();
                    let zero = t.leaf(Tensor::zeros([8, 12]));
                    let l1 = t.mse_loss(top, zero).unwrap();
                    let l2 = t.mean(out2);
                    let sum = t.add(l1, l2).unwrap();
                    t.add(sum, first).unwrap()
                },
                &params,
                1e-5,
            );
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn sparse_and_dense_attention_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let adj = vec![vec![1, 2], vec![0], vec![0, 3], vec![2], vec![]];
        let pattern = Rc::new(AttentionPattern::with_self_loops(&adj));
        let mut t = Tape::new();
        let s = t.leaf(rand_tensor([5, 1], &mut rng));
        let d = t.leaf(rand_tensor([5, 1], &mut rng));
        let h = t.leaf(rand_tensor([5, 3], &mut rng));
        let e = t.edge_sum(s, d, pattern.clone()).unwrap();
        let a = t.sparse_softmax(e, pattern.clone()).unwrap();
        let sparse = t.sparse_matmul(a, pattern.clone(), h).unwrap();
        let dense = t.outer_sum(s, d).unwrap();
        let a2 = t.row_softmax_masked(dense, Rc::new(pattern.dense_mask())).unwrap();
        let dense = t.matmul(a2, h).unwrap();
        assert!(t.value(sparse).max_abs_diff(t.value(dense)) < 1e-14);
        // isolated node attends only to itself
        assert_eq!(t.value(sparse).row(4), t.value(h).row(4));
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::filled([2, 2], 3.0));
        assert_eq!(t.dropout(x, 0.0, &mut rng), x);
        let y = t.dropout(x, 0.5, &mut rng);
        assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 6.0));
    }
}
