//! Dense row-major matrices and a small reverse-mode autodiff tape.
//!
//! Only the operations the toy encoder and heads need are provided. A
//! [`Graph`] records one forward pass; [`Graph::backward`] takes upstream
//! gradients for any set of output nodes, so losses can be computed outside
//! the tape and their gradients injected.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shapes {:?} x {:?}", self.shape(), other.shape());
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shapes {:?} x {:?}^T", self.shape(), other.shape());
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self^T * other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shapes {:?}^T x {:?}", self.shape(), other.shape());
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bj) in orow.iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, x) in out.data.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm(Var, Vec<f64>),
    MeanRows(Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((1, self.value(x).cols), r.shape(), "add_row shape");
        let mut v = self.value(x).clone();
        for i in 0..v.rows {
            for (o, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(x, row))
    }

    /// Multiplies every row of `x` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((1, self.value(x).cols), r.shape(), "mul_row shape");
        let mut v = self.value(x).clone();
        for i in 0..v.rows {
            for (o, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        self.push(v, Op::MulRow(x, row))
    }

    /// `x * W + b` with `b` a row vector.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scaled(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let v = Matrix { rows: src.rows, cols: src.cols, data: src.data.iter().map(|&a| a.max(0.0)).collect() };
        self.push(v, Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let v = Matrix { rows: src.rows, cols: src.cols, data: src.data.iter().map(|&a| gelu(a).0).collect() };
        self.push(v, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for i in 0..v.rows {
            softmax_in_place(v.row_mut(i));
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let n = v.cols as f64;
        let mut inv_std = Vec::with_capacity(v.rows);
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for a in row.iter_mut() {
                *a = (*a - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(v, Op::LayerNorm(x, inv_std))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let v = src.col_sums().scaled(1.0 / src.rows as f64);
        self.push(v, Op::MeanRows(x))
    }

    /// Rows `ids` of `table`, in order (repeats allowed).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(v, Op::Gather(table, ids.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let src = self.value(x);
        assert!(start < end && end <= src.cols);
        let mut v = Matrix::zeros(src.rows, end - start);
        for i in 0..src.rows {
            v.row_mut(i).copy_from_slice(&src.row(i)[start..end]);
        }
        self.push(v, Op::SliceCols(x, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows);
            for i in 0..rows {
                v.row_mut(i)[offset..offset + m.cols].copy_from_slice(m.row(i));
            }
            offset += m.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Back-propagates the given upstream gradients. Seeds for the same node
    /// are summed.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let Some(top) = seeds.iter().map(|(v, _)| v.0).max() else {
            return Gradients { grads };
        };
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape");
            accumulate(&mut grads, *v, g.clone());
        }
        for i in (0..=top).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, g.col_sums());
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::MulRow(x, row) => {
                    let xv = self.value(*x);
                    let rv = self.value(*row);
                    let mut dx = g.clone();
                    let mut dr = Matrix::zeros(1, rv.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            dx.data[r * g.cols + c] *= rv.data[c];
                            dr.data[c] += g.data[r * g.cols + c] * xv.data[r * g.cols + c];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *row, dr);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scaled(*s)),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    for (d, &a) in dx.data.iter_mut().zip(&xv.data) {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    for (d, &a) in dx.data.iter_mut().zip(&xv.data) {
                        *d *= gelu(a).1;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = yi * (gi - inner);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm(x, inv_std) => {
                    let y = &node.value;
                    let n = y.cols as f64;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = dot(gr, yr) / n;
                        for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = inv_std[r] * (gi - mean_g - yi * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let rows = self.value(*x).rows;
                    let mut dx = Matrix::zeros(rows, g.cols);
                    let s = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (d, &gi) in dx.row_mut(r).iter_mut().zip(&g.data) {
                            *d = gi * s;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, &gi) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *d += gi;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::SliceCols(x, start) => {
                    let src = self.value(*x);
                    let mut dx = Matrix::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        dx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut dp = Matrix::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, dp);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for a in row.iter_mut() {
        *a = (*a - max).exp();
        sum += *a;
    }
    for a in row.iter_mut() {
        *a /= sum;
    }
}

/// GELU value and derivative at `x`.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044_715 * x * x);
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.rows, like.cols))
    }
}
