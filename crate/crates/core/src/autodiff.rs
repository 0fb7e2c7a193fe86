//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! The tape covers exactly the primitives the training loss needs: dense
//! affine algebra for the networks, elementwise nonlinearities, the batched
//! outer products of the signature recursion, and scalar reductions.  Values
//! are plain `f64` buffers; shapes are scalars, vectors, or row-major
//! matrices.  Brownian increments, neighborhood paths and other data enter as
//! constants and receive no adjoints.
//!
//! Reductions and kernels use fixed accumulation orders, so identical tapes
//! produce bitwise-identical gradients.

use crate::error::{Error, Result};

/// Shape of a tape value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    /// rows x cols, row-major.
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    shape: Shape,
}

impl Var {
    pub fn shape(&self) -> Shape {
        self.shape
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input (parameters).
    Leaf,
    /// Non-differentiable input (data, noise); receives no adjoint.
    Const,
    Add(usize, usize),
    /// Matrix plus row-broadcast vector.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScalarMul(usize, f64),
    MatVec(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Tanh(usize),
    Relu(usize),
    Concat(Vec<usize>),
    /// (input, start, len) in flat elements for vectors, in columns for matrices.
    Slice(usize, usize, usize),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Sqrt(usize),
    /// Row-wise truncated tensor (outer) product; vectors are single rows.
    Outer(usize, usize),
}

struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoint buffers keyed by node id, produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Total derivative of the loss w.r.t. the given node, if it was reached.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.adj[var.id].as_deref()
    }

    /// Like [`Gradients::get`] but materializes zeros for unreached nodes.
    pub fn get_or_zero(&self, var: Var) -> Vec<f64> {
        self.adj[var.id].clone().unwrap_or_else(|| vec![0.0; var.shape.len()])
    }
}

// ---- fixed-order dense kernels ----------------------------------------

/// Unrolled dot product with eight independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ao = &a[c * 8..c * 8 + 8];
        let bo = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += ao[l] * bo[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for l in chunks * 8..a.len() {
        s += a[l] * b[l];
    }
    s
}

/// `out += A (m x k) * B (k x n)`.
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// `out += A (m x k) * B^T`, with `B` stored as `(n x k)`.
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            crow[j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += A^T * G`, with `A` stored as `(m x k)` and `G` as `(m x n)`.
fn mm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for l in 0..m {
        let arow = &a[l * k..(l + 1) * k];
        let grow = &g[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut out[i * n..(i + 1) * n];
            for (c, &gv) in crow.iter_mut().zip(grow) {
                *c += av * gv;
            }
        }
    }
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

    /// Forward value of a node.
    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.id].value
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), shape.len());
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape, value });
        Var { id, shape }
    }

    fn checked(&self, values: Vec<f64>, shape: Shape, what: &str) -> Result<Vec<f64>> {
        if values.len() != shape.len() {
            return Err(Error::input(format!(
                "{what}: buffer length {} does not match shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(values)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, values: Vec<f64>, shape: Shape) -> Result<Var> {
        let v = self.checked(values, shape, "leaf")?;
        Ok(self.push(Op::Leaf, shape, v))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, values: Vec<f64>, shape: Shape) -> Result<Var> {
        let v = self.checked(values, shape, "constant")?;
        Ok(self.push(Op::Const, shape, v))
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.push(Op::Const, Shape::Scalar, vec![value])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if a.shape != b.shape {
            return Err(Error::input(format!("{what}: shape {:?} vs {:?}", a.shape, b.shape)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a.id, b.id), a.shape, v))
    }

    /// `matrix + row`, broadcasting the vector over every row.
    pub fn add_row(&mut self, mat: Var, row: Var) -> Result<Var> {
        let (r, c) = match (mat.shape, row.shape) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if n == c => (r, c),
            _ => {
                return Err(Error::input(format!(
                    "add_row: shape {:?} vs {:?}",
                    mat.shape, row.shape
                )))
            }
        };
        let m = &self.nodes[mat.id].value;
        let b = &self.nodes[row.id].value;
        let mut v = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                v.push(m[i * c + j] + b[j]);
            }
        }
        Ok(self.push(Op::AddRow(mat.id, row.id), mat.shape, v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a.id, b.id), a.shape, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a.id, b.id), a.shape, v))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.id].value.iter().map(|x| x * c).collect();
        self.push(Op::ScalarMul(a.id, c), a.shape, v)
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (r, c) = match (a.shape, x.shape) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if n == c => (r, c),
            _ => {
                return Err(Error::input(format!(
                    "matvec: shape {:?} vs {:?}",
                    a.shape, x.shape
                )))
            }
        };
        let av = &self.nodes[a.id].value;
        let xv = &self.nodes[x.id].value;
        let v: Vec<f64> = (0..r).map(|i| dot(&av[i * c..(i + 1) * c], xv)).collect();
        Ok(self.push(Op::MatVec(a.id, x.id), Shape::Vector(r), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = match (a.shape, b.shape) {
            (Shape::Matrix(m, k1), Shape::Matrix(k2, n)) if k1 == k2 => (m, k1, n),
            _ => {
                return Err(Error::input(format!(
                    "matmul: shape {:?} vs {:?}",
                    a.shape, b.shape
                )))
            }
        };
        let mut v = vec![0.0; m * n];
        mm_nn(&self.nodes[a.id].value, &self.nodes[b.id].value, m, k, n, &mut v);
        Ok(self.push(Op::MatMul(a.id, b.id), Shape::Matrix(m, n), v))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = match a.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => return Err(Error::input("transpose: matrix input required")),
        };
        let av = &self.nodes[a.id].value;
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                v[j * r + i] = av[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose(a.id), Shape::Matrix(c, r), v))
    }

    /// Length-preserving shape change.
    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        if shape.len() != a.shape.len() {
            return Err(Error::input(format!(
                "reshape: {:?} has {} elements, target {:?} has {}",
                a.shape,
                a.shape.len(),
                shape,
                shape.len()
            )));
        }
        let v = self.nodes[a.id].value.clone();
        Ok(self.push(Op::Reshape(a.id), shape, v))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.id].value.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a.id), a.shape, v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.id].value.iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a.id), a.shape, v)
    }

    /// Concatenate vectors end-to-end, or matrices with equal row counts by
    /// columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::input("concat of nothing"));
        }
        match parts[0].shape {
            Shape::Vector(_) | Shape::Scalar => {
                let mut v = Vec::new();
                for p in parts {
                    if matches!(p.shape, Shape::Matrix(..)) {
                        return Err(Error::input("concat: mixed vector/matrix parts"));
                    }
                    v.extend_from_slice(&self.nodes[p.id].value);
                }
                let shape = Shape::Vector(v.len());
                Ok(self.push(Op::Concat(parts.iter().map(|p| p.id).collect()), shape, v))
            }
            Shape::Matrix(rows, _) => {
                let mut total_cols = 0;
                for p in parts {
                    match p.shape {
                        Shape::Matrix(r, c) if r == rows => total_cols += c,
                        _ => return Err(Error::input("concat: matrix parts must share rows")),
                    }
                }
                let mut v = vec![0.0; rows * total_cols];
                let mut col_off = 0;
                for p in parts {
                    let c = match p.shape {
                        Shape::Matrix(_, c) => c,
                        _ => unreachable!(),
                    };
                    let pv = &self.nodes[p.id].value;
                    for i in 0..rows {
                        v[i * total_cols + col_off..i * total_cols + col_off + c]
                            .copy_from_slice(&pv[i * c..(i + 1) * c]);
                    }
                    col_off += c;
                }
                let shape = Shape::Matrix(rows, total_cols);
                Ok(self.push(Op::Concat(parts.iter().map(|p| p.id).collect()), shape, v))
            }
        }
    }

    /// Contiguous slice: elements `start..start+len` of a vector, or columns
    /// `start..start+len` of a matrix.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        match a.shape {
            Shape::Vector(n) => {
                if start + len > n {
                    return Err(Error::input("slice out of range"));
                }
                let v = self.nodes[a.id].value[start..start + len].to_vec();
                Ok(self.push(Op::Slice(a.id, start, len), Shape::Vector(len), v))
            }
            Shape::Matrix(r, c) => {
                if start + len > c {
                    return Err(Error::input("slice out of range"));
                }
                let av = &self.nodes[a.id].value;
                let mut v = Vec::with_capacity(r * len);
                for i in 0..r {
                    v.extend_from_slice(&av[i * c + start..i * c + start + len]);
                }
                Ok(self.push(Op::Slice(a.id, start, len), Shape::Matrix(r, len), v))
            }
            Shape::Scalar => Err(Error::input("slice of a scalar")),
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.id].value.iter().sum();
        self.push(Op::Sum(a.id), Shape::Scalar, vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = a.shape.len() as f64;
        let s: f64 = self.nodes[a.id].value.iter().sum();
        self.push(Op::Mean(a.id), Shape::Scalar, vec![s / n])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.nodes[a.id].value.iter().map(|x| x * x).collect();
        self.push(Op::Square(a.id), a.shape, v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.id].value.iter().map(|x| x.sqrt()).collect();
        self.push(Op::Sqrt(a.id), a.shape, v)
    }

    /// Truncated tensor product of the flattened blocks: for vectors,
    /// `out[i*q + j] = a[i] * b[j]`; for matrices the same per row.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        match (a.shape, b.shape) {
            (Shape::Vector(p), Shape::Vector(q)) => {
                let av = &self.nodes[a.id].value;
                let bv = &self.nodes[b.id].value;
                let mut v = Vec::with_capacity(p * q);
                for &x in av.iter() {
                    for &y in bv.iter() {
                        v.push(x * y);
                    }
                }
                Ok(self.push(Op::Outer(a.id, b.id), Shape::Vector(p * q), v))
            }
            (Shape::Matrix(r1, p), Shape::Matrix(r2, q)) if r1 == r2 => {
                let av = &self.nodes[a.id].value;
                let bv = &self.nodes[b.id].value;
                let mut v = vec![0.0; r1 * p * q];
                for i in 0..r1 {
                    let arow = &av[i * p..(i + 1) * p];
                    let brow = &bv[i * q..(i + 1) * q];
                    let orow = &mut v[i * p * q..(i + 1) * p * q];
                    for (ii, &x) in arow.iter().enumerate() {
                        let dst = &mut orow[ii * q..(ii + 1) * q];
                        for (d, &y) in dst.iter_mut().zip(brow) {
                            *d = x * y;
                        }
                    }
                }
                Ok(self.push(Op::Outer(a.id, b.id), Shape::Matrix(r1, p * q), v))
            }
            _ => Err(Error::input(format!(
                "outer: shape {:?} vs {:?}",
                a.shape, b.shape
            ))),
        }
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    /// Reverse sweep from a scalar loss; every node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape != Shape::Scalar {
            return Err(Error::input("backward: loss must be scalar"));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn grad_buf<'a>(
        &self,
        adj: &'a mut [Option<Vec<f64>>],
        id: usize,
    ) -> Option<&'a mut Vec<f64>> {
        // constants absorb no adjoint
        if matches!(self.nodes[id].op, Op::Const) {
            return None;
        }
        Some(adj[id].get_or_insert_with(|| vec![0.0; self.nodes[id].shape.len()]))
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                if let Some(da) = self.grad_buf(adj, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.grad_buf(adj, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::AddRow(m, r) => {
                if let Some(dm) = self.grad_buf(adj, *m) {
                    for (d, &gv) in dm.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                let cols = match self.nodes[*r].shape {
                    Shape::Vector(n) => n,
                    _ => unreachable!(),
                };
                if let Some(dr) = self.grad_buf(adj, *r) {
                    for (i, &gv) in g.iter().enumerate() {
                        dr[i % cols] += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.grad_buf(adj, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.grad_buf(adj, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if let Some(da) = self.grad_buf(adj, a) {
                    let bv = &self.nodes[b].value;
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if let Some(db) = self.grad_buf(adj, b) {
                    let av = &self.nodes[a].value;
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::ScalarMul(a, c) => {
                let c = *c;
                if let Some(da) = self.grad_buf(adj, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                }
            }
            Op::MatVec(a, x) => {
                let (a, x) = (*a, *x);
                let (r, c) = match self.nodes[a].shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                if let Some(da) = self.grad_buf(adj, a) {
                    let xv = &self.nodes[x].value;
                    for i in 0..r {
                        let gi = g[i];
                        let row = &mut da[i * c..(i + 1) * c];
                        for (d, &xvj) in row.iter_mut().zip(xv) {
                            *d += gi * xvj;
                        }
                    }
                }
                if let Some(dx) = self.grad_buf(adj, x) {
                    let av = &self.nodes[a].value;
                    for i in 0..r {
                        let gi = g[i];
                        let row = &av[i * c..(i + 1) * c];
                        for (d, &avj) in dx.iter_mut().zip(row) {
                            *d += gi * avj;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = match self.nodes[a].shape {
                    Shape::Matrix(m, k) => (m, k),
                    _ => unreachable!(),
                };
                let n = match self.nodes[b].shape {
                    Shape::Matrix(_, n) => n,
                    _ => unreachable!(),
                };
                if let Some(da) = self.grad_buf(adj, a) {
                    mm_nt(g, &self.nodes[b].value, m, n, k, da);
                }
                if let Some(db) = self.grad_buf(adj, b) {
                    mm_tn(&self.nodes[a].value, g, m, k, n, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = match self.nodes[*a].shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                if let Some(da) = self.grad_buf(adj, *a) {
                    for i in 0..c {
                        for j in 0..r {
                            da[j * c + i] += g[i * r + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = self.grad_buf(adj, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                if let Some(da) = self.grad_buf(adj, *a) {
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                if let Some(da) = self.grad_buf(adj, *a) {
                    for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Concat(parts) => match self.nodes[id].shape {
                Shape::Vector(_) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].shape.len();
                        if let Some(dp) = self.grad_buf(adj, p) {
                            for (d, &gv) in dp.iter_mut().zip(&g[off..off + len]) {
                                *d += gv;
                            }
                        }
                        off += len;
                    }
                }
                Shape::Matrix(rows, total_cols) => {
                    let mut col_off = 0;
                    for &p in parts {
                        let c = match self.nodes[p].shape {
                            Shape::Matrix(_, c) => c,
                            _ => unreachable!(),
                        };
                        if let Some(dp) = self.grad_buf(adj, p) {
                            for i in 0..rows {
                                let src = &g[i * total_cols + col_off..i * total_cols + col_off + c];
                                let dst = &mut dp[i * c..(i + 1) * c];
                                for (d, &gv) in dst.iter_mut().zip(src) {
                                    *d += gv;
                                }
                            }
                        }
                        col_off += c;
                    }
                }
                Shape::Scalar => unreachable!(),
            },
            Op::Slice(a, start, len) => {
                let (start, len) = (*start, *len);
                match self.nodes[*a].shape {
                    Shape::Vector(_) => {
                        if let Some(da) = self.grad_buf(adj, *a) {
                            for (d, &gv) in da[start..start + len].iter_mut().zip(g) {
                                *d += gv;
                            }
                        }
                    }
                    Shape::Matrix(r, c) => {
                        if let Some(da) = self.grad_buf(adj, *a) {
                            for i in 0..r {
                                let dst = &mut da[i * c + start..i * c + start + len];
                                let src = &g[i * len..(i + 1) * len];
                                for (d, &gv) in dst.iter_mut().zip(src) {
                                    *d += gv;
                                }
                            }
                        }
                    }
                    Shape::Scalar => unreachable!(),
                }
            }
            Op::Sum(a) => {
                if let Some(da) = self.grad_buf(adj, *a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].shape.len() as f64;
                if let Some(da) = self.grad_buf(adj, *a) {
                    let gv = g[0] / n;
                    for d in da.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::Square(a) => {
                let x = &self.nodes[*a].value;
                if let Some(da) = self.grad_buf(adj, *a) {
                    for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                        *d += gv * 2.0 * xv;
                    }
                }
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[id].value;
                if let Some(da) = self.grad_buf(adj, *a) {
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d += gv * 0.5 / yv;
                    }
                }
            }
            Op::Outer(a, b) => {
                let (a, b) = (*a, *b);
                match (self.nodes[a].shape, self.nodes[b].shape) {
                    (Shape::Vector(p), Shape::Vector(q)) => {
                        if let Some(da) = self.grad_buf(adj, a) {
                            let bv = &self.nodes[b].value;
                            for i in 0..p {
                                da[i] += dot(&g[i * q..(i + 1) * q], bv);
                            }
                        }
                        if let Some(db) = self.grad_buf(adj, b) {
                            let av = &self.nodes[a].value;
                            for (i, &x) in av.iter().enumerate() {
                                let grow = &g[i * q..(i + 1) * q];
                                for (d, &gv) in db.iter_mut().zip(grow) {
                                    *d += x * gv;
                                }
                            }
                        }
                    }
                    (Shape::Matrix(rows, p), Shape::Matrix(_, q)) => {
                        if let Some(da) = self.grad_buf(adj, a) {
                            let bv = &self.nodes[b].value;
                            for r in 0..rows {
                                let grow = &g[r * p * q..(r + 1) * p * q];
                                let brow = &bv[r * q..(r + 1) * q];
                                let darow = &mut da[r * p..(r + 1) * p];
                                for i in 0..p {
                                    darow[i] += dot(&grow[i * q..(i + 1) * q], brow);
                                }
                            }
                        }
                        if let Some(db) = self.grad_buf(adj, b) {
                            let av = &self.nodes[a].value;
                            for r in 0..rows {
                                let grow = &g[r * p * q..(r + 1) * p * q];
                                let arow = &av[r * p..(r + 1) * p];
                                let dbrow = &mut db[r * q..(r + 1) * q];
                                for (i, &x) in arow.iter().enumerate() {
                                    let gseg = &grow[i * q..(i + 1) * q];
                                    for (d, &gv) in dbrow.iter_mut().zip(gseg) {
                                        *d += x * gv;
                                    }
                                }
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
}

/// Compare analytic gradients of a recorded scalar function against central
/// finite differences; returns the max over coordinates of
/// `|analytic - fd| / max(1, |analytic|)`.
pub fn gradient_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::input("gradient_check: step must be positive"));
    }
    let eval = |p: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.to_vec(), Shape::Vector(p.len()))?;
        let y = f(&mut tape, x)?;
        if y.shape != Shape::Scalar {
            return Err(Error::input("gradient_check: function must be scalar-valued"));
        }
        let v = tape.value(y)[0];
        if !v.is_finite() {
            return Err(Error::numeric("gradient_check: non-finite forward value"));
        }
        Ok(v)
    };
    let mut tape = Tape::new();
    let x = tape.leaf(point.to_vec(), Shape::Vector(point.len()))?;
    let y = f(&mut tape, x)?;
    if y.shape != Shape::Scalar {
        return Err(Error::input("gradient_check: function must be scalar-valued"));
    }
    if !tape.value(y)[0].is_finite() {
        return Err(Error::numeric("gradient_check: non-finite forward value"));
    }
    let grads = tape.backward(y)?;
    let analytic = grads.get_or_zero(x);
    let mut max_rel = 0.0f64;
    let mut p = point.to_vec();
    for i in 0..point.len() {
        let orig = p[i];
        p[i] = orig + step;
        let fp = eval(&p)?;
        p[i] = orig - step;
        let fm = eval(&p)?;
        p[i] = orig;
        let fd = (fp - fm) / (2.0 * step);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
